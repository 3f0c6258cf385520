#pragma once

// Scenario files and the line-delimited trace, solution and report formats.
// All documents are JSON with a fixed key order so equal inputs serialize to
// equal bytes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bbmech/dynamics.hpp"
#include "bbmech/market.hpp"
#include "bbmech/oracle.hpp"
#include "bbmech/verification.hpp"

namespace bbmech {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kToolName = "bbmech";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// Malformed or inconsistent input document. `where` is a JSON path.
class FormatError : public std::invalid_argument {
 public:
  FormatError(const std::string& where, const std::string& what);
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

/// Check families understood by the verifier, in report order.
const std::vector<std::string>& check_families();

struct Units {
  std::string quantity = "unit";
  std::string currency = "money";
};

struct Outputs {
  std::string trace;
  std::string solution;
  std::string report;
};

struct Scenario {
  std::string name;
  Units units;
  InstanceConfig instance;
  std::size_t min_participants = 3;
  /// nullopt selects the library default 1e3 * max c * M.
  std::optional<double> gamma;
  DynamicsConfig dynamics;  // dynamics.gamma is ignored; see resolved_config
  OracleConfig oracle;
  std::vector<std::string> checks = check_families();
  Outputs outputs;
};

Scenario parse_scenario(const Json& doc);
Scenario parse_scenario_text(std::string_view text);
/// Throws FormatError for unreadable files as well as malformed content.
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical form: every field explicit, fixed key order.
Json to_json(const Scenario& scenario);
Json instance_to_json(const InstanceConfig& config, std::size_t min_participants);
InstanceConfig instance_from_json(const Json& doc, std::size_t* min_participants = nullptr);

MarketInstance build_instance(const Scenario& scenario);
/// Dynamics configuration with gamma resolved against the instance.
DynamicsConfig resolved_config(const Scenario& scenario, const MarketInstance& instance);

std::string sha256_hex(std::string_view bytes);
std::string scenario_hash(const Scenario& scenario);
std::string instance_hash(const Scenario& scenario);

/// Provenance block embedded in every output file.
struct Provenance {
  std::string tool = std::string(kToolName);
  std::string version = std::string(kToolVersion);
  std::string scenario_hash;
  std::string instance_hash;
  std::uint64_t seed = 0;
  Json config;    // effective configuration of the producing command
  Json scenario;  // canonical scenario
};

Provenance make_provenance(const Scenario& scenario, const Json& config);
Json to_json(const Provenance& p);
Provenance provenance_from_json(const Json& doc);

Json dynamics_to_json(const MarketInstance& instance, const DynamicsConfig& config);
Json oracle_config_to_json(const OracleConfig& config);

// --- trace -------------------------------------------------------------------

Json record_to_json(const MarketInstance& instance, const TraceRecord& record);
TraceRecord record_from_json(const MarketInstance& instance, const Json& doc);

Json state_to_json(const MarketInstance& instance, const MechanismState& state);
MechanismState state_from_json(const MarketInstance& instance, const Json& doc);

/// Streams a trace: header line, one line per round, summary line.
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const MarketInstance& instance, const Provenance& provenance);
  void write(const TraceRecord& record);
  void finish(const Trace& trace);

 private:
  std::ostream& out_;
  const MarketInstance& instance_;
  std::size_t rounds_ = 0;
};

struct TraceFile {
  Provenance provenance;
  Scenario scenario;
  MarketInstance instance;
  DynamicsConfig config;
  std::vector<TraceRecord> records;
  MechanismState terminal;
  Termination reason = Termination::RoundCap;
};

/// Rebuilds the instance from the embedded scenario and checks the embedded
/// hashes against it.
TraceFile read_trace(std::istream& in);
TraceFile read_trace(const std::filesystem::path& path);

// --- solution and report -----------------------------------------------------

Json solution_to_json(const MarketInstance& instance, const OracleSolution& solution, const Provenance& provenance);

struct SolutionFile {
  Provenance provenance;
  OracleSolution solution;
};

SolutionFile read_solution(const MarketInstance& instance, const Json& doc);
SolutionFile read_solution(const MarketInstance& instance, const std::filesystem::path& path);

Json report_to_json(const VerificationReport& report, const Provenance& provenance);

Json read_json_file(const std::filesystem::path& path);

}  // namespace bbmech

#pragma once

// Command implementations behind the bbmech executable. Each returns a
// process exit code and writes diagnostics to `log`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bbmech/io.hpp"

namespace bbmech {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInvalidInput = 2,
  kExitSolverFailure = 3,
};

/// Command-line overrides applied to a scenario before it is hashed.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_rounds;
  std::optional<std::string> theta;
  std::optional<std::string> gamma;  // number or "default"
  std::optional<double> epsilon;
  std::optional<double> tol;  // stationarity tolerance for run, KKT tolerance for oracle
};

enum class Verb { Run, Oracle };

/// Throws FormatError on an invalid override value.
void apply_overrides(Scenario& scenario, const Overrides& overrides, Verb verb);

int cmd_run(const Scenario& scenario, std::ostream& trace_out, std::ostream& log);
int cmd_oracle(const Scenario& scenario, std::ostream& solution_out, std::ostream& log);

struct VerifyOptions {
  std::vector<std::string> checks;  // empty: the trace scenario's selection
  double tol = 1e-2;                // convergence tolerance
};

/// Runs the selected check families on a parsed trace and optional solution.
VerificationReport verify_suite(const TraceFile& trace, const OracleSolution* solution,
                                const std::vector<std::string>& families, double convergence_tol);

/// Reads the trace and optional solution, verifies, writes the report.
int cmd_verify(const std::filesystem::path& trace_path, const std::optional<std::filesystem::path>& solution_path,
               const VerifyOptions& options, std::ostream& report_out, std::ostream& log);

/// JSON Schema of "scenario", "trace", "solution" or "report"; nullopt for other names.
std::optional<Json> schema_document(std::string_view which);

}  // namespace bbmech

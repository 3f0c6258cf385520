#pragma once

// Synchronous best-response dynamic: every round each agent answers the
// frozen previous-round snapshot, then the mechanism folds the new bids into
// the running weights.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbmech/market.hpp"
#include "bbmech/mechanism.hpp"

namespace bbmech {

enum class InitialProfileKind {
  Default,  // x = 0, p = M/2
  Zero,     // x = 0, p = 0
  Explicit,
};

std::string to_string(InitialProfileKind kind);
std::optional<InitialProfileKind> parse_initial_profile_kind(std::string_view name);

struct DynamicsConfig {
  ThetaSchedule theta = ThetaSchedule::harmonic();
  double gamma = 0.0;
  double epsilon = 1e-6;
  std::size_t max_rounds = 50000;
  double stationarity_tol = 1e-4;
  std::size_t best_response_passes = 2;
  InitialProfileKind initial = InitialProfileKind::Default;
  std::vector<Message> initial_messages;  // used when initial == Explicit
  std::uint64_t seed = 0;
  SubsidySplit split = SubsidySplit::RandomRecipient;

  TaxParams tax_params() const { return {gamma, epsilon, split}; }
  /// Throws std::invalid_argument on nonpositive gamma/tolerances or epsilon outside (0, 1).
  void validate() const;
};

std::vector<Message> initial_profile(const MarketInstance& instance, const DynamicsConfig& config);

/// Non-finite value inside a best response.
class BestResponseError : public std::runtime_error {
 public:
  BestResponseError(std::size_t agent, std::size_t round, const std::string& detail);
  std::size_t agent() const { return agent_; }
  std::size_t round() const { return round_; }

 private:
  std::size_t agent_;
  std::size_t round_;
};

/// Agent i's reply to the round-n snapshot under the smooth tax. Per good:
/// price from the first-order condition of the payoff's quadratic in p,
/// then demand where the marginal utility meets the effective unit price;
/// repeated best_response_passes times starting from the current demand.
Message best_response(const MarketInstance& instance, const MechanismState& state, std::size_t i,
                      const DynamicsConfig& config);

struct StationarityReport {
  bool is_stationary = false;
  // raw residuals
  double price_spread = 0.0;  // max_l max_{i,j} |p_i - p_j|
  double slackness = 0.0;     // max |w_{i,l} (sum x - c_l) / gamma|
  double gradient = 0.0;      // KKT-style mismatch of dU/dx against w_{-i,l}
  double overshoot = 0.0;     // max_l max(0, sum x - c_l)
  /// Some member would pay the capacity penalty. Such a profile admits a
  /// profitable deviation under the full tax, so it is never stationary.
  bool penalty_active = false;
  // normalized by M (prices) and M * c_l (slackness)
  double price_spread_norm = 0.0;
  double slackness_norm = 0.0;
  double gradient_norm = 0.0;
};

StationarityReport detect_stationary(const MarketInstance& instance, const MechanismState& state,
                                     double gamma, double tol);

struct TraceRecord {
  std::size_t round = 0;
  double kappa = 0.0;
  std::vector<Message> messages;
  std::vector<std::vector<double>> weights;  // indexed like messages
  TaxAssessment taxes;
  double budget_residual = 0.0;  // sum of transfers net of penalty
  double budget_scale = 0.0;     // sum of |transfer|
  double penalty_total = 0.0;
  double price_dispersion = 0.0;
  std::vector<double> capacity_residual;  // per good: sum x - c_l
  std::vector<double> payoffs;            // U_i(x_i) - t_i
  std::vector<double> weight_dispersion;  // per agent: sum_l (w_{i,l} - lagged mean w_l)^2
  std::vector<double> lagged_mean_weight;  // per good
};

/// Record describing a state (taxes in full mode, with subsidies).
TraceRecord make_record(const MarketInstance& instance, const MechanismState& state, const DynamicsConfig& config);

/// State carried by a record (weights rescaled into accumulators).
MechanismState state_from_record(const TraceRecord& record, std::uint64_t seed);

struct StepResult {
  MechanismState state;
  TraceRecord record;
};

/// One synchronous round. The input state is never modified.
StepResult step(const MarketInstance& instance, const MechanismState& state, const DynamicsConfig& config);

enum class Termination { Stationary, RoundCap };
std::string to_string(Termination t);

struct Trace {
  MechanismState initial;
  std::vector<TraceRecord> records;
  MechanismState final_state;
  Termination reason = Termination::RoundCap;
  StationarityReport final_report;
};

/// Observer invoked after each completed round; returning false keeps the
/// record out of Trace::records (used to stream long runs).
using RoundObserver = std::function<bool(const TraceRecord&)>;

/// Throws InstanceError when a good has fewer than three participants.
Trace run(const MarketInstance& instance, const DynamicsConfig& config, const RoundObserver& observer = {});

}  // namespace bbmech

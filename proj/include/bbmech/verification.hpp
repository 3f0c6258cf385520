#pragma once

// Executable checks of the mechanism's guarantees: budget balance, the
// capacity penalty bookkeeping, stationary-profile conditions, individual
// rationality through the eta deviation, and convergence to the oracle.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bbmech/dynamics.hpp"
#include "bbmech/market.hpp"
#include "bbmech/mechanism.hpp"
#include "bbmech/oracle.hpp"

namespace bbmech {

struct CheckResult {
  std::string family;  // budget | capacity | stationary | ir | convergence
  std::string name;
  bool passed = false;
  bool hard = true;  // soft checks are reported but never fail the report
  double residual = 0.0;
  double tolerance = 0.0;
  std::string location;  // round, agent or good the residual refers to
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  /// Per-good residual curves, (round, value) pairs.
  std::map<std::string, std::vector<std::pair<std::size_t, double>>> curves;

  bool passed() const;
  void merge(VerificationReport other);
  std::size_t count_family(std::string_view family) const;
};

// --- budget -----------------------------------------------------------------

struct BudgetTolerance {
  double abs = 1e-9;
  double rel = 1e-9;
};

/// Budget balance of a single profile, taxes assembled in full mode.
CheckResult check_budget_balance(const MarketInstance& instance, const MechanismState& state, const TaxParams& params,
                                 BudgetTolerance tol = {});

/// Budget balance of every recorded round, using the recorded taxes: the
/// sum of agent totals net of penalty, plus the worst-round consistency of
/// each total with its components.
VerificationReport check_budget_balance(std::span<const TraceRecord> records, BudgetTolerance tol = {});

/// Recorded penalties equal the penalty recomputed from the recorded demands.
VerificationReport check_capacity_penalty(const MarketInstance& instance, std::span<const TraceRecord> records,
                                          double epsilon);

// --- stationary profiles ----------------------------------------------------

struct StationarityTolerances {
  double price_spread_rel = 1e-3;  // times M
  double slackness = 1e-4;
  double gradient = 1e-2;
  double weight_spread = 1e-2;
};

/// Stationarity residuals plus the efficiency condition max_{i,j} |w_i - w_j| per good.
VerificationReport check_stationary_conditions(const MarketInstance& instance, const MechanismState& state,
                                               double gamma, StationarityTolerances tol = {});

double weight_spread(const MarketInstance& instance, const MechanismState& state);

// --- individual rationality -------------------------------------------------

struct IrDeviation {
  Message message;                  // demands 0, prices eta
  std::vector<double> eta;          // per good of the agent
  std::vector<double> root_residual;  // |poly(eta)| / (1 + sum |coefficients|)
  std::vector<bool> exceeds_bound;  // eta > M
  double payoff = 0.0;              // U_i(0) minus the full tax at the deviation, subsidy excluded
};

/// Agent i drops its demands to 0 and bids eta, the positive root of
/// A (eta - p_{-i})^2 - b (eta - p_{-i}) - w_{-i} xbar_{-i}, with
/// A = ((N-1)/N)^2 / kappa and b = w_{-i} E_{-i} / gamma, per good.
IrDeviation ir_deviation(const MarketInstance& instance, const MechanismState& state, std::size_t i,
                         const TaxParams& params);

struct IrTolerances {
  double payoff = 1e-4;
  double deviation = 1e-4;
  double root = 1e-9;
};

VerificationReport check_individual_rationality(const MarketInstance& instance, const MechanismState& state,
                                                const TaxParams& params, IrTolerances tol = {});

// --- convergence ------------------------------------------------------------

/// Terminal weights against the multipliers and, where the optimum is
/// unique, terminal demands against the optimal allocation. Curves are
/// sampled from the records.
VerificationReport check_convergence(const MarketInstance& instance, const MechanismState& terminal,
                                     std::span<const TraceRecord> records, const OracleSolution& oracle, double tol);

/// Soft diagnostic: mean of the largest per-agent weight dispersion over
/// consecutive windows; passes when the last window does not exceed the first.
CheckResult dispersion_trend(std::span<const TraceRecord> records, std::size_t window = 50);

}  // namespace bbmech

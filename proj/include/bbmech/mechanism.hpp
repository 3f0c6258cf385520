#pragma once

// Outcome function of the mechanism: running price-weights, per-good taxes,
// the budget-balancing term and the three-participant subsidy.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbmech/market.hpp"

namespace bbmech {

/// Raised when a good's participation structure cannot support a formula.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// One agent's report: demands and unit-price bids over its goods L_i.
struct Message {
  std::vector<double> demands;
  std::vector<double> prices;

  bool operator==(const Message&) const = default;
};

/// Step weights theta(n), n >= 1: strictly decreasing, vanishing, with
/// divergent partial sums. Either harmonic (1/n) or n^-alpha, 0 < alpha <= 1.
class ThetaSchedule {
 public:
  static ThetaSchedule harmonic() { return ThetaSchedule(1.0); }
  static ThetaSchedule power(double alpha);

  /// "harmonic" or "pow:<alpha>"; throws std::invalid_argument otherwise.
  static ThetaSchedule parse(std::string_view text);

  double operator()(std::size_t n) const;
  double exponent() const { return alpha_; }
  std::string to_string() const;

  bool operator==(const ThetaSchedule&) const = default;

 private:
  explicit ThetaSchedule(double alpha) : alpha_(alpha) {}
  double alpha_;
};

/// Mechanism state at round n.
struct MechanismState {
  std::size_t round = 1;
  std::vector<Message> messages;
  /// S_{i,k} = sum_{r <= n} theta(r) p_{i,k}(r), indexed like messages.
  std::vector<std::vector<double>> weight_accum;
  /// kappa(n) = sum_{r <= n} theta(r)
  double kappa = 0.0;
  /// Numerator of the lagged mean-price average per good (diagnostic only).
  std::vector<double> lagged_mean_accum;
  std::uint64_t rng_seed = 0;

  double weight(std::size_t i, std::size_t k) const { return weight_accum[i][k] / kappa; }
};

/// Checks the message-space box 0 <= x <= c_l, 0 <= p <= M and dimensions.
void validate_profile(const MarketInstance& instance, std::span<const Message> messages);

/// Round-1 state for a given initial profile.
MechanismState initial_state(const MarketInstance& instance, std::vector<Message> profile,
                             const ThetaSchedule& theta, std::uint64_t seed);

/// Installs round n+1 messages and folds their prices into the running weights.
MechanismState update_weights(const MarketInstance& instance, const MechanismState& state,
                              std::vector<Message> next, const ThetaSchedule& theta);

// ---------------------------------------------------------------------------
// Per-good quantities. A GoodProfile holds the round's values for the members
// of one good, in member order.

struct GoodProfile {
  double capacity = 0.0;
  std::vector<double> demand;
  std::vector<double> price;
  std::vector<double> weight;

  std::size_t size() const { return demand.size(); }
};

GoodProfile gather(const MarketInstance& instance, const MechanismState& state, std::size_t l);

/// Mean bid over all members / over members other than k.
double mean_price(std::span<const double> prices);
double mean_price_excl(std::span<const double> prices, std::size_t k);

/// Mean of w over members other than k.
double mean_weight_excl(std::span<const double> weights, std::size_t k);

struct ExcessDemand {
  double others;  // sum_{j != k} x_j - c
  double self;    // (N - 1) x_k - c
};
ExcessDemand excess_demands(const GoodProfile& g, std::size_t k);

/// Aggregates whose sums over members reproduce the smooth tax terms.
struct PsiTerms {
  double psi1 = 0, psi2 = 0, psi3 = 0, psi4 = 0, psi5 = 0;
};
PsiTerms psi_terms(const GoodProfile& g, std::size_t k, double kappa, double gamma);

/// Budget-balancing term for member k. Reads only the other members' values.
/// Sums over an empty index set are dropped (|A_l| = 3 has no triples).
/// Throws StructuralError when the good has fewer than three members.
double balancing_term(const GoodProfile& g, std::size_t k, double kappa, double gamma);

/// Capacity penalty 1{x>0}1{E+x>0} / (1 - 1{x>0}1{E+x>0}) with 1{A} = 1 - epsilon.
double capacity_penalty(double own_demand, double others_excess, double epsilon);

enum class TaxMode { Full, Smooth };
enum class SubsidySplit { RandomRecipient, ComplementEqual };

std::string to_string(SubsidySplit split);
std::optional<SubsidySplit> parse_subsidy_split(std::string_view name);

struct TaxParams {
  double gamma = 0.0;
  double epsilon = 1e-6;
  SubsidySplit split = SubsidySplit::RandomRecipient;
};

/// Library default for the coupling constant: 1e3 * max_l c_l * M.
double default_gamma(const MarketInstance& instance);

struct TaxBreakdown {
  double upsilon1 = 0;   // w_{-i} x_i
  double upsilon2 = 0;   // price dispersion minus capacity coupling
  double upsilon3 = 0;   // balancing term
  double penalty = 0;    // capacity penalty (Full mode only)
  double q_subsidy = 0;  // three-participant subsidy assigned to this agent
  double total = 0;

  void recompute_total() { total = upsilon1 + upsilon2 + upsilon3 + penalty + q_subsidy; }
};

TaxBreakdown tax(const GoodProfile& g, std::size_t k, double kappa, const TaxParams& params,
                 TaxMode mode);

/// Subsidy Q closing the budget of a good with exactly three members: the
/// negated triple-sum remainder that no member's balancing term can carry.
/// Throws StructuralError unless the good has three members.
double three_agent_subsidy(const GoodProfile& g, double gamma);

/// Member position (0..n-1) that receives good l's subsidy in a round. Pure
/// function of (seed, round, good).
std::size_t subsidy_recipient(std::uint64_t seed, std::size_t round, std::size_t good, std::size_t n);

struct GoodSubsidy {
  double amount = 0.0;
  std::vector<std::size_t> recipients;  // agent indices
};

struct AgentTax {
  std::vector<TaxBreakdown> goods;  // over L_i
  double subsidy_share = 0.0;       // complement-split subsidies (agent outside A_l)
  double total = 0.0;

  /// Per-good taxes without any subsidy received.
  double row_sum() const;
  double penalty() const;
};

struct TaxAssessment {
  std::vector<AgentTax> agents;
  std::vector<std::optional<GoodSubsidy>> subsidies;  // engaged only when |A_l| = 3

  /// Sum of all transfers, i.e. totals net of the capacity penalty.
  double transfer_sum() const;
  /// Sum of |transfer_j| used to scale the budget residual.
  double transfer_scale() const;
  double penalty_sum() const;
};

TaxAssessment assemble_taxes(const MarketInstance& instance, const MechanismState& state,
                             const TaxParams& params, TaxMode mode = TaxMode::Full);

}  // namespace bbmech

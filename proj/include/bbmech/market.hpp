#pragma once

// Economies of capacity-constrained divisible goods and the concave utility
// families agents use to value them.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace bbmech {

/// Raised when an instance description violates a structural invariant.
class InstanceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for demands outside a utility's domain (negative entries).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// ---------------------------------------------------------------------------
// Utility families. Each is additively separable across the agent's goods, so
// every operation below works one coordinate at a time.

/// U(x) = sum_k a_k ln(1 + x_k)
struct ScaledLog {
  std::vector<double> a;
};

/// U(x) = sum_k a_k x_k^beta / beta, 0 < beta < 1
struct Isoelastic {
  std::vector<double> a;
  double beta = 0.5;
};

/// U(x) = sum_k (a_k x_k - b_k x_k^2 / 2), flat beyond the satiation point a_k / b_k.
struct SaturatingQuadratic {
  std::vector<double> a;
  std::vector<double> b;
};

enum class UtilityFamily { ScaledLog, Isoelastic, SaturatingQuadratic };

std::string to_string(UtilityFamily family);
std::optional<UtilityFamily> parse_utility_family(std::string_view name);

class UtilityFunction {
 public:
  using Variant = std::variant<ScaledLog, Isoelastic, SaturatingQuadratic>;

  /// Validates parameters; throws InstanceError on nonpositive values or a bad beta.
  explicit UtilityFunction(Variant v);

  UtilityFamily family() const;
  std::size_t dimension() const;
  const Variant& parameters() const { return params_; }

  /// Single-coordinate value, marginal value, and the solve of marginal == w.
  double component(std::size_t k, double xk) const;
  double marginal(std::size_t k, double xk) const;
  double inverse_marginal(std::size_t k, double w) const;

  /// Smallest demand past which the coordinate's utility stops increasing
  /// (+infinity for strictly increasing families).
  double satiation(std::size_t k) const;

  /// Copy with every scale parameter multiplied by s > 0.
  UtilityFunction scaled(double s) const;

 private:
  Variant params_;
};

double utility_eval(const UtilityFunction& u, std::span<const double> x);
std::vector<double> utility_grad(const UtilityFunction& u, std::span<const double> x);

/// Demand level at which the marginal utility of coordinate k equals w > 0;
/// 0 when the marginal utility at 0 is already below w. Throws
/// std::invalid_argument for w <= 0.
double grad_inverse(const UtilityFunction& u, std::size_t k, double w);

/// Maximizer of U_k(x) - price * x over [0, cap]. Accepts price <= 0, in which
/// case the agent demands up to its satiation point.
double demand_at_price(const UtilityFunction& u, std::size_t k, double price, double cap);

// ---------------------------------------------------------------------------

struct GoodSpec {
  std::string id;
  double capacity = 0.0;
};

struct AgentSpec {
  std::string id;
  std::vector<std::string> goods;  // ordered participation list L_i
  UtilityFunction utility;
};

struct InstanceConfig {
  std::vector<GoodSpec> goods;
  std::vector<AgentSpec> agents;
  double price_bound = 0.0;
};

struct BuildOptions {
  /// Minimum |A_l|. The mechanism's balancing term needs at least three.
  std::size_t min_participants = 3;
};

class MarketInstance {
 public:
  std::size_t num_agents() const { return agents_.size(); }
  std::size_t num_goods() const { return goods_.size(); }
  double price_bound() const { return price_bound_; }
  double max_capacity() const;

  const GoodSpec& good(std::size_t l) const { return goods_.at(l); }
  const std::string& agent_id(std::size_t i) const { return agents_.at(i).id; }
  const UtilityFunction& utility(std::size_t i) const { return agents_.at(i).utility; }

  /// Ordered goods L_i of agent i (indices into goods()).
  std::span<const std::size_t> goods_of(std::size_t i) const { return agent_goods_.at(i); }

  /// Agents A_l of good l, ascending.
  std::span<const std::size_t> members(std::size_t l) const { return members_.at(l); }

  /// For each member of good l, the position of l within that member's L_i.
  std::span<const std::size_t> member_slots(std::size_t l) const { return member_slots_.at(l); }

  std::optional<std::size_t> local_index(std::size_t i, std::size_t l) const;
  std::optional<std::size_t> find_good(std::string_view id) const;
  std::optional<std::size_t> find_agent(std::string_view id) const;

  const InstanceConfig& config() const { return config_; }

 private:
  friend MarketInstance build_instance(const InstanceConfig&, const BuildOptions&);

  InstanceConfig config_;
  std::vector<GoodSpec> goods_;
  std::vector<AgentSpec> agents_;
  std::vector<std::vector<std::size_t>> agent_goods_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::vector<std::size_t>> member_slots_;
  double price_bound_ = 0.0;
};

/// Validates a configuration and builds the participation structure.
/// Deterministic; throws InstanceError with a diagnostic on any violation.
MarketInstance build_instance(const InstanceConfig& config, const BuildOptions& options = {});

}  // namespace bbmech

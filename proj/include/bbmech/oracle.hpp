#pragma once

// Centralized welfare maximization: maximize sum_i U_i(x_i) subject to
// per-good capacity, solved by projected dual descent with exact primal
// recovery through each utility's inverse marginal.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bbmech/market.hpp"

namespace bbmech {

/// Allocation indexed like messages: x[i][k] is agent i's amount of its k-th good.
using Allocation = std::vector<std::vector<double>>;

struct OracleConfig {
  double tol = 1e-7;               // stationarity and complementarity
  double feasibility_tol = 1e-9;
  std::size_t max_iterations = 1'000'000;
  double step_scale = 1.0;         // step a / sqrt(k)
};

struct KktResidual {
  double stationarity = 0.0;
  double complementarity = 0.0;
  double feasibility = 0.0;
};

struct OracleSolution {
  Allocation allocation;
  std::vector<double> multipliers;  // per good
  KktResidual kkt;
  double objective = 0.0;
  std::size_t iterations = 0;
  /// False for goods whose optimal allocation is not unique (a satiated
  /// saturating-quadratic member under a zero multiplier).
  std::vector<bool> unique_allocation;
  /// Dual objective was non-increasing along every accepted step.
  bool dual_monotone = true;
};

class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& what, KktResidual best, std::size_t iterations)
      : std::runtime_error(what), best_(best), iterations_(iterations) {}
  const KktResidual& best() const { return best_; }
  std::size_t iterations() const { return iterations_; }

 private:
  KktResidual best_;
  std::size_t iterations_;
};

/// Maximizer of U_i(x) - lambda x per coordinate, clipped to [0, c_l].
Allocation primal_recovery(const MarketInstance& instance, const std::vector<double>& lambda);

/// D(lambda) = sum_i max_x [U_i(x) - lambda . x] + lambda . c
double dual_objective(const MarketInstance& instance, const std::vector<double>& lambda);

KktResidual kkt_residual(const MarketInstance& instance, const Allocation& x, const std::vector<double>& lambda);

double welfare(const MarketInstance& instance, const Allocation& x);

/// Throws OracleError carrying the best residuals when the iteration cap is hit.
OracleSolution solve_centralized(const MarketInstance& instance, const OracleConfig& config = {});

}  // namespace bbmech

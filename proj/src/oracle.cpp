#include "bbmech/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bbmech {

Allocation primal_recovery(const MarketInstance& instance, const std::vector<double>& lambda) {
  Allocation x(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const auto goods = instance.goods_of(i);
    for (std::size_t k = 0; k < goods.size(); ++k) {
      x[i].push_back(demand_at_price(instance.utility(i), k, lambda[goods[k]], instance.good(goods[k]).capacity));
    }
  }
  return x;
}

namespace {

std::vector<double> good_totals(const MarketInstance& instance, const Allocation& x) {
  std::vector<double> total(instance.num_goods(), 0.0);
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const auto goods = instance.goods_of(i);
    for (std::size_t k = 0; k < goods.size(); ++k) total[goods[k]] += x[i][k];
  }
  return total;
}

double dual_at(const MarketInstance& instance, const std::vector<double>& lambda, const Allocation& x) {
  double d = 0.0;
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const auto goods = instance.goods_of(i);
    for (std::size_t k = 0; k < goods.size(); ++k) {
      d += instance.utility(i).component(k, x[i][k]) - lambda[goods[k]] * x[i][k];
    }
  }
  for (std::size_t l = 0; l < instance.num_goods(); ++l) d += lambda[l] * instance.good(l).capacity;
  return d;
}

bool converged(const KktResidual& r, const OracleConfig& c) {
  return r.stationarity <= c.tol && r.complementarity <= c.tol && r.feasibility <= c.feasibility_tol;
}

}  // namespace

double dual_objective(const MarketInstance& instance, const std::vector<double>& lambda) {
  return dual_at(instance, lambda, primal_recovery(instance, lambda));
}

double welfare(const MarketInstance& instance, const Allocation& x) {
  double w = 0.0;
  for (std::size_t i = 0; i < instance.num_agents(); ++i) w += utility_eval(instance.utility(i), x[i]);
  return w;
}

KktResidual kkt_residual(const MarketInstance& instance, const Allocation& x, const std::vector<double>& lambda) {
  KktResidual r;
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const auto goods = instance.goods_of(i);
    for (std::size_t k = 0; k < goods.size(); ++k) {
      const double g = instance.utility(i).marginal(k, x[i][k]);
      const double lam = lambda[goods[k]];
      const double c = instance.good(goods[k]).capacity;
      double res;
      if (x[i][k] <= 0.0) {
        res = std::max(0.0, g - lam);
      } else if (x[i][k] >= c) {
        res = std::max(0.0, lam - g);
      } else {
        res = std::abs(g - lam);
      }
      r.stationarity = std::max(r.stationarity, res);
    }
  }
  const auto total = good_totals(instance, x);
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const double excess = total[l] - instance.good(l).capacity;
    r.complementarity = std::max(r.complementarity, std::abs(lambda[l] * excess));
    r.feasibility = std::max(r.feasibility, std::max(0.0, excess));
  }
  return r;
}

OracleSolution solve_centralized(const MarketInstance& instance, const OracleConfig& config) {
  const std::size_t L = instance.num_goods();
  std::vector<double> lambda(L, 0.0);
  Allocation x = primal_recovery(instance, lambda);
  double dual = dual_at(instance, lambda, x);
  KktResidual res = kkt_residual(instance, x, lambda);
  KktResidual best = res;

  OracleSolution sol;
  std::size_t k = 0;
  while (!converged(res, config)) {
    if (k >= config.max_iterations) {
      std::ostringstream os;
      os << "centralized solver did not reach tolerance in " << k << " iterations (stationarity "
         << best.stationarity << ", complementarity " << best.complementarity << ", feasibility " << best.feasibility
         << ")";
      throw OracleError(os.str(), best, k);
    }
    ++k;
    const auto total = good_totals(instance, x);
    double alpha = config.step_scale / std::sqrt(static_cast<double>(k));
    std::vector<double> next(L);
    Allocation xn;
    double dn = 0.0;
    // shrink the step until the dual does not increase
    for (int halvings = 0;; ++halvings) {
      for (std::size_t l = 0; l < L; ++l) {
        next[l] = std::max(0.0, lambda[l] + alpha * (total[l] - instance.good(l).capacity));
      }
      xn = primal_recovery(instance, next);
      dn = dual_at(instance, next, xn);
      if (dn <= dual + 1e-15 * std::max(1.0, std::abs(dual)) || halvings >= 60) break;
      alpha *= 0.5;
    }
    if (dn > dual + 1e-15 * std::max(1.0, std::abs(dual))) sol.dual_monotone = false;
    lambda = std::move(next);
    x = std::move(xn);
    dual = dn;
    res = kkt_residual(instance, x, lambda);
    if (res.complementarity + res.feasibility < best.complementarity + best.feasibility) best = res;
  }

  sol.allocation = std::move(x);
  sol.multipliers = std::move(lambda);
  sol.kkt = res;
  sol.objective = welfare(instance, sol.allocation);
  sol.iterations = k;
  sol.unique_allocation.assign(L, true);
  for (std::size_t l = 0; l < L; ++l) {
    if (sol.multipliers[l] > 0.0) continue;
    const auto members = instance.members(l);
    const auto slots = instance.member_slots(l);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto& u = instance.utility(members[m]);
      if (u.family() == UtilityFamily::SaturatingQuadratic && u.satiation(slots[m]) < instance.good(l).capacity) {
        sol.unique_allocation[l] = false;
      }
    }
  }
  return sol;
}

}  // namespace bbmech

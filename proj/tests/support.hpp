#pragma once

#include <random>
#include <string>
#include <vector>

#include "bbmech/market.hpp"
#include "bbmech/mechanism.hpp"

namespace testsupport {

using namespace bbmech;

inline UtilityFunction log_utility(std::vector<double> a) { return UtilityFunction(ScaledLog{std::move(a)}); }

/// One good shared by agents with scalar log utilities a_i.
inline MarketInstance single_good(std::vector<double> a, double capacity, double M,
                                  std::size_t min_participants = 3) {
  InstanceConfig cfg;
  cfg.goods = {{"g", capacity}};
  cfg.price_bound = M;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cfg.agents.push_back({"a" + std::to_string(i + 1), {"g"}, log_utility({a[i]})});
  }
  return build_instance(cfg, BuildOptions{min_participants});
}

/// Four agents, two goods; agent 4 requests only g2.
inline MarketInstance four_agent_two_good() {
  InstanceConfig cfg;
  cfg.goods = {{"g1", 1.0}, {"g2", 1.0}};
  cfg.price_bound = 10.0;
  cfg.agents = {
      {"a1", {"g1", "g2"}, log_utility({1.0, 2.0})},
      {"a2", {"g1", "g2"}, log_utility({2.0, 1.0})},
      {"a3", {"g1", "g2"}, log_utility({3.0, 3.0})},
      {"a4", {"g2"}, log_utility({2.0})},
  };
  return build_instance(cfg);
}

/// Goods of the given sizes; agent i joins good l when i < sizes[l].
inline MarketInstance nested_instance(const std::vector<std::size_t>& sizes, double M, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ua(0.5, 4.0), uc(0.5, 3.0);
  std::size_t m = 0;
  for (auto s : sizes) m = std::max(m, s);
  InstanceConfig cfg;
  cfg.price_bound = M;
  for (std::size_t l = 0; l < sizes.size(); ++l) cfg.goods.push_back({"g" + std::to_string(l), uc(rng)});
  for (std::size_t i = 0; i < m; ++i) {
    AgentSpec a{"a" + std::to_string(i), {}, log_utility({1.0})};
    std::vector<double> coeffs;
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      if (i < sizes[l]) {
        a.goods.push_back(cfg.goods[l].id);
        coeffs.push_back(ua(rng));
      }
    }
    a.utility = log_utility(coeffs);
    cfg.agents.push_back(std::move(a));
  }
  return build_instance(cfg);
}

/// Uniform random profile inside the message box. With feasible = true every
/// good's total demand stays at most 0.99 c_l.
inline std::vector<Message> random_profile(const MarketInstance& inst, std::mt19937_64& rng, bool feasible) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Message> prof(inst.num_agents());
  for (std::size_t i = 0; i < inst.num_agents(); ++i) {
    for (std::size_t l : inst.goods_of(i)) {
      const double c = inst.good(l).capacity;
      const double share = feasible ? 0.99 * c / static_cast<double>(inst.members(l).size()) : c;
      prof[i].demands.push_back(share * u01(rng));
      prof[i].prices.push_back(inst.price_bound() * u01(rng));
    }
  }
  return prof;
}

/// State whose weights are random values in [0, M] (several random rounds).
inline MechanismState random_state(const MarketInstance& inst, std::mt19937_64& rng, bool feasible,
                                   std::size_t rounds = 3) {
  const auto theta = ThetaSchedule::harmonic();
  MechanismState s = initial_state(inst, random_profile(inst, rng, feasible), theta, rng());
  for (std::size_t r = 1; r < rounds; ++r) s = update_weights(inst, s, random_profile(inst, rng, feasible), theta);
  return s;
}

}  // namespace testsupport

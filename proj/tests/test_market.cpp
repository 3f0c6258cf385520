#include <doctest.h>

#include <cmath>
#include <random>

#include "bbmech/market.hpp"
#include "support.hpp"

using namespace bbmech;
using testsupport::log_utility;

namespace {

std::vector<UtilityFunction> random_utilities(std::mt19937_64& rng, std::size_t dim) {
  std::uniform_real_distribution<double> ua(0.2, 5.0), ub(0.2, 3.0), ubeta(0.1, 0.9);
  std::vector<double> a(dim), b(dim);
  for (auto& v : a) v = ua(rng);
  for (auto& v : b) v = ub(rng);
  return {UtilityFunction(ScaledLog{a}), UtilityFunction(Isoelastic{a, ubeta(rng)}),
          UtilityFunction(SaturatingQuadratic{a, b})};
}

// Points inside the strictly concave part of each family's domain.
double domain_upper(const UtilityFunction& u, std::size_t k) {
  const double s = u.satiation(k);
  return std::isfinite(s) ? s : 10.0;
}

}  // namespace

TEST_CASE("utility values at reference points") {
  CHECK(utility_eval(log_utility({1.0}), std::vector{0.0}) == 0.0);
  CHECK(utility_eval(log_utility({2.0}), std::vector{std::exp(1.0) - 1.0}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(utility_eval(UtilityFunction(Isoelastic{{1.0}, 0.5}), std::vector{4.0}) == doctest::Approx(4.0));
  CHECK(utility_eval(UtilityFunction(SaturatingQuadratic{{4.0}, {2.0}}), std::vector{5.0}) ==
        doctest::Approx(4.0));  // flat past a/b = 2
}

TEST_CASE("utility gradients at reference points") {
  CHECK(utility_grad(log_utility({3.0}), std::vector{2.0})[0] == doctest::Approx(1.0));
  CHECK(utility_grad(UtilityFunction(SaturatingQuadratic{{4.0}, {2.0}}), std::vector{1.0})[0] ==
        doctest::Approx(2.0));
}

TEST_CASE("negative demand is a domain error") {
  CHECK_THROWS_AS(utility_eval(log_utility({1.0}), std::vector{-0.1}), DomainError);
  CHECK_THROWS_AS(utility_grad(log_utility({1.0}), std::vector{-1e-300}), DomainError);
  CHECK_THROWS_AS(utility_eval(log_utility({1.0}), std::vector{std::nan("")}), DomainError);
}

TEST_CASE("grad_inverse reference points") {
  CHECK(grad_inverse(log_utility({3.0}), 0, 1.0) == doctest::Approx(2.0));
  CHECK(grad_inverse(log_utility({1.0}), 0, 2.0) == 0.0);
  // U = x^0.5 / 0.5 has marginal x^-0.5, which equals 0.25 at x = 16
  CHECK(grad_inverse(UtilityFunction(Isoelastic{{1.0}, 0.5}), 0, 0.25) == doctest::Approx(16.0));
  CHECK(grad_inverse(UtilityFunction(Isoelastic{{0.5}, 0.5}), 0, 0.25) == doctest::Approx(4.0));
  CHECK_THROWS_AS(grad_inverse(log_utility({1.0}), 0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grad_inverse(log_utility({1.0}), 0, -1.0), std::invalid_argument);
}

TEST_CASE("demand at a nonpositive price is the satiation point clipped to capacity") {
  CHECK(demand_at_price(log_utility({1.0}), 0, 0.0, 2.5) == 2.5);
  CHECK(demand_at_price(UtilityFunction(SaturatingQuadratic{{1.0}, {2.0}}), 0, 0.0, 2.5) == 0.5);
  CHECK(demand_at_price(log_utility({3.0}), 0, 1.0, 1.5) == 1.5);
}

TEST_CASE("U(0) = 0, concavity and finite-difference gradients for random parameters") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    for (const auto& u : random_utilities(rng, 3)) {
      CHECK(utility_eval(u, std::vector<double>(3, 0.0)) == 0.0);
      for (int t = 0; t < 50; ++t) {
        std::vector<double> x(3), y(3), z(3);
        const double lam = u01(rng);
        for (std::size_t k = 0; k < 3; ++k) {
          const double hi = domain_upper(u, k);
          x[k] = hi * u01(rng);
          y[k] = hi * u01(rng);
          z[k] = lam * x[k] + (1 - lam) * y[k];
        }
        CHECK(utility_eval(u, z) >= lam * utility_eval(u, x) + (1 - lam) * utility_eval(u, y) - 1e-12);

        const auto g = utility_grad(u, x);
        for (std::size_t k = 0; k < 3; ++k) {
          if (x[k] < 1e-3) continue;  // keep the stencil inside the domain
          const double h = 1e-6 * (1 + std::abs(x[k]));
          auto xp = x, xm = x;
          xp[k] += h;
          xm[k] -= h;
          const double fd = (utility_eval(u, xp) - utility_eval(u, xm)) / (2 * h);
          CHECK(std::abs(fd - g[k]) <= 1e-5 * std::max(1.0, std::abs(g[k])));
        }
      }
    }
  }
}

TEST_CASE("grad_inverse inverts utility_grad on interior points") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    for (const auto& u : random_utilities(rng, 2)) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double x = domain_upper(u, k) * u01(rng);
        const double w = u.marginal(k, x);
        CHECK(grad_inverse(u, k, w) == doctest::Approx(x).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("utility parameter validation") {
  CHECK_THROWS_AS(log_utility({0.0}), InstanceError);
  CHECK_THROWS_AS(log_utility({-1.0}), InstanceError);
  CHECK_THROWS_AS(UtilityFunction(Isoelastic{{1.0}, 1.0}), InstanceError);
  CHECK_THROWS_AS(UtilityFunction(SaturatingQuadratic{{1.0, 2.0}, {1.0}}), InstanceError);
  CHECK_THROWS_AS(log_utility({}), InstanceError);
}

TEST_CASE("scaled utilities multiply values") {
  const UtilityFunction u(SaturatingQuadratic{{2.0}, {1.0}});
  const auto v = u.scaled(2.0);
  CHECK(v.component(0, 1.0) == doctest::Approx(2.0 * u.component(0, 1.0)));
  CHECK(v.satiation(0) == u.satiation(0));
}

TEST_CASE("minimal legal instance") {
  const auto inst = testsupport::single_good({1, 1, 1}, 1.0, 10.0);
  CHECK(inst.num_agents() == 3);
  CHECK(inst.members(0).size() == 3);
}

TEST_CASE("participation below minimum is rejected") {
  try {
    testsupport::single_good({1, 1}, 1.0, 10.0);
    FAIL("expected an InstanceError");
  } catch (const InstanceError& e) {
    CHECK(std::string(e.what()).find("participation below minimum") != std::string::npos);
  }
}

TEST_CASE("participation sets of the four-agent economy") {
  const auto inst = testsupport::four_agent_two_good();
  CHECK(std::vector<std::size_t>(inst.members(0).begin(), inst.members(0).end()) == std::vector<std::size_t>{0, 1, 2});
  CHECK(std::vector<std::size_t>(inst.members(1).begin(), inst.members(1).end()) ==
        std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(inst.local_index(3, 1) == 0u);
  CHECK_FALSE(inst.local_index(3, 0).has_value());
  CHECK(inst.member_slots(1)[3] == 0u);
}

TEST_CASE("instance validation diagnostics") {
  InstanceConfig cfg;
  cfg.goods = {{"g", 1.0}};
  cfg.price_bound = 10.0;
  for (int i = 0; i < 3; ++i) cfg.agents.push_back({"a" + std::to_string(i), {"g"}, log_utility({1.0})});
  CHECK_NOTHROW(build_instance(cfg));

  auto bad = cfg;
  bad.goods[0].capacity = -1.0;
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.price_bound = 0.0;
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.price_bound = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.agents[1].id = "a0";
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.agents[0].goods = {"h"};
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.agents[0].goods = {"g", "g"};
  bad.agents[0].utility = log_utility({1.0, 1.0});
  CHECK_THROWS_AS(build_instance(bad), InstanceError);

  bad = cfg;
  bad.agents[0].utility = log_utility({1.0, 1.0});
  CHECK_THROWS_AS(build_instance(bad), InstanceError);
}

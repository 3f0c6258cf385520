#include "bbmech/verification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bbmech {

bool VerificationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed || !c.hard; });
}

void VerificationReport::merge(VerificationReport other) {
  for (auto& c : other.checks) checks.push_back(std::move(c));
  for (auto& [k, v] : other.curves) curves[k] = std::move(v);
}

std::size_t VerificationReport::count_family(std::string_view family) const {
  return static_cast<std::size_t>(
      std::count_if(checks.begin(), checks.end(), [&](const CheckResult& c) { return c.family == family; }));
}

namespace {

std::string round_label(std::size_t round) { return "round " + std::to_string(round); }

CheckResult make(std::string family, std::string name, double residual, double tolerance, std::string location,
                 bool hard = true) {
  CheckResult c;
  c.family = std::move(family);
  c.name = std::move(name);
  c.residual = residual;
  c.tolerance = tolerance;
  c.passed = residual <= tolerance;
  c.location = std::move(location);
  c.hard = hard;
  return c;
}

std::size_t member_position(const MarketInstance& instance, std::size_t l, std::size_t i) {
  const auto members = instance.members(l);
  return static_cast<std::size_t>(std::find(members.begin(), members.end(), i) - members.begin());
}

}  // namespace

// --- budget -----------------------------------------------------------------

CheckResult check_budget_balance(const MarketInstance& instance, const MechanismState& state, const TaxParams& params,
                                 BudgetTolerance tol) {
  const auto taxes = assemble_taxes(instance, state, params, TaxMode::Full);
  const double allowed = tol.abs + tol.rel * taxes.transfer_scale();
  auto c = make("budget", "budget-balance", std::abs(taxes.transfer_sum()), allowed, round_label(state.round));
  std::ostringstream os;
  os << "penalty total " << taxes.penalty_sum() << " reported separately";
  c.detail = os.str();
  return c;
}

VerificationReport check_budget_balance(std::span<const TraceRecord> records, BudgetTolerance tol) {
  VerificationReport rep;
  CheckResult balance = make("budget", "budget-balance", 0.0, tol.abs, "none");
  CheckResult decomposition = make("budget", "tax-decomposition", 0.0, 1e-12, "none");
  double worst_ratio = -1.0;
  double worst_decomp = -1.0;
  double penalty_total = 0.0;

  for (const auto& rec : records) {
    double sum = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < rec.taxes.agents.size(); ++i) {
      const auto& a = rec.taxes.agents[i];
      const double transfer = a.total - a.penalty();
      sum += transfer;
      scale += std::abs(transfer);

      double parts = a.subsidy_share;
      for (const auto& b : a.goods) {
        parts += b.total;
        const double comp = b.upsilon1 + b.upsilon2 + b.upsilon3 + b.penalty + b.q_subsidy;
        const double d = std::abs(b.total - comp) / std::max(1.0, std::abs(comp));
        if (d > worst_decomp) {
          worst_decomp = d;
          decomposition.residual = d;
          decomposition.location = round_label(rec.round) + ", agent " + std::to_string(i);
        }
      }
      const double d = std::abs(a.total - parts) / std::max(1.0, std::abs(parts));
      if (d > worst_decomp) {
        worst_decomp = d;
        decomposition.residual = d;
        decomposition.location = round_label(rec.round) + ", agent " + std::to_string(i);
      }
    }
    penalty_total = std::max(penalty_total, rec.penalty_total);
    const double allowed = tol.abs + tol.rel * scale;
    const double ratio = std::abs(sum) / allowed;
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      balance.residual = std::abs(sum);
      balance.tolerance = allowed;
      balance.location = round_label(rec.round);
    }
  }
  balance.passed = balance.residual <= balance.tolerance;
  decomposition.passed = decomposition.residual <= decomposition.tolerance;
  std::ostringstream os;
  os << records.size() << " rounds; largest per-round penalty total " << penalty_total << " (excluded from the sum)";
  balance.detail = os.str();
  rep.checks.push_back(std::move(balance));
  rep.checks.push_back(std::move(decomposition));
  return rep;
}

VerificationReport check_capacity_penalty(const MarketInstance& instance, std::span<const TraceRecord> records,
                                          double epsilon) {
  VerificationReport rep;
  CheckResult pen = make("capacity", "penalty-consistency", 0.0, 1e-12, "none");
  CheckResult overshoot = make("capacity", "capacity-overshoot", 0.0, 0.0, "none", false);
  std::size_t active = 0;
  for (const auto& rec : records) {
    for (std::size_t l = 0; l < instance.num_goods(); ++l) {
      const auto members = instance.members(l);
      const auto slots = instance.member_slots(l);
      double total = 0.0;
      for (std::size_t m = 0; m < members.size(); ++m) total += rec.messages[members[m]].demands[slots[m]];
      const double excess = total - instance.good(l).capacity;
      if (excess > overshoot.residual) {
        overshoot.residual = excess;
        overshoot.location = round_label(rec.round) + ", good " + instance.good(l).id;
      }
      for (std::size_t m = 0; m < members.size(); ++m) {
        const double x = rec.messages[members[m]].demands[slots[m]];
        const double expected = capacity_penalty(x, total - x - instance.good(l).capacity, epsilon);
        if (expected > 0.0) ++active;
        const double recorded = rec.taxes.agents.at(members[m]).goods.at(slots[m]).penalty;
        const double d = std::abs(recorded - expected) / (1.0 + expected);
        if (d > pen.residual) {
          pen.residual = d;
          pen.location =
              round_label(rec.round) + ", agent " + instance.agent_id(members[m]) + ", good " + instance.good(l).id;
        }
      }
    }
  }
  pen.passed = pen.residual <= pen.tolerance;
  pen.detail = std::to_string(active) + " active penalty terms";
  overshoot.passed = overshoot.residual <= 0.0;
  overshoot.detail = "largest sum x - c over recorded rounds";
  rep.checks.push_back(std::move(pen));
  rep.checks.push_back(std::move(overshoot));
  return rep;
}

// --- stationary profiles ----------------------------------------------------

double weight_spread(const MarketInstance& instance, const MechanismState& state) {
  double spread = 0.0;
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const auto g = gather(instance, state, l);
    const auto [lo, hi] = std::minmax_element(g.weight.begin(), g.weight.end());
    spread = std::max(spread, *hi - *lo);
  }
  return spread;
}

VerificationReport check_stationary_conditions(const MarketInstance& instance, const MechanismState& state,
                                               double gamma, StationarityTolerances tol) {
  const auto r = detect_stationary(instance, state, gamma, 1.0);
  const std::string loc = round_label(state.round);
  VerificationReport rep;
  rep.checks.push_back(make("stationary", "price-spread", r.price_spread, tol.price_spread_rel * instance.price_bound(), loc));
  rep.checks.push_back(make("stationary", "complementary-slackness", r.slackness, tol.slackness, loc));
  rep.checks.push_back(make("stationary", "gradient-match", r.gradient, tol.gradient, loc));
  rep.checks.push_back(make("stationary", "weight-spread", weight_spread(instance, state), tol.weight_spread, loc));
  return rep;
}

// --- individual rationality -------------------------------------------------

IrDeviation ir_deviation(const MarketInstance& instance, const MechanismState& state, std::size_t i,
                         const TaxParams& params) {
  const auto goods = instance.goods_of(i);
  IrDeviation dev;
  dev.message.demands.assign(goods.size(), 0.0);
  for (std::size_t k = 0; k < goods.size(); ++k) {
    const std::size_t l = goods[k];
    const GoodProfile g = gather(instance, state, l);
    const std::size_t pos = member_position(instance, l, i);
    const double N = static_cast<double>(g.size());
    const double wm = mean_weight_excl(g.weight, pos);
    const double pm = mean_price_excl(g.price, pos);
    const double xbar = mean_price_excl(g.demand, pos);
    const double em = excess_demands(g, pos).others;
    const double A = ((N - 1.0) / N) * ((N - 1.0) / N) / state.kappa;
    const double b = wm * em / params.gamma;
    const double c0 = wm * xbar;
    const double disc = b * b + 4.0 * A * c0;
    if (disc < 0.0) throw std::domain_error("negative discriminant in the deviation quadratic");
    const double eta = (std::sqrt(disc) + 2.0 * A * pm + b) / (2.0 * A);
    // coefficients in eta: A eta^2 + (-2 A pm - b) eta + (A pm^2 + b pm - w xbar)
    const double q2 = A, q1 = -2.0 * A * pm - b, q0 = A * pm * pm + b * pm - c0;
    const double d = eta - pm;
    const double value = A * d * d - b * d - c0;
    dev.eta.push_back(eta);
    dev.root_residual.push_back(std::abs(value) / (1.0 + std::abs(q2) + std::abs(q1) + std::abs(q0)));
    dev.exceeds_bound.push_back(eta > instance.price_bound());
    dev.message.prices.push_back(eta);
  }

  // payoff at the deviation: U_i(0) = 0 minus the full tax, subsidy excluded
  MechanismState s = state;
  s.messages[i] = dev.message;
  double t = 0.0;
  for (std::size_t k = 0; k < goods.size(); ++k) {
    const GoodProfile g = gather(instance, s, goods[k]);
    t += tax(g, member_position(instance, goods[k], i), s.kappa, params, TaxMode::Full).total;
  }
  dev.payoff = utility_eval(instance.utility(i), dev.message.demands) - t;
  return dev;
}

VerificationReport check_individual_rationality(const MarketInstance& instance, const MechanismState& state,
                                                const TaxParams& params, IrTolerances tol) {
  VerificationReport rep;
  const auto taxes = assemble_taxes(instance, state, params, TaxMode::Full);
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const std::string who = "agent " + instance.agent_id(i);
    const double payoff = utility_eval(instance.utility(i), state.messages[i].demands) - taxes.agents[i].total;
    auto pc = make("ir", "payoff", std::max(0.0, -payoff), tol.payoff, who);
    pc.detail = "payoff " + std::to_string(payoff);
    rep.checks.push_back(std::move(pc));

    const auto dev = ir_deviation(instance, state, i, params);
    rep.checks.push_back(make("ir", "eta-deviation", std::abs(dev.payoff), tol.deviation, who));
    rep.checks.push_back(make("ir", "eta-root",
                              *std::max_element(dev.root_residual.begin(), dev.root_residual.end()), tol.root, who));
    const double eta_max = *std::max_element(dev.eta.begin(), dev.eta.end());
    auto bound = make("ir", "eta-within-bound", std::max(0.0, eta_max - instance.price_bound()), 0.0, who, false);
    bound.detail = "largest eta " + std::to_string(eta_max);
    rep.checks.push_back(std::move(bound));
  }
  return rep;
}

// --- convergence ------------------------------------------------------------

VerificationReport check_convergence(const MarketInstance& instance, const MechanismState& terminal,
                                     std::span<const TraceRecord> records, const OracleSolution& oracle, double tol) {
  VerificationReport rep;
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const auto members = instance.members(l);
    const auto slots = instance.member_slots(l);
    const std::string& id = instance.good(l).id;
    const double lam = oracle.multipliers.at(l);

    double wres = 0.0, xres = 0.0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      wres = std::max(wres, std::abs(terminal.weight(members[m], slots[m]) - lam));
      xres = std::max(xres, std::abs(terminal.messages[members[m]].demands[slots[m]] -
                                     oracle.allocation.at(members[m]).at(slots[m])));
    }
    auto wc = make("convergence", "multiplier", wres, tol, "good " + id);
    wc.detail = "lambda* " + std::to_string(lam);
    rep.checks.push_back(std::move(wc));
    if (oracle.unique_allocation.at(l)) {
      rep.checks.push_back(make("convergence", "allocation", xres, tol, "good " + id));
    } else {
      auto xc = make("convergence", "allocation", xres, tol, "good " + id, false);
      xc.detail = "skipped: optimum not unique";
      rep.checks.push_back(std::move(xc));
    }

    auto& curve = rep.curves[id];
    const std::size_t stride = std::max<std::size_t>(1, (records.size() + 199) / 200);
    for (std::size_t r = 0; r < records.size(); ++r) {
      if (r % stride != 0 && r + 1 != records.size()) continue;
      double res = 0.0;
      for (std::size_t m = 0; m < members.size(); ++m) {
        res = std::max(res, std::abs(records[r].weights[members[m]][slots[m]] - lam));
      }
      curve.emplace_back(records[r].round, res);
    }
  }
  return rep;
}

CheckResult dispersion_trend(std::span<const TraceRecord> records, std::size_t window) {
  CheckResult c = make("convergence", "dispersion-trend", 0.0, 0.0, "none", false);
  if (window == 0 || records.size() < 2 * window) {
    c.passed = true;
    c.detail = "too few rounds for two windows";
    return c;
  }
  auto window_mean = [&](std::size_t start) {
    double s = 0.0;
    for (std::size_t r = start; r < start + window; ++r) {
      const auto& d = records[r].weight_dispersion;
      s += d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
    }
    return s / static_cast<double>(window);
  };
  const std::size_t windows = records.size() / window;
  const double first = window_mean(0);
  const double last = window_mean((windows - 1) * window);
  std::size_t increases = 0;
  double prev = first;
  for (std::size_t w = 1; w < windows; ++w) {
    const double cur = window_mean(w * window);
    if (cur > prev) ++increases;
    prev = cur;
  }
  c.residual = std::max(0.0, last - first);
  c.passed = last <= first;
  c.location = "windows of " + std::to_string(window) + " rounds";
  std::ostringstream os;
  os << "first " << first << ", last " << last << ", " << increases << " of " << windows - 1 << " windows increased";
  c.detail = os.str();
  return c;
}

}  // namespace bbmech

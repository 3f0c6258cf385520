#include "bbmech/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bbmech {

std::string to_string(InitialProfileKind kind) {
  switch (kind) {
    case InitialProfileKind::Default:
      return "default";
    case InitialProfileKind::Zero:
      return "zero";
    case InitialProfileKind::Explicit:
      return "explicit";
  }
  return "unknown";
}

std::optional<InitialProfileKind> parse_initial_profile_kind(std::string_view name) {
  if (name == "default") return InitialProfileKind::Default;
  if (name == "zero") return InitialProfileKind::Zero;
  if (name == "explicit") return InitialProfileKind::Explicit;
  return std::nullopt;
}

std::string to_string(Termination t) { return t == Termination::Stationary ? "stationary" : "round-cap"; }

void DynamicsConfig::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive and finite");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
  if (!(stationarity_tol > 0.0)) throw std::invalid_argument("stationarity tolerance must be positive");
  if (best_response_passes == 0) throw std::invalid_argument("best response needs at least one pass");
}

std::vector<Message> initial_profile(const MarketInstance& instance, const DynamicsConfig& config) {
  if (config.initial == InitialProfileKind::Explicit) {
    validate_profile(instance, config.initial_messages);
    return config.initial_messages;
  }
  const double p0 = config.initial == InitialProfileKind::Default ? 0.5 * instance.price_bound() : 0.0;
  std::vector<Message> prof(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const std::size_t n = instance.goods_of(i).size();
    prof[i].demands.assign(n, 0.0);
    prof[i].prices.assign(n, p0);
  }
  return prof;
}

BestResponseError::BestResponseError(std::size_t agent, std::size_t round, const std::string& detail)
    : std::runtime_error(detail), agent_(agent), round_(round) {}

Message best_response(const MarketInstance& instance, const MechanismState& state, std::size_t i,
                      const DynamicsConfig& config) {
  const auto goods = instance.goods_of(i);
  const UtilityFunction& u = instance.utility(i);
  const double M = instance.price_bound();
  const double gamma = config.gamma;
  Message out;
  out.demands.resize(goods.size());
  out.prices.resize(goods.size());

  for (std::size_t k = 0; k < goods.size(); ++k) {
    const std::size_t l = goods[k];
    const GoodProfile g = gather(instance, state, l);
    const auto members = instance.members(l);
    const std::size_t pos = static_cast<std::size_t>(std::find(members.begin(), members.end(), i) - members.begin());
    const double N = static_cast<double>(g.size());
    const double a = (N - 1.0) / N;
    const double wm = mean_weight_excl(g.weight, pos);
    const double pm = mean_price_excl(g.price, pos);
    const double em = excess_demands(g, pos).others;

    double x = g.demand[pos];
    double p = g.price[pos];
    for (std::size_t pass = 0; pass < config.best_response_passes; ++pass) {
      p = std::clamp(pm + state.kappa * wm * (x + em) / (2.0 * a * a * gamma), 0.0, M);
      const double eff = wm * (1.0 - (p - pm) / gamma);
      x = demand_at_price(u, k, eff, g.capacity);
      if (!std::isfinite(p) || !std::isfinite(x) || !std::isfinite(eff)) {
        std::ostringstream os;
        os << "best response of agent '" << instance.agent_id(i) << "' at round " << state.round << " for good '"
           << instance.good(l).id << "' is not finite: kappa=" << state.kappa << " w_-i=" << wm << " p_-i=" << pm
           << " E_-i=" << em << " p=" << p << " eff=" << eff << " x=" << x;
        throw BestResponseError(i, state.round, os.str());
      }
    }
    out.demands[k] = x;
    out.prices[k] = p;
  }
  return out;
}

StationarityReport detect_stationary(const MarketInstance& instance, const MechanismState& state, double gamma,
                                     double tol) {
  StationarityReport r;
  const double M = instance.price_bound();
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const GoodProfile g = gather(instance, state, l);
    const auto [pmin, pmax] = std::minmax_element(g.price.begin(), g.price.end());
    const double spread = *pmax - *pmin;
    r.price_spread = std::max(r.price_spread, spread);
    r.price_spread_norm = std::max(r.price_spread_norm, spread / M);

    double total = 0.0;
    for (double x : g.demand) total += x;
    const double excess = total - g.capacity;
    const double demand_scale = g.capacity > 0.0 ? g.capacity : 1.0;
    r.overshoot = std::max(r.overshoot, excess);
    for (std::size_t m = 0; m < g.size(); ++m) {
      // same predicate as the penalty's indicators
      if (g.demand[m] > 0.0 && excess_demands(g, m).others + g.demand[m] > 0.0) r.penalty_active = true;
    }

    const auto members = instance.members(l);
    const auto slots = instance.member_slots(l);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const double slack = std::abs(g.weight[m] * excess / gamma);
      r.slackness = std::max(r.slackness, slack);
      r.slackness_norm = std::max(r.slackness_norm, slack / (M * demand_scale));

      const double x = g.demand[m];
      const double grad = instance.utility(members[m]).marginal(slots[m], x);
      const double wm = mean_weight_excl(g.weight, m);
      double mismatch;
      if (x <= 0.0) {
        mismatch = std::max(0.0, grad - wm);
      } else if (x >= g.capacity) {
        mismatch = std::max(0.0, wm - grad);
      } else {
        mismatch = std::abs(grad - wm);
      }
      r.gradient = std::max(r.gradient, mismatch);
      r.gradient_norm = std::max(r.gradient_norm, mismatch / M);
    }
  }
  r.is_stationary =
      !r.penalty_active && r.price_spread_norm <= tol && r.slackness_norm <= tol && r.gradient_norm <= tol;
  return r;
}

TraceRecord make_record(const MarketInstance& instance, const MechanismState& state, const DynamicsConfig& config) {
  TraceRecord rec;
  rec.round = state.round;
  rec.kappa = state.kappa;
  rec.messages = state.messages;
  rec.weights.resize(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    for (std::size_t k = 0; k < state.weight_accum[i].size(); ++k) rec.weights[i].push_back(state.weight(i, k));
  }
  rec.taxes = assemble_taxes(instance, state, config.tax_params(), TaxMode::Full);
  rec.budget_residual = rec.taxes.transfer_sum();
  rec.budget_scale = rec.taxes.transfer_scale();
  rec.penalty_total = rec.taxes.penalty_sum();

  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const GoodProfile g = gather(instance, state, l);
    const auto [pmin, pmax] = std::minmax_element(g.price.begin(), g.price.end());
    rec.price_dispersion = std::max(rec.price_dispersion, *pmax - *pmin);
    double total = 0.0;
    for (double x : g.demand) total += x;
    rec.capacity_residual.push_back(total - g.capacity);
    rec.lagged_mean_weight.push_back(state.lagged_mean_accum[l] / state.kappa);
  }
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    rec.payoffs.push_back(utility_eval(instance.utility(i), state.messages[i].demands) - rec.taxes.agents[i].total);
    double disp = 0.0;
    const auto goods = instance.goods_of(i);
    for (std::size_t k = 0; k < goods.size(); ++k) {
      const double d = rec.weights[i][k] - rec.lagged_mean_weight[goods[k]];
      disp += d * d;
    }
    rec.weight_dispersion.push_back(disp);
  }
  return rec;
}

MechanismState state_from_record(const TraceRecord& record, std::uint64_t seed) {
  MechanismState s;
  s.round = record.round;
  s.messages = record.messages;
  s.kappa = record.kappa;
  s.rng_seed = seed;
  for (const auto& w : record.weights) {
    std::vector<double> acc;
    for (double v : w) acc.push_back(v * record.kappa);
    s.weight_accum.push_back(std::move(acc));
  }
  for (double v : record.lagged_mean_weight) s.lagged_mean_accum.push_back(v * record.kappa);
  return s;
}

StepResult step(const MarketInstance& instance, const MechanismState& state, const DynamicsConfig& config) {
  std::vector<Message> next(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) next[i] = best_response(instance, state, i, config);
  MechanismState s = update_weights(instance, state, std::move(next), config.theta);
  TraceRecord rec = make_record(instance, s, config);
  return {std::move(s), std::move(rec)};
}

Trace run(const MarketInstance& instance, const DynamicsConfig& config, const RoundObserver& observer) {
  config.validate();
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    if (instance.members(l).size() < 3) {
      throw InstanceError("good '" + instance.good(l).id + "' has " + std::to_string(instance.members(l).size()) +
                          " participants; the mechanism needs at least three");
    }
  }
  Trace trace;
  trace.initial = initial_state(instance, initial_profile(instance, config), config.theta, config.seed);
  MechanismState state = trace.initial;
  trace.final_report = detect_stationary(instance, state, config.gamma, config.stationarity_tol);
  trace.reason = Termination::RoundCap;
  if (trace.final_report.is_stationary) {
    trace.reason = Termination::Stationary;
  } else {
    for (std::size_t r = 0; r < config.max_rounds; ++r) {
      StepResult res = step(instance, state, config);
      state = std::move(res.state);
      if (!observer || observer(res.record)) trace.records.push_back(std::move(res.record));
      trace.final_report = detect_stationary(instance, state, config.gamma, config.stationarity_tol);
      if (trace.final_report.is_stationary) {
        trace.reason = Termination::Stationary;
        break;
      }
    }
  }
  trace.final_state = std::move(state);
  return trace;
}

}  // namespace bbmech

#include "bbmech/mechanism.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace bbmech {

ThetaSchedule ThetaSchedule::power(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("theta exponent must lie in (0, 1] for divergent partial sums");
  }
  return ThetaSchedule(alpha);
}

ThetaSchedule ThetaSchedule::parse(std::string_view text) {
  if (text == "harmonic") return harmonic();
  constexpr std::string_view prefix = "pow:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string_view num = text.substr(prefix.size());
    double alpha = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), alpha);
    if (ec == std::errc() && ptr == num.data() + num.size()) return power(alpha);
  }
  throw std::invalid_argument("unrecognized theta schedule '" + std::string(text) +
                              "' (expected 'harmonic' or 'pow:<alpha>')");
}

double ThetaSchedule::operator()(std::size_t n) const {
  if (n == 0) throw std::invalid_argument("theta is defined for n >= 1");
  const double dn = static_cast<double>(n);
  return alpha_ == 1.0 ? 1.0 / dn : std::pow(dn, -alpha_);
}

std::string ThetaSchedule::to_string() const {
  if (alpha_ == 1.0) return "harmonic";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, alpha_);
  return "pow:" + std::string(buf, ptr);
}

std::string to_string(SubsidySplit split) {
  return split == SubsidySplit::RandomRecipient ? "random-recipient" : "complement-equal";
}

std::optional<SubsidySplit> parse_subsidy_split(std::string_view name) {
  if (name == "random-recipient") return SubsidySplit::RandomRecipient;
  if (name == "complement-equal") return SubsidySplit::ComplementEqual;
  return std::nullopt;
}

double default_gamma(const MarketInstance& instance) {
  return 1e3 * instance.max_capacity() * instance.price_bound();
}

// ---------------------------------------------------------------------------

void validate_profile(const MarketInstance& instance, std::span<const Message> messages) {
  if (messages.size() != instance.num_agents()) {
    throw std::invalid_argument("profile must hold one message per agent");
  }
  const double M = instance.price_bound();
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto goods = instance.goods_of(i);
    const Message& m = messages[i];
    if (m.demands.size() != goods.size() || m.prices.size() != goods.size()) {
      throw std::invalid_argument("message of agent '" + instance.agent_id(i) +
                                  "' does not match its goods list");
    }
    for (std::size_t k = 0; k < goods.size(); ++k) {
      const double c = instance.good(goods[k]).capacity;
      if (!(m.demands[k] >= 0.0 && m.demands[k] <= c) || !(m.prices[k] >= 0.0 && m.prices[k] <= M)) {
        std::ostringstream os;
        os << "message of agent '" << instance.agent_id(i) << "' for good '"
           << instance.good(goods[k]).id << "' outside the message space: x=" << m.demands[k]
           << " (cap " << c << "), p=" << m.prices[k] << " (bound " << M << ")";
        throw std::invalid_argument(os.str());
      }
    }
  }
}

namespace {

double member_mean_price(const MarketInstance& instance, std::span<const Message> messages,
                         std::size_t l) {
  const auto members = instance.members(l);
  const auto slots = instance.member_slots(l);
  double s = 0.0;
  for (std::size_t m = 0; m < members.size(); ++m) s += messages[members[m]].prices[slots[m]];
  return s / static_cast<double>(members.size());
}

}  // namespace

MechanismState initial_state(const MarketInstance& instance, std::vector<Message> profile,
                             const ThetaSchedule& theta, std::uint64_t seed) {
  validate_profile(instance, profile);
  MechanismState s;
  s.round = 1;
  s.rng_seed = seed;
  const double t1 = theta(1);
  s.kappa = t1;
  s.weight_accum.resize(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) {
    for (double p : profile[i].prices) s.weight_accum[i].push_back(t1 * p);
  }
  // The lagged average starts from an undefined round-0 mean; use round 1's.
  s.lagged_mean_accum.resize(instance.num_goods());
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    s.lagged_mean_accum[l] = t1 * member_mean_price(instance, profile, l);
  }
  s.messages = std::move(profile);
  return s;
}

MechanismState update_weights(const MarketInstance& instance, const MechanismState& state,
                              std::vector<Message> next, const ThetaSchedule& theta) {
  validate_profile(instance, next);
  MechanismState s = state;
  const double t = theta(state.round + 1);
  for (std::size_t i = 0; i < next.size(); ++i) {
    for (std::size_t k = 0; k < next[i].prices.size(); ++k) s.weight_accum[i][k] += t * next[i].prices[k];
  }
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    s.lagged_mean_accum[l] += t * member_mean_price(instance, state.messages, l);
  }
  s.kappa += t;
  s.round = state.round + 1;
  s.messages = std::move(next);
  return s;
}

GoodProfile gather(const MarketInstance& instance, const MechanismState& state, std::size_t l) {
  GoodProfile g;
  g.capacity = instance.good(l).capacity;
  const auto members = instance.members(l);
  const auto slots = instance.member_slots(l);
  for (std::size_t m = 0; m < members.size(); ++m) {
    const std::size_t i = members[m];
    const std::size_t k = slots[m];
    g.demand.push_back(state.messages[i].demands[k]);
    g.price.push_back(state.messages[i].prices[k]);
    g.weight.push_back(state.weight(i, k));
  }
  return g;
}

// ---------------------------------------------------------------------------

double mean_price(std::span<const double> prices) {
  if (prices.empty()) throw StructuralError("mean over an empty participant set");
  return std::accumulate(prices.begin(), prices.end(), 0.0) / static_cast<double>(prices.size());
}

double mean_price_excl(std::span<const double> prices, std::size_t k) {
  if (prices.size() < 2) throw StructuralError("mean over an empty participant set");
  double s = 0.0;
  for (std::size_t j = 0; j < prices.size(); ++j) {
    if (j != k) s += prices[j];
  }
  return s / static_cast<double>(prices.size() - 1);
}

double mean_weight_excl(std::span<const double> weights, std::size_t k) {
  return mean_price_excl(weights, k);
}

ExcessDemand excess_demands(const GoodProfile& g, std::size_t k) {
  const std::size_t n = g.size();
  double others = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != k) others += g.demand[j];
  }
  return {others - g.capacity, static_cast<double>(n - 1) * g.demand[k] - g.capacity};
}

namespace {

// Power sums over the members other than k. Pair and triple sums over
// distinct indices follow by inclusion-exclusion.
struct OtherSums {
  double P1 = 0, X1 = 0, W1 = 0, E1 = 0;
  double PX = 0, XW = 0, PW = 0, PE = 0, EW = 0;
  double PXW = 0, PEW = 0;
  double centered_p2 = 0;  // sum (p_j - mean p)^2

  OtherSums(const GoodProfile& g, std::size_t k) {
    const std::size_t n = g.size();
    const double n1 = static_cast<double>(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == k) continue;
      const double p = g.price[j], x = g.demand[j], w = g.weight[j];
      const double e = n1 * x - g.capacity;
      P1 += p;
      X1 += x;
      W1 += w;
      E1 += e;
      PX += p * x;
      XW += x * w;
      PW += p * w;
      PE += p * e;
      EW += e * w;
      PXW += p * x * w;
      PEW += p * e * w;
    }
    const double pm = P1 / n1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != k) centered_p2 += (g.price[j] - pm) * (g.price[j] - pm);
    }
  }

  // sum_{j != r} x_j w_r
  double pair_x_w() const { return X1 * W1 - XW; }
  // sum_{j != r} p_j x_j w_r
  double pair_px_w() const { return PX * W1 - PXW; }
  // sum_{j != r} p_r E_j w_j
  double pair_p_ew() const { return P1 * EW - PEW; }
  // sum_{j != r} p_r x_j w_r
  double pair_x_pw() const { return X1 * PW - PXW; }
  // sum over distinct (j, q, r) of x_j p_q w_r
  double triple_x_p_w() const { return X1 * P1 * W1 - PX * W1 - XW * P1 - PW * X1 + 2.0 * PXW; }
  // sum over distinct (j, q, r) of E_j w_q p_r
  double triple_e_w_p() const { return E1 * W1 * P1 - EW * P1 - PE * W1 - PW * E1 + 2.0 * PEW; }
};

}  // namespace

PsiTerms psi_terms(const GoodProfile& g, std::size_t k, double kappa, double gamma) {
  const std::size_t n = g.size();
  if (n < 3) throw StructuralError("balancing aggregates need at least three participants");
  const OtherSums s(g, k);
  const double N = static_cast<double>(n);
  const double n1 = N - 1.0, n2 = N - 2.0, n3 = N - 3.0;
  const bool has_triples = n > 3;

  PsiTerms psi;
  psi.psi1 = s.pair_x_w() / (n2 * n1);
  psi.psi2 = n1 / (kappa * N * n2) * s.centered_p2;
  psi.psi3 = -s.pair_px_w() / (gamma * n2 * n1);
  psi.psi4 = -(s.pair_p_ew() / (n1 * n1 * gamma * n2));
  psi.psi5 = s.pair_x_pw() / (n1 * n1 * gamma * n2);
  if (has_triples) {
    psi.psi4 -= s.triple_e_w_p() / (n1 * n1 * gamma * n3);
    psi.psi5 += s.triple_x_p_w() / (n1 * n1 * gamma * n3);
  }
  return psi;
}

double balancing_term(const GoodProfile& g, std::size_t k, double kappa, double gamma) {
  if (g.size() < 3) throw StructuralError("balancing term needs at least three participants");
  const PsiTerms psi = psi_terms(g, k, kappa, gamma);
  const double wm = mean_weight_excl(g.weight, k);
  const double pm = mean_price_excl(g.price, k);
  const double e_minus = excess_demands(g, k).others;
  return -(psi.psi1 + psi.psi2 + psi.psi3 + psi.psi4 + psi.psi5 + wm * pm * e_minus / gamma);
}

double capacity_penalty(double own_demand, double others_excess, double epsilon) {
  const double first = own_demand > 0.0 ? 1.0 - epsilon : 0.0;
  const double second = others_excess + own_demand > 0.0 ? 1.0 - epsilon : 0.0;
  const double prod = first * second;
  return prod / (1.0 - prod);
}

TaxBreakdown tax(const GoodProfile& g, std::size_t k, double kappa, const TaxParams& params,
                 TaxMode mode) {
  const std::size_t n = g.size();
  if (n < 2) throw StructuralError("tax needs at least two participants");
  const double x = g.demand[k];
  const double p = g.price[k];
  const double wm = mean_weight_excl(g.weight, k);
  const double pm = mean_price_excl(g.price, k);
  const double pb = mean_price(g.price);
  const ExcessDemand e = excess_demands(g, k);

  TaxBreakdown t;
  t.upsilon1 = wm * x;
  t.upsilon2 = (p - pb) * (p - pb) / kappa - wm * (p - pm) * (x + e.others) / params.gamma;
  if (mode == TaxMode::Full) t.penalty = capacity_penalty(x, e.others, params.epsilon);
  t.upsilon3 = n > 2 ? balancing_term(g, k, kappa, params.gamma) : 0.0;
  t.recompute_total();
  return t;
}

double three_agent_subsidy(const GoodProfile& g, double gamma) {
  if (g.size() != 3) throw StructuralError("three-participant subsidy applies only when |A_l| = 3");
  const double c = g.capacity;
  double remainder = 0.0;
  // distinct ordered triples of the three members
  static constexpr std::size_t perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                              {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& t : perms) {
    const std::size_t j = t[0], q = t[1], r = t[2];
    const double ej = 2.0 * g.demand[j] - c;
    remainder += g.price[q] * g.demand[j] * g.weight[r] - g.price[r] * ej * g.weight[q];
  }
  return -remainder / (4.0 * gamma);
}

std::size_t subsidy_recipient(std::uint64_t seed, std::size_t round, std::size_t good, std::size_t n) {
  if (n == 0) throw StructuralError("no subsidy recipient candidates");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(round >> 32),
                    static_cast<std::uint32_t>(good)};
  std::mt19937_64 engine(seq);
  // unbiased index without relying on implementation-defined distributions
  const std::uint64_t range = engine.max() - engine.max() % n;
  std::uint64_t v = engine();
  while (v >= range) v = engine();
  return static_cast<std::size_t>(v % n);
}

// ---------------------------------------------------------------------------

double AgentTax::row_sum() const {
  double s = 0.0;
  for (const auto& b : goods) s += b.total - b.q_subsidy;
  return s;
}

double AgentTax::penalty() const {
  double s = 0.0;
  for (const auto& b : goods) s += b.penalty;
  return s;
}

double TaxAssessment::transfer_sum() const {
  double s = 0.0;
  for (const auto& a : agents) s += a.total - a.penalty();
  return s;
}

double TaxAssessment::transfer_scale() const {
  double s = 0.0;
  for (const auto& a : agents) s += std::abs(a.total - a.penalty());
  return s;
}

double TaxAssessment::penalty_sum() const {
  double s = 0.0;
  for (const auto& a : agents) s += a.penalty();
  return s;
}

TaxAssessment assemble_taxes(const MarketInstance& instance, const MechanismState& state,
                             const TaxParams& params, TaxMode mode) {
  TaxAssessment out;
  out.agents.resize(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    out.agents[i].goods.resize(instance.goods_of(i).size());
  }
  out.subsidies.resize(instance.num_goods());

  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const GoodProfile g = gather(instance, state, l);
    const auto members = instance.members(l);
    const auto slots = instance.member_slots(l);
    for (std::size_t m = 0; m < members.size(); ++m) {
      out.agents[members[m]].goods[slots[m]] = tax(g, m, state.kappa, params, mode);
    }
    if (members.size() != 3) continue;

    GoodSubsidy sub;
    sub.amount = three_agent_subsidy(g, params.gamma);
    if (params.split == SubsidySplit::ComplementEqual) {
      for (std::size_t i = 0; i < instance.num_agents(); ++i) {
        if (std::find(members.begin(), members.end(), i) == members.end()) sub.recipients.push_back(i);
      }
    }
    if (sub.recipients.empty()) {
      // random member; also the fallback when every agent participates in l
      const std::size_t pos = subsidy_recipient(state.rng_seed, state.round, l, members.size());
      sub.recipients.push_back(members[pos]);
      auto& b = out.agents[members[pos]].goods[slots[pos]];
      b.q_subsidy += sub.amount;
      b.recompute_total();
    } else {
      const double share = sub.amount / static_cast<double>(sub.recipients.size());
      for (std::size_t i : sub.recipients) out.agents[i].subsidy_share += share;
    }
    out.subsidies[l] = std::move(sub);
  }

  for (auto& a : out.agents) {
    a.total = a.subsidy_share;
    for (const auto& b : a.goods) a.total += b.total;
  }
  return out;
}

}  // namespace bbmech

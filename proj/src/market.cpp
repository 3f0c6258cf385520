#include "bbmech/market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace bbmech {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_positive(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      std::ostringstream os;
      os << "utility parameter " << what << " must be positive and finite, got " << x;
      throw InstanceError(os.str());
    }
  }
}

void require_domain(double xk) {
  if (std::isnan(xk) || xk < 0.0) {
    std::ostringstream os;
    os << "demand " << xk << " outside utility domain (x >= 0)";
    throw DomainError(os.str());
  }
}

}  // namespace

std::string to_string(UtilityFamily family) {
  switch (family) {
    case UtilityFamily::ScaledLog:
      return "scaled-log";
    case UtilityFamily::Isoelastic:
      return "isoelastic";
    case UtilityFamily::SaturatingQuadratic:
      return "saturating-quadratic";
  }
  return "unknown";
}

std::optional<UtilityFamily> parse_utility_family(std::string_view name) {
  if (name == "scaled-log") return UtilityFamily::ScaledLog;
  if (name == "isoelastic") return UtilityFamily::Isoelastic;
  if (name == "saturating-quadratic") return UtilityFamily::SaturatingQuadratic;
  return std::nullopt;
}

UtilityFunction::UtilityFunction(Variant v) : params_(std::move(v)) {
  std::visit(Overloaded{
                 [](const ScaledLog& f) { require_positive(f.a, "a"); },
                 [](const Isoelastic& f) {
                   require_positive(f.a, "a");
                   if (!(f.beta > 0.0 && f.beta < 1.0)) {
                     throw InstanceError("isoelastic beta must lie in (0, 1)");
                   }
                 },
                 [](const SaturatingQuadratic& f) {
                   require_positive(f.a, "a");
                   require_positive(f.b, "b");
                   if (f.a.size() != f.b.size()) {
                     throw InstanceError("saturating-quadratic a and b differ in length");
                   }
                 },
             },
             params_);
  if (dimension() == 0) throw InstanceError("utility must cover at least one good");
}

UtilityFamily UtilityFunction::family() const {
  return std::visit(Overloaded{
                        [](const ScaledLog&) { return UtilityFamily::ScaledLog; },
                        [](const Isoelastic&) { return UtilityFamily::Isoelastic; },
                        [](const SaturatingQuadratic&) { return UtilityFamily::SaturatingQuadratic; },
                    },
                    params_);
}

std::size_t UtilityFunction::dimension() const {
  return std::visit([](const auto& f) { return f.a.size(); }, params_);
}

double UtilityFunction::component(std::size_t k, double xk) const {
  require_domain(xk);
  return std::visit(Overloaded{
                        [&](const ScaledLog& f) { return f.a.at(k) * std::log1p(xk); },
                        [&](const Isoelastic& f) { return f.a.at(k) * std::pow(xk, f.beta) / f.beta; },
                        [&](const SaturatingQuadratic& f) {
                          const double x = std::min(xk, f.a.at(k) / f.b.at(k));
                          return f.a[k] * x - 0.5 * f.b[k] * x * x;
                        },
                    },
                    params_);
}

double UtilityFunction::marginal(std::size_t k, double xk) const {
  require_domain(xk);
  return std::visit(Overloaded{
                        [&](const ScaledLog& f) { return f.a.at(k) / (1.0 + xk); },
                        [&](const Isoelastic& f) {
                          // one-sided derivative at 0 is unbounded
                          if (xk == 0.0) return std::numeric_limits<double>::infinity();
                          return f.a.at(k) * std::pow(xk, f.beta - 1.0);
                        },
                        [&](const SaturatingQuadratic& f) {
                          return std::max(0.0, f.a.at(k) - f.b.at(k) * xk);
                        },
                    },
                    params_);
}

double UtilityFunction::inverse_marginal(std::size_t k, double w) const {
  return std::visit(Overloaded{
                        [&](const ScaledLog& f) { return std::max(0.0, f.a.at(k) / w - 1.0); },
                        [&](const Isoelastic& f) { return std::pow(w / f.a.at(k), 1.0 / (f.beta - 1.0)); },
                        [&](const SaturatingQuadratic& f) {
                          return std::max(0.0, (f.a.at(k) - w) / f.b.at(k));
                        },
                    },
                    params_);
}

double UtilityFunction::satiation(std::size_t k) const {
  return std::visit(Overloaded{
                        [](const ScaledLog&) { return std::numeric_limits<double>::infinity(); },
                        [](const Isoelastic&) { return std::numeric_limits<double>::infinity(); },
                        [&](const SaturatingQuadratic& f) { return f.a.at(k) / f.b.at(k); },
                    },
                    params_);
}

UtilityFunction UtilityFunction::scaled(double s) const {
  if (!(s > 0.0)) throw std::invalid_argument("utility scale factor must be positive");
  Variant v = params_;
  std::visit(Overloaded{
                 [&](ScaledLog& f) {
                   for (double& a : f.a) a *= s;
                 },
                 [&](Isoelastic& f) {
                   for (double& a : f.a) a *= s;
                 },
                 [&](SaturatingQuadratic& f) {
                   for (double& a : f.a) a *= s;
                   for (double& b : f.b) b *= s;
                 },
             },
             v);
  return UtilityFunction(std::move(v));
}

double utility_eval(const UtilityFunction& u, std::span<const double> x) {
  if (x.size() != u.dimension()) throw std::invalid_argument("demand vector has wrong dimension");
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) total += u.component(k, x[k]);
  return total;
}

std::vector<double> utility_grad(const UtilityFunction& u, std::span<const double> x) {
  if (x.size() != u.dimension()) throw std::invalid_argument("demand vector has wrong dimension");
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) g[k] = u.marginal(k, x[k]);
  return g;
}

double grad_inverse(const UtilityFunction& u, std::size_t k, double w) {
  if (!(w > 0.0)) {
    std::ostringstream os;
    os << "grad_inverse needs a positive marginal price, got " << w;
    throw std::invalid_argument(os.str());
  }
  return u.inverse_marginal(k, w);
}

double demand_at_price(const UtilityFunction& u, std::size_t k, double price, double cap) {
  const double x = price > 0.0 ? u.inverse_marginal(k, price) : u.satiation(k);
  return std::clamp(x, 0.0, cap);
}

// ---------------------------------------------------------------------------

double MarketInstance::max_capacity() const {
  double m = 0.0;
  for (const auto& g : goods_) m = std::max(m, g.capacity);
  return m;
}

std::optional<std::size_t> MarketInstance::local_index(std::size_t i, std::size_t l) const {
  const auto& goods = agent_goods_.at(i);
  auto it = std::find(goods.begin(), goods.end(), l);
  if (it == goods.end()) return std::nullopt;
  return static_cast<std::size_t>(it - goods.begin());
}

std::optional<std::size_t> MarketInstance::find_good(std::string_view id) const {
  for (std::size_t l = 0; l < goods_.size(); ++l) {
    if (goods_[l].id == id) return l;
  }
  return std::nullopt;
}

std::optional<std::size_t> MarketInstance::find_agent(std::string_view id) const {
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    if (agents_[i].id == id) return i;
  }
  return std::nullopt;
}

MarketInstance build_instance(const InstanceConfig& config, const BuildOptions& options) {
  if (config.agents.empty()) throw InstanceError("instance needs at least one agent");
  if (config.goods.empty()) throw InstanceError("instance needs at least one good");
  if (!(config.price_bound > 0.0) || !std::isfinite(config.price_bound)) {
    throw InstanceError("price bound M must be positive and finite");
  }

  MarketInstance inst;
  inst.config_ = config;
  inst.goods_ = config.goods;
  inst.agents_ = config.agents;
  inst.price_bound_ = config.price_bound;

  std::map<std::string, std::size_t> good_index;
  for (std::size_t l = 0; l < config.goods.size(); ++l) {
    const auto& g = config.goods[l];
    if (g.id.empty()) throw InstanceError("good id must be non-empty");
    if (!good_index.emplace(g.id, l).second) throw InstanceError("duplicate good id '" + g.id + "'");
    if (!(g.capacity >= 0.0) || !std::isfinite(g.capacity)) {
      throw InstanceError("good '" + g.id + "' has negative or non-finite capacity");
    }
  }

  std::set<std::string> agent_ids;
  inst.agent_goods_.resize(config.agents.size());
  inst.members_.resize(config.goods.size());
  inst.member_slots_.resize(config.goods.size());
  for (std::size_t i = 0; i < config.agents.size(); ++i) {
    const auto& a = config.agents[i];
    if (a.id.empty()) throw InstanceError("agent id must be non-empty");
    if (!agent_ids.insert(a.id).second) throw InstanceError("duplicate agent id '" + a.id + "'");
    if (a.goods.empty()) throw InstanceError("agent '" + a.id + "' requests no goods");
    if (a.utility.dimension() != a.goods.size()) {
      throw InstanceError("agent '" + a.id + "' utility dimension does not match its goods list");
    }
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < a.goods.size(); ++k) {
      auto it = good_index.find(a.goods[k]);
      if (it == good_index.end()) {
        throw InstanceError("agent '" + a.id + "' requests unknown good '" + a.goods[k] + "'");
      }
      if (!seen.insert(it->second).second) {
        throw InstanceError("agent '" + a.id + "' lists good '" + a.goods[k] + "' twice");
      }
      inst.agent_goods_[i].push_back(it->second);
      inst.members_[it->second].push_back(i);
      inst.member_slots_[it->second].push_back(k);
    }
  }

  for (std::size_t l = 0; l < config.goods.size(); ++l) {
    if (inst.members_[l].size() < options.min_participants) {
      std::ostringstream os;
      os << "participation below minimum: good '" << config.goods[l].id << "' has "
         << inst.members_[l].size() << " participants, needs at least " << options.min_participants;
      throw InstanceError(os.str());
    }
  }
  return inst;
}

}  // namespace bbmech

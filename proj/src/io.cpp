#include "bbmech/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace bbmech {

FormatError::FormatError(const std::string& where, const std::string& what)
    : std::invalid_argument(where.empty() ? what : where + ": " + what), where_(where) {}

const std::vector<std::string>& check_families() {
  static const std::vector<std::string> families{"budget", "capacity", "stationary", "ir", "convergence"};
  return families;
}

namespace {

std::string at_key(const std::string& base, std::string_view key) { return base + "." + std::string(key); }
std::string at_index(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

void expect_object(const Json& j, const std::string& where, std::initializer_list<std::string_view> allowed,
                   std::initializer_list<std::string_view> required = {}) {
  if (!j.is_object()) throw FormatError(where, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw FormatError(at_key(where, key), "unknown field");
    }
  }
  for (std::string_view key : required) {
    if (!j.contains(key)) throw FormatError(at_key(where, key), "required field missing");
  }
}

const Json& member(const Json& j, std::string_view key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(at_key(where, key), "required field missing");
  return *it;
}

double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw FormatError(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw FormatError(where, "expected a finite number");
  return v;
}

std::uint64_t as_count(const Json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw FormatError(where, "expected a nonnegative integer");
}

std::string as_string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw FormatError(where, "expected a string");
  return j.get<std::string>();
}

bool as_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) throw FormatError(where, "expected a boolean");
  return j.get<bool>();
}

const Json& as_array(const Json& j, const std::string& where) {
  if (!j.is_array()) throw FormatError(where, "expected an array");
  return j;
}

std::vector<double> as_numbers(const Json& j, const std::string& where) {
  std::vector<double> out;
  for (std::size_t i = 0; i < as_array(j, where).size(); ++i) out.push_back(as_number(j[i], at_index(where, i)));
  return out;
}

double number_field(const Json& j, std::string_view key, const std::string& where) {
  return as_number(member(j, key, where), at_key(where, key));
}

template <class T, class F>
T optional_field(const Json& j, std::string_view key, T fallback, F&& read) {
  auto it = j.find(key);
  return it == j.end() ? fallback : read(*it);
}

Json numbers(const std::vector<double>& v) { return Json(v); }

// --- utilities -----------------------------------------------------------------

Json utility_to_json(const UtilityFunction& u) {
  Json j;
  j["family"] = to_string(u.family());
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        j["a"] = numbers(p.a);
        if constexpr (std::is_same_v<T, Isoelastic>) j["beta"] = p.beta;
        if constexpr (std::is_same_v<T, SaturatingQuadratic>) j["b"] = numbers(p.b);
      },
      u.parameters());
  return j;
}

UtilityFunction utility_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw FormatError(where, "expected an object");
  const std::string name = as_string(member(j, "family", where), at_key(where, "family"));
  const auto family = parse_utility_family(name);
  if (!family) throw FormatError(at_key(where, "family"), "unknown utility family '" + name + "'");
  try {
    switch (*family) {
      case UtilityFamily::ScaledLog:
        expect_object(j, where, {"family", "a"}, {"a"});
        return UtilityFunction(ScaledLog{as_numbers(j["a"], at_key(where, "a"))});
      case UtilityFamily::Isoelastic:
        expect_object(j, where, {"family", "a", "beta"}, {"a", "beta"});
        return UtilityFunction(
            Isoelastic{as_numbers(j["a"], at_key(where, "a")), number_field(j, "beta", where)});
      case UtilityFamily::SaturatingQuadratic:
        expect_object(j, where, {"family", "a", "b"}, {"a", "b"});
        return UtilityFunction(
            SaturatingQuadratic{as_numbers(j["a"], at_key(where, "a")), as_numbers(j["b"], at_key(where, "b"))});
    }
  } catch (const InstanceError& e) {
    throw FormatError(where, e.what());
  }
  throw FormatError(where, "unknown utility family");
}

// --- messages ----------------------------------------------------------------

Json message_to_json(const std::string& agent, const Message& m) {
  Json j;
  j["agent"] = agent;
  j["demands"] = numbers(m.demands);
  j["prices"] = numbers(m.prices);
  return j;
}

Message message_from_json(const Json& j, const std::string& expected_agent, const std::string& where) {
  expect_object(j, where, {"agent", "demands", "prices"}, {"agent", "demands", "prices"});
  const std::string agent = as_string(j["agent"], at_key(where, "agent"));
  if (!expected_agent.empty() && agent != expected_agent) {
    throw FormatError(at_key(where, "agent"), "expected agent '" + expected_agent + "', found '" + agent + "'");
  }
  return {as_numbers(j["demands"], at_key(where, "demands")), as_numbers(j["prices"], at_key(where, "prices"))};
}

std::vector<Message> messages_from_json(const Json& j, const std::vector<std::string>& agents,
                                        const std::string& where) {
  as_array(j, where);
  if (j.size() != agents.size()) {
    throw FormatError(where, "expected " + std::to_string(agents.size()) + " messages, found " +
                                 std::to_string(j.size()));
  }
  std::vector<Message> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(message_from_json(j[i], agents[i], at_index(where, i)));
  return out;
}

std::vector<std::string> agent_ids(const InstanceConfig& config) {
  std::vector<std::string> ids;
  for (const auto& a : config.agents) ids.push_back(a.id);
  return ids;
}

std::vector<std::string> agent_ids(const MarketInstance& instance) { return agent_ids(instance.config()); }

// --- configs -----------------------------------------------------------------

DynamicsConfig dynamics_from_json(const Json& j, const std::vector<std::string>& agents, std::optional<double>& gamma,
                                  const std::string& where) {
  expect_object(j, where,
                {"gamma", "epsilon", "theta", "max_rounds", "stationarity_tol", "best_response_passes", "initial",
                 "subsidy_split", "seed"},
                {"gamma", "epsilon"});
  DynamicsConfig c;
  const Json& g = j["gamma"];
  if (g.is_string()) {
    if (g.get<std::string>() != "default") throw FormatError(at_key(where, "gamma"), "expected a number or \"default\"");
    gamma.reset();
  } else {
    gamma = as_number(g, at_key(where, "gamma"));
    if (!(*gamma > 0.0)) throw FormatError(at_key(where, "gamma"), "must be positive");
  }
  c.epsilon = number_field(j, "epsilon", where);
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) throw FormatError(at_key(where, "epsilon"), "must lie in (0, 1)");
  if (auto it = j.find("theta"); it != j.end()) {
    try {
      c.theta = ThetaSchedule::parse(as_string(*it, at_key(where, "theta")));
    } catch (const std::invalid_argument& e) {
      throw FormatError(at_key(where, "theta"), e.what());
    }
  }
  c.max_rounds = optional_field(j, "max_rounds", c.max_rounds,
                                [&](const Json& v) { return as_count(v, at_key(where, "max_rounds")); });
  c.stationarity_tol = optional_field(j, "stationarity_tol", c.stationarity_tol,
                                      [&](const Json& v) { return as_number(v, at_key(where, "stationarity_tol")); });
  if (!(c.stationarity_tol > 0.0)) throw FormatError(at_key(where, "stationarity_tol"), "must be positive");
  c.best_response_passes =
      optional_field(j, "best_response_passes", c.best_response_passes,
                     [&](const Json& v) { return as_count(v, at_key(where, "best_response_passes")); });
  if (c.best_response_passes == 0) throw FormatError(at_key(where, "best_response_passes"), "must be at least 1");
  c.seed = optional_field(j, "seed", c.seed, [&](const Json& v) { return as_count(v, at_key(where, "seed")); });
  if (auto it = j.find("subsidy_split"); it != j.end()) {
    const std::string name = as_string(*it, at_key(where, "subsidy_split"));
    const auto split = parse_subsidy_split(name);
    if (!split) throw FormatError(at_key(where, "subsidy_split"), "unknown split '" + name + "'");
    c.split = *split;
  }
  if (auto it = j.find("initial"); it != j.end()) {
    const std::string w = at_key(where, "initial");
    expect_object(*it, w, {"kind", "messages"}, {"kind"});
    const std::string name = as_string((*it)["kind"], at_key(w, "kind"));
    const auto kind = parse_initial_profile_kind(name);
    if (!kind) throw FormatError(at_key(w, "kind"), "unknown initial profile '" + name + "'");
    c.initial = *kind;
    if (c.initial == InitialProfileKind::Explicit) {
      c.initial_messages = messages_from_json(member(*it, "messages", w), agents, at_key(w, "messages"));
    } else if (it->contains("messages")) {
      throw FormatError(at_key(w, "messages"), "only allowed with kind \"explicit\"");
    }
  }
  return c;
}

OracleConfig oracle_from_json(const Json& j, const std::string& where) {
  expect_object(j, where, {"tol", "feasibility_tol", "max_iterations", "step_scale"});
  OracleConfig c;
  c.tol = optional_field(j, "tol", c.tol, [&](const Json& v) { return as_number(v, at_key(where, "tol")); });
  c.feasibility_tol = optional_field(j, "feasibility_tol", c.feasibility_tol,
                                     [&](const Json& v) { return as_number(v, at_key(where, "feasibility_tol")); });
  c.max_iterations = optional_field(j, "max_iterations", c.max_iterations,
                                    [&](const Json& v) { return as_count(v, at_key(where, "max_iterations")); });
  c.step_scale = optional_field(j, "step_scale", c.step_scale,
                                [&](const Json& v) { return as_number(v, at_key(where, "step_scale")); });
  if (!(c.tol > 0.0) || !(c.feasibility_tol > 0.0) || !(c.step_scale > 0.0)) {
    throw FormatError(where, "tolerances and step scale must be positive");
  }
  return c;
}

Json dynamics_json(const DynamicsConfig& c, const std::optional<double>& gamma, const std::vector<std::string>& agents) {
  Json j;
  if (gamma) {
    j["gamma"] = *gamma;
  } else {
    j["gamma"] = "default";
  }
  j["epsilon"] = c.epsilon;
  j["theta"] = c.theta.to_string();
  j["max_rounds"] = c.max_rounds;
  j["stationarity_tol"] = c.stationarity_tol;
  j["best_response_passes"] = c.best_response_passes;
  Json init;
  init["kind"] = to_string(c.initial);
  if (c.initial == InitialProfileKind::Explicit) {
    init["messages"] = Json::array();
    for (std::size_t i = 0; i < c.initial_messages.size(); ++i) {
      init["messages"].push_back(message_to_json(i < agents.size() ? agents[i] : "", c.initial_messages[i]));
    }
  }
  j["initial"] = std::move(init);
  j["subsidy_split"] = to_string(c.split);
  j["seed"] = c.seed;
  return j;
}

// --- taxes -------------------------------------------------------------------

Json breakdown_to_json(const std::string& good, const TaxBreakdown& b) {
  Json j;
  j["good"] = good;
  j["upsilon1"] = b.upsilon1;
  j["upsilon2"] = b.upsilon2;
  j["upsilon3"] = b.upsilon3;
  j["penalty"] = b.penalty;
  j["q_subsidy"] = b.q_subsidy;
  j["total"] = b.total;
  return j;
}

TaxBreakdown breakdown_from_json(const Json& j, const std::string& good, const std::string& where) {
  expect_object(j, where, {"good", "upsilon1", "upsilon2", "upsilon3", "penalty", "q_subsidy", "total"},
                {"good", "upsilon1", "upsilon2", "upsilon3", "penalty", "q_subsidy", "total"});
  if (as_string(j["good"], at_key(where, "good")) != good) throw FormatError(at_key(where, "good"), "expected '" + good + "'");
  TaxBreakdown b;
  b.upsilon1 = number_field(j, "upsilon1", where);
  b.upsilon2 = number_field(j, "upsilon2", where);
  b.upsilon3 = number_field(j, "upsilon3", where);
  b.penalty = number_field(j, "penalty", where);
  b.q_subsidy = number_field(j, "q_subsidy", where);
  b.total = number_field(j, "total", where);
  return b;
}

std::size_t agent_index(const MarketInstance& instance, const std::string& id, const std::string& where) {
  const auto i = instance.find_agent(id);
  if (!i) throw FormatError(where, "unknown agent '" + id + "'");
  return *i;
}

Json kkt_to_json(const KktResidual& k) {
  Json j;
  j["stationarity"] = k.stationarity;
  j["complementarity"] = k.complementarity;
  j["feasibility"] = k.feasibility;
  return j;
}

}  // namespace

// --- scenario ----------------------------------------------------------------

Json instance_to_json(const InstanceConfig& config, std::size_t min_participants) {
  Json j;
  j["price_bound"] = config.price_bound;
  j["min_participants"] = min_participants;
  j["goods"] = Json::array();
  for (const auto& g : config.goods) j["goods"].push_back(Json{{"id", g.id}, {"capacity", g.capacity}});
  j["agents"] = Json::array();
  for (const auto& a : config.agents) {
    Json aj;
    aj["id"] = a.id;
    aj["goods"] = a.goods;
    aj["utility"] = utility_to_json(a.utility);
    j["agents"].push_back(std::move(aj));
  }
  return j;
}

InstanceConfig instance_from_json(const Json& j, std::size_t* min_participants) {
  const std::string where = "$.instance";
  expect_object(j, where, {"price_bound", "min_participants", "goods", "agents"}, {"price_bound", "goods", "agents"});
  InstanceConfig c;
  c.price_bound = number_field(j, "price_bound", where);
  if (min_participants) {
    *min_participants = optional_field(j, "min_participants", std::size_t{3}, [&](const Json& v) {
      return as_count(v, at_key(where, "min_participants"));
    });
  }
  const std::string gw = at_key(where, "goods");
  for (std::size_t l = 0; l < as_array(j["goods"], gw).size(); ++l) {
    const std::string w = at_index(gw, l);
    expect_object(j["goods"][l], w, {"id", "capacity"}, {"id", "capacity"});
    c.goods.push_back({as_string(j["goods"][l]["id"], at_key(w, "id")), number_field(j["goods"][l], "capacity", w)});
  }
  const std::string aw = at_key(where, "agents");
  for (std::size_t i = 0; i < as_array(j["agents"], aw).size(); ++i) {
    const std::string w = at_index(aw, i);
    const Json& a = j["agents"][i];
    expect_object(a, w, {"id", "goods", "utility"}, {"id", "goods", "utility"});
    std::vector<std::string> goods;
    const std::string lw = at_key(w, "goods");
    for (std::size_t k = 0; k < as_array(a["goods"], lw).size(); ++k) goods.push_back(as_string(a["goods"][k], at_index(lw, k)));
    c.agents.push_back({as_string(a["id"], at_key(w, "id")), std::move(goods), utility_from_json(a["utility"], at_key(w, "utility"))});
  }
  return c;
}

Scenario parse_scenario(const Json& j) {
  const std::string root = "$";
  expect_object(j, root, {"name", "units", "instance", "dynamics", "oracle", "checks", "outputs"},
                {"units", "instance", "dynamics"});
  Scenario s;
  if (auto it = j.find("name"); it != j.end()) s.name = as_string(*it, "$.name");
  {
    const Json& u = j["units"];
    expect_object(u, "$.units", {"quantity", "currency"}, {"quantity", "currency"});
    s.units.quantity = as_string(u["quantity"], "$.units.quantity");
    s.units.currency = as_string(u["currency"], "$.units.currency");
  }
  s.instance = instance_from_json(j["instance"], &s.min_participants);
  s.dynamics = dynamics_from_json(j["dynamics"], agent_ids(s.instance), s.gamma, "$.dynamics");
  if (auto it = j.find("oracle"); it != j.end()) s.oracle = oracle_from_json(*it, "$.oracle");
  if (auto it = j.find("checks"); it != j.end()) {
    s.checks.clear();
    for (std::size_t k = 0; k < as_array(*it, "$.checks").size(); ++k) {
      const std::string name = as_string((*it)[k], at_index("$.checks", k));
      const auto& fams = check_families();
      if (std::find(fams.begin(), fams.end(), name) == fams.end()) {
        throw FormatError(at_index("$.checks", k), "unknown check family '" + name + "'");
      }
      s.checks.push_back(name);
    }
  }
  if (auto it = j.find("outputs"); it != j.end()) {
    expect_object(*it, "$.outputs", {"trace", "solution", "report"});
    s.outputs.trace = optional_field(*it, "trace", std::string{}, [](const Json& v) { return as_string(v, "$.outputs.trace"); });
    s.outputs.solution =
        optional_field(*it, "solution", std::string{}, [](const Json& v) { return as_string(v, "$.outputs.solution"); });
    s.outputs.report =
        optional_field(*it, "report", std::string{}, [](const Json& v) { return as_string(v, "$.outputs.report"); });
  }
  // structural validation happens here so a parsed scenario always builds
  const MarketInstance inst = build_instance(s);
  if (s.dynamics.initial == InitialProfileKind::Explicit) {
    try {
      validate_profile(inst, s.dynamics.initial_messages);
    } catch (const std::invalid_argument& e) {
      throw FormatError("$.dynamics.initial.messages", e.what());
    }
  }
  return s;
}

Scenario parse_scenario_text(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError("", std::string("not valid JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("", "cannot read '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("", "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& path) { return parse_scenario(read_json_file(path)); }

Json to_json(const Scenario& s) {
  Json j;
  j["name"] = s.name;
  j["units"] = Json{{"quantity", s.units.quantity}, {"currency", s.units.currency}};
  j["instance"] = instance_to_json(s.instance, s.min_participants);
  j["dynamics"] = dynamics_json(s.dynamics, s.gamma, agent_ids(s.instance));
  j["oracle"] = oracle_config_to_json(s.oracle);
  j["checks"] = s.checks;
  j["outputs"] = Json{{"trace", s.outputs.trace}, {"solution", s.outputs.solution}, {"report", s.outputs.report}};
  return j;
}

MarketInstance build_instance(const Scenario& s) {
  try {
    return build_instance(s.instance, BuildOptions{s.min_participants});
  } catch (const InstanceError& e) {
    throw FormatError("$.instance", e.what());
  }
}

DynamicsConfig resolved_config(const Scenario& s, const MarketInstance& instance) {
  DynamicsConfig c = s.dynamics;
  c.gamma = s.gamma ? *s.gamma : default_gamma(instance);
  return c;
}

Json dynamics_to_json(const MarketInstance& instance, const DynamicsConfig& c) {
  return dynamics_json(c, c.gamma, agent_ids(instance));
}

Json oracle_config_to_json(const OracleConfig& c) {
  Json j;
  j["tol"] = c.tol;
  j["feasibility_tol"] = c.feasibility_tol;
  j["max_iterations"] = c.max_iterations;
  j["step_scale"] = c.step_scale;
  return j;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out.push_back(hex[digest[k] >> 4]);
    out.push_back(hex[digest[k] & 0xF]);
  }
  return out;
}

std::string scenario_hash(const Scenario& s) { return sha256_hex(to_json(s).dump()); }

std::string instance_hash(const Scenario& s) { return sha256_hex(instance_to_json(s.instance, s.min_participants).dump()); }

// --- provenance --------------------------------------------------------------

Provenance make_provenance(const Scenario& s, const Json& config) {
  Provenance p;
  p.scenario_hash = scenario_hash(s);
  p.instance_hash = instance_hash(s);
  p.seed = s.dynamics.seed;
  p.config = config;
  p.scenario = to_json(s);
  return p;
}

Json to_json(const Provenance& p) {
  Json j;
  j["tool"] = p.tool;
  j["version"] = p.version;
  j["scenario_hash"] = p.scenario_hash;
  j["instance_hash"] = p.instance_hash;
  j["seed"] = p.seed;
  j["config"] = p.config;
  j["scenario"] = p.scenario;
  return j;
}

Provenance provenance_from_json(const Json& j) {
  const std::string where = "$.provenance";
  expect_object(j, where, {"tool", "version", "scenario_hash", "instance_hash", "seed", "config", "scenario"},
                {"tool", "version", "scenario_hash", "instance_hash", "seed", "config", "scenario"});
  Provenance p;
  p.tool = as_string(j["tool"], at_key(where, "tool"));
  if (p.tool != kToolName) throw FormatError(at_key(where, "tool"), "not produced by " + std::string(kToolName));
  p.version = as_string(j["version"], at_key(where, "version"));
  p.scenario_hash = as_string(j["scenario_hash"], at_key(where, "scenario_hash"));
  p.instance_hash = as_string(j["instance_hash"], at_key(where, "instance_hash"));
  p.seed = as_count(j["seed"], at_key(where, "seed"));
  p.config = j["config"];
  p.scenario = j["scenario"];
  return p;
}

// --- trace -------------------------------------------------------------------

Json record_to_json(const MarketInstance& instance, const TraceRecord& r) {
  Json j;
  j["type"] = "round";
  j["round"] = r.round;
  j["kappa"] = r.kappa;
  j["agents"] = Json::array();
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const auto goods = instance.goods_of(i);
    Json a = message_to_json(instance.agent_id(i), r.messages[i]);
    a["weights"] = numbers(r.weights[i]);
    Json tax;
    tax["goods"] = Json::array();
    for (std::size_t k = 0; k < goods.size(); ++k) {
      tax["goods"].push_back(breakdown_to_json(instance.good(goods[k]).id, r.taxes.agents[i].goods[k]));
    }
    tax["subsidy_share"] = r.taxes.agents[i].subsidy_share;
    tax["total"] = r.taxes.agents[i].total;
    a["tax"] = std::move(tax);
    a["payoff"] = r.payoffs[i];
    a["weight_dispersion"] = r.weight_dispersion[i];
    j["agents"].push_back(std::move(a));
  }
  j["goods"] = Json::array();
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    Json g;
    g["good"] = instance.good(l).id;
    g["capacity_residual"] = r.capacity_residual[l];
    g["lagged_mean_weight"] = r.lagged_mean_weight[l];
    if (l < r.taxes.subsidies.size() && r.taxes.subsidies[l]) {
      Json sub;
      sub["amount"] = r.taxes.subsidies[l]->amount;
      sub["recipients"] = Json::array();
      for (std::size_t m : r.taxes.subsidies[l]->recipients) sub["recipients"].push_back(instance.agent_id(m));
      g["subsidy"] = std::move(sub);
    } else {
      g["subsidy"] = nullptr;
    }
    j["goods"].push_back(std::move(g));
  }
  j["budget_residual"] = r.budget_residual;
  j["budget_scale"] = r.budget_scale;
  j["penalty_total"] = r.penalty_total;
  j["price_dispersion"] = r.price_dispersion;
  return j;
}

TraceRecord record_from_json(const MarketInstance& instance, const Json& j) {
  const std::string where = "$.round";
  expect_object(j, where,
                {"type", "round", "kappa", "agents", "goods", "budget_residual", "budget_scale", "penalty_total",
                 "price_dispersion"},
                {"type", "round", "kappa", "agents", "goods", "budget_residual", "budget_scale", "penalty_total",
                 "price_dispersion"});
  TraceRecord r;
  r.round = as_count(j["round"], at_key(where, "round"));
  const std::string rw = "round " + std::to_string(r.round);
  r.kappa = number_field(j, "kappa", rw);
  const Json& agents = as_array(j["agents"], at_key(rw, "agents"));
  if (agents.size() != instance.num_agents()) throw FormatError(at_key(rw, "agents"), "agent count mismatch");
  r.taxes.agents.resize(instance.num_agents());
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    const std::string w = at_index(at_key(rw, "agents"), i);
    const Json& a = agents[i];
    expect_object(a, w, {"agent", "demands", "prices", "weights", "tax", "payoff", "weight_dispersion"},
                  {"agent", "demands", "prices", "weights", "tax", "payoff", "weight_dispersion"});
    Json msg{{"agent", a["agent"]}, {"demands", a["demands"]}, {"prices", a["prices"]}};
    r.messages.push_back(message_from_json(msg, instance.agent_id(i), w));
    r.weights.push_back(as_numbers(a["weights"], at_key(w, "weights")));
    const auto goods = instance.goods_of(i);
    if (r.messages.back().demands.size() != goods.size() || r.messages.back().prices.size() != goods.size() ||
        r.weights.back().size() != goods.size()) {
      throw FormatError(w, "dimension does not match the agent's goods");
    }
    const std::string tw = at_key(w, "tax");
    expect_object(a["tax"], tw, {"goods", "subsidy_share", "total"}, {"goods", "subsidy_share", "total"});
    const Json& tg = as_array(a["tax"]["goods"], at_key(tw, "goods"));
    if (tg.size() != goods.size()) throw FormatError(at_key(tw, "goods"), "dimension does not match the agent's goods");
    for (std::size_t k = 0; k < goods.size(); ++k) {
      r.taxes.agents[i].goods.push_back(
          breakdown_from_json(tg[k], instance.good(goods[k]).id, at_index(at_key(tw, "goods"), k)));
    }
    r.taxes.agents[i].subsidy_share = number_field(a["tax"], "subsidy_share", tw);
    r.taxes.agents[i].total = number_field(a["tax"], "total", tw);
    r.payoffs.push_back(number_field(a, "payoff", w));
    r.weight_dispersion.push_back(number_field(a, "weight_dispersion", w));
  }
  const Json& goods = as_array(j["goods"], at_key(rw, "goods"));
  if (goods.size() != instance.num_goods()) throw FormatError(at_key(rw, "goods"), "good count mismatch");
  r.taxes.subsidies.resize(instance.num_goods());
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const std::string w = at_index(at_key(rw, "goods"), l);
    const Json& g = goods[l];
    expect_object(g, w, {"good", "capacity_residual", "lagged_mean_weight", "subsidy"},
                  {"good", "capacity_residual", "lagged_mean_weight", "subsidy"});
    if (as_string(g["good"], at_key(w, "good")) != instance.good(l).id) {
      throw FormatError(at_key(w, "good"), "expected '" + instance.good(l).id + "'");
    }
    r.capacity_residual.push_back(number_field(g, "capacity_residual", w));
    r.lagged_mean_weight.push_back(number_field(g, "lagged_mean_weight", w));
    if (!g["subsidy"].is_null()) {
      const std::string sw = at_key(w, "subsidy");
      expect_object(g["subsidy"], sw, {"amount", "recipients"}, {"amount", "recipients"});
      GoodSubsidy sub;
      sub.amount = number_field(g["subsidy"], "amount", sw);
      const Json& rec = as_array(g["subsidy"]["recipients"], at_key(sw, "recipients"));
      for (std::size_t k = 0; k < rec.size(); ++k) {
        const std::string kw = at_index(at_key(sw, "recipients"), k);
        sub.recipients.push_back(agent_index(instance, as_string(rec[k], kw), kw));
      }
      r.taxes.subsidies[l] = std::move(sub);
    }
  }
  r.budget_residual = number_field(j, "budget_residual", rw);
  r.budget_scale = number_field(j, "budget_scale", rw);
  r.penalty_total = number_field(j, "penalty_total", rw);
  r.price_dispersion = number_field(j, "price_dispersion", rw);
  return r;
}

Json state_to_json(const MarketInstance& instance, const MechanismState& s) {
  Json j;
  j["round"] = s.round;
  j["kappa"] = s.kappa;
  j["rng_seed"] = s.rng_seed;
  j["messages"] = Json::array();
  for (std::size_t i = 0; i < s.messages.size(); ++i) j["messages"].push_back(message_to_json(instance.agent_id(i), s.messages[i]));
  j["weight_accum"] = s.weight_accum;
  j["lagged_mean_accum"] = numbers(s.lagged_mean_accum);
  return j;
}

MechanismState state_from_json(const MarketInstance& instance, const Json& j) {
  const std::string where = "$.terminal";
  expect_object(j, where, {"round", "kappa", "rng_seed", "messages", "weight_accum", "lagged_mean_accum"},
                {"round", "kappa", "rng_seed", "messages", "weight_accum", "lagged_mean_accum"});
  MechanismState s;
  s.round = as_count(j["round"], at_key(where, "round"));
  s.kappa = number_field(j, "kappa", where);
  s.rng_seed = as_count(j["rng_seed"], at_key(where, "rng_seed"));
  s.messages = messages_from_json(j["messages"], agent_ids(instance), at_key(where, "messages"));
  const Json& acc = as_array(j["weight_accum"], at_key(where, "weight_accum"));
  if (acc.size() != instance.num_agents()) throw FormatError(at_key(where, "weight_accum"), "agent count mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) {
    s.weight_accum.push_back(as_numbers(acc[i], at_index(at_key(where, "weight_accum"), i)));
  }
  s.lagged_mean_accum = as_numbers(j["lagged_mean_accum"], at_key(where, "lagged_mean_accum"));
  if (s.lagged_mean_accum.size() != instance.num_goods()) {
    throw FormatError(at_key(where, "lagged_mean_accum"), "good count mismatch");
  }
  try {
    validate_profile(instance, s.messages);
  } catch (const std::invalid_argument& e) {
    throw FormatError(at_key(where, "messages"), e.what());
  }
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    if (s.weight_accum[i].size() != instance.goods_of(i).size()) {
      throw FormatError(at_index(at_key(where, "weight_accum"), i), "dimension does not match the agent's goods");
    }
  }
  if (!(s.kappa > 0.0)) throw FormatError(at_key(where, "kappa"), "must be positive");
  return s;
}

TraceWriter::TraceWriter(std::ostream& out, const MarketInstance& instance, const Provenance& provenance)
    : out_(out), instance_(instance) {
  Json h;
  h["type"] = "header";
  h["provenance"] = to_json(provenance);
  out_ << h.dump() << '\n';
}

void TraceWriter::write(const TraceRecord& record) {
  out_ << record_to_json(instance_, record).dump() << '\n';
  ++rounds_;
}

void TraceWriter::finish(const Trace& trace) {
  const StationarityReport& r = trace.final_report;
  Json s;
  s["type"] = "summary";
  s["rounds"] = rounds_;
  s["reason"] = to_string(trace.reason);
  s["stationarity"] = Json{{"is_stationary", r.is_stationary},
                           {"price_spread", r.price_spread},
                           {"slackness", r.slackness},
                           {"gradient", r.gradient},
                           {"overshoot", r.overshoot},
                           {"penalty_active", r.penalty_active}};
  s["terminal"] = state_to_json(instance_, trace.final_state);
  out_ << s.dump() << '\n';
  out_.flush();
}

TraceFile read_trace(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno), std::string("not valid JSON: ") + e.what());
    }
  };
  if (!std::getline(in, line)) throw FormatError("", "empty trace");
  ++lineno;
  const Json header = parse_line(line);
  expect_object(header, "$", {"type", "provenance"}, {"type", "provenance"});
  if (header["type"] != "header") throw FormatError("line 1", "expected the header record");
  Provenance prov = provenance_from_json(header["provenance"]);
  Scenario scenario = parse_scenario(prov.scenario);
  if (scenario_hash(scenario) != prov.scenario_hash) throw FormatError("$.provenance.scenario_hash", "does not match the embedded scenario");
  if (instance_hash(scenario) != prov.instance_hash) throw FormatError("$.provenance.instance_hash", "does not match the embedded scenario");
  MarketInstance instance = build_instance(scenario);
  TraceFile tf{std::move(prov), scenario, instance, resolved_config(scenario, instance), {}, {}, Termination::RoundCap};
  bool summary = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (summary) throw FormatError("line " + std::to_string(lineno), "content after the summary record");
    const Json j = parse_line(line);
    if (!j.is_object() || !j.contains("type")) throw FormatError("line " + std::to_string(lineno), "missing record type");
    if (j["type"] == "round") {
      try {
        tf.records.push_back(record_from_json(tf.instance, j));
      } catch (const FormatError& e) {
        throw FormatError("line " + std::to_string(lineno), e.what());
      }
    } else if (j["type"] == "summary") {
      const std::string w = "line " + std::to_string(lineno);
      expect_object(j, w, {"type", "rounds", "reason", "stationarity", "terminal"},
                    {"type", "rounds", "reason", "terminal"});
      const std::string reason = as_string(j["reason"], at_key(w, "reason"));
      if (reason == "stationary") {
        tf.reason = Termination::Stationary;
      } else if (reason != "round-cap") {
        throw FormatError(at_key(w, "reason"), "unknown termination '" + reason + "'");
      }
      if (as_count(j["rounds"], at_key(w, "rounds")) != tf.records.size()) {
        throw FormatError(at_key(w, "rounds"), "does not match the number of round records");
      }
      tf.terminal = state_from_json(tf.instance, j["terminal"]);
      summary = true;
    } else {
      throw FormatError("line " + std::to_string(lineno), "unknown record type");
    }
  }
  if (!summary) throw FormatError("", "trace has no summary record (truncated?)");
  return tf;
}

TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("", "cannot read '" + path.string() + "'");
  return read_trace(in);
}

// --- solution and report -----------------------------------------------------

Json solution_to_json(const MarketInstance& instance, const OracleSolution& sol, const Provenance& provenance) {
  Json j;
  j["type"] = "solution";
  j["provenance"] = to_json(provenance);
  j["multipliers"] = Json::array();
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    j["multipliers"].push_back(Json{{"good", instance.good(l).id},
                                    {"lambda", sol.multipliers[l]},
                                    {"unique_allocation", static_cast<bool>(sol.unique_allocation[l])}});
  }
  j["allocation"] = Json::array();
  for (std::size_t i = 0; i < instance.num_agents(); ++i) {
    j["allocation"].push_back(Json{{"agent", instance.agent_id(i)}, {"demands", sol.allocation[i]}});
  }
  j["kkt"] = kkt_to_json(sol.kkt);
  j["objective"] = sol.objective;
  j["iterations"] = sol.iterations;
  j["dual_monotone"] = sol.dual_monotone;
  return j;
}

SolutionFile read_solution(const MarketInstance& instance, const Json& j) {
  const std::string w = "$";
  expect_object(j, w, {"type", "provenance", "multipliers", "allocation", "kkt", "objective", "iterations", "dual_monotone"},
                {"type", "provenance", "multipliers", "allocation", "kkt", "objective", "iterations", "dual_monotone"});
  if (j["type"] != "solution") throw FormatError("$.type", "expected \"solution\"");
  SolutionFile f;
  f.provenance = provenance_from_json(j["provenance"]);
  const Json& mult = as_array(j["multipliers"], "$.multipliers");
  if (mult.size() != instance.num_goods()) throw FormatError("$.multipliers", "good count mismatch");
  for (std::size_t l = 0; l < mult.size(); ++l) {
    const std::string mw = at_index("$.multipliers", l);
    expect_object(mult[l], mw, {"good", "lambda", "unique_allocation"}, {"good", "lambda", "unique_allocation"});
    if (as_string(mult[l]["good"], at_key(mw, "good")) != instance.good(l).id) {
      throw FormatError(at_key(mw, "good"), "expected '" + instance.good(l).id + "'");
    }
    f.solution.multipliers.push_back(number_field(mult[l], "lambda", mw));
    f.solution.unique_allocation.push_back(as_bool(mult[l]["unique_allocation"], at_key(mw, "unique_allocation")));
  }
  const Json& alloc = as_array(j["allocation"], "$.allocation");
  if (alloc.size() != instance.num_agents()) throw FormatError("$.allocation", "agent count mismatch");
  for (std::size_t i = 0; i < alloc.size(); ++i) {
    const std::string aw = at_index("$.allocation", i);
    expect_object(alloc[i], aw, {"agent", "demands"}, {"agent", "demands"});
    if (as_string(alloc[i]["agent"], at_key(aw, "agent")) != instance.agent_id(i)) {
      throw FormatError(at_key(aw, "agent"), "expected '" + instance.agent_id(i) + "'");
    }
    f.solution.allocation.push_back(as_numbers(alloc[i]["demands"], at_key(aw, "demands")));
    if (f.solution.allocation.back().size() != instance.goods_of(i).size()) {
      throw FormatError(at_key(aw, "demands"), "dimension does not match the agent's goods");
    }
  }
  expect_object(j["kkt"], "$.kkt", {"stationarity", "complementarity", "feasibility"},
                {"stationarity", "complementarity", "feasibility"});
  f.solution.kkt = {number_field(j["kkt"], "stationarity", "$.kkt"), number_field(j["kkt"], "complementarity", "$.kkt"),
                    number_field(j["kkt"], "feasibility", "$.kkt")};
  f.solution.objective = number_field(j, "objective", w);
  f.solution.iterations = as_count(j["iterations"], "$.iterations");
  f.solution.dual_monotone = as_bool(j["dual_monotone"], "$.dual_monotone");
  return f;
}

SolutionFile read_solution(const MarketInstance& instance, const std::filesystem::path& path) {
  return read_solution(instance, read_json_file(path));
}

Json report_to_json(const VerificationReport& report, const Provenance& provenance) {
  Json j;
  j["type"] = "report";
  j["provenance"] = to_json(provenance);
  j["passed"] = report.passed();
  j["checks"] = Json::array();
  for (const auto& c : report.checks) {
    j["checks"].push_back(Json{{"family", c.family},
                               {"name", c.name},
                               {"passed", c.passed},
                               {"hard", c.hard},
                               {"residual", c.residual},
                               {"tolerance", c.tolerance},
                               {"location", c.location},
                               {"detail", c.detail}});
  }
  j["curves"] = Json::object();
  for (const auto& [good, pts] : report.curves) {
    Json arr = Json::array();
    for (const auto& [round, value] : pts) arr.push_back(Json::array({round, value}));
    j["curves"][good] = std::move(arr);
  }
  return j;
}

}  // namespace bbmech

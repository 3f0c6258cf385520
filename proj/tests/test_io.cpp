#include <doctest.h>

#include <sstream>

#include "bbmech/harness.hpp"
#include "bbmech/io.hpp"

using namespace bbmech;

namespace {

const char* kThreeAgent = R"({
  "name": "t",
  "units": {"quantity": "MB", "currency": "credit"},
  "instance": {
    "price_bound": 10,
    "goods": [{"id": "g", "capacity": 1}],
    "agents": [
      {"id": "a1", "goods": ["g"], "utility": {"family": "scaled-log", "a": [1]}},
      {"id": "a2", "goods": ["g"], "utility": {"family": "isoelastic", "a": [2], "beta": 0.5}},
      {"id": "a3", "goods": ["g"], "utility": {"family": "saturating-quadratic", "a": [3], "b": [1.5]}}
    ]
  },
  "dynamics": {"gamma": 100, "epsilon": 1e-6, "theta": "pow:0.7", "max_rounds": 40, "seed": 11}
})";

Json doc() { return Json::parse(kThreeAgent); }

Scenario short_run_scenario() {
  Scenario s = parse_scenario(doc());
  s.dynamics.theta = ThetaSchedule::harmonic();
  return s;
}

std::string write_trace(const Scenario& s) {
  std::ostringstream out, log;
  REQUIRE(cmd_run(s, out, log) == kExitOk);
  return out.str();
}

}  // namespace

TEST_CASE("scenario parsing fills documented defaults") {
  const Scenario s = parse_scenario(doc());
  CHECK(s.units.quantity == "MB");
  CHECK(s.instance.agents.size() == 3);
  CHECK(s.min_participants == 3);
  REQUIRE(s.gamma.has_value());
  CHECK(*s.gamma == 100.0);
  CHECK(s.dynamics.theta == ThetaSchedule::power(0.7));
  CHECK(s.dynamics.max_rounds == 40);
  CHECK(s.dynamics.seed == 11);
  CHECK(s.dynamics.stationarity_tol == 1e-4);
  CHECK(s.dynamics.split == SubsidySplit::RandomRecipient);
  CHECK(s.checks == check_families());
}

TEST_CASE("canonical form round-trips") {
  const Json canon = to_json(parse_scenario(doc()));
  CHECK(to_json(parse_scenario(canon)) == canon);
  CHECK(to_json(parse_scenario_text(canon.dump())).dump() == canon.dump());

  // instance -> scenario -> instance through the built MarketInstance
  const Scenario s = parse_scenario(canon);
  const MarketInstance inst = build_instance(s);
  CHECK(instance_to_json(inst.config(), s.min_participants) == canon["instance"]);

  SUBCASE("explicit initial profile survives") {
    Json d = doc();
    d["dynamics"]["initial"] = Json::parse(
        R"({"kind": "explicit", "messages": [{"agent": "a1", "demands": [0.1], "prices": [1]},
             {"agent": "a2", "demands": [0.2], "prices": [2]}, {"agent": "a3", "demands": [0.3], "prices": [3]}]})");
    const Json c = to_json(parse_scenario(d));
    CHECK(to_json(parse_scenario(c)) == c);
    CHECK(parse_scenario(c).dynamics.initial_messages[2] == Message{{0.3}, {3.0}});
  }
}

TEST_CASE("scenario validation") {
  auto rejects = [](const Json& d, std::string_view where) {
    try {
      parse_scenario(d);
    } catch (const FormatError& e) {
      CHECK(e.where() == where);
      return;
    }
    FAIL("accepted an invalid scenario");
  };
  Json d = doc();
  d["extra"] = 1;
  rejects(d, "$.extra");

  d = doc();
  d["instance"]["agents"][1]["utility"]["gain"] = 2;
  rejects(d, "$.instance.agents[1].utility.gain");

  d = doc();
  d["dynamics"].erase("gamma");
  rejects(d, "$.dynamics.gamma");

  d = doc();
  d["dynamics"].erase("epsilon");
  rejects(d, "$.dynamics.epsilon");

  d = doc();
  d["instance"].erase("price_bound");
  rejects(d, "$.instance.price_bound");

  d = doc();
  d.erase("units");
  rejects(d, "$.units");

  d = doc();
  d["instance"]["agents"].erase(2);
  rejects(d, "$.instance");  // two participants

  d = doc();
  d["instance"]["goods"][0]["capacity"] = -1;
  rejects(d, "$.instance");

  d = doc();
  d["instance"]["agents"][0]["utility"]["a"] = Json::array({0});
  rejects(d, "$.instance.agents[0].utility");

  d = doc();
  d["dynamics"]["theta"] = "pow:1.5";
  rejects(d, "$.dynamics.theta");

  d = doc();
  d["dynamics"]["gamma"] = "large";
  rejects(d, "$.dynamics.gamma");

  d = doc();
  d["dynamics"]["max_rounds"] = -3;
  rejects(d, "$.dynamics.max_rounds");

  d = doc();
  d["checks"] = Json::array({"budget", "fairness"});
  rejects(d, "$.checks[1]");

  d = doc();
  d["dynamics"]["initial"] = Json::parse(R"({"kind": "explicit", "messages": [{"agent": "a1", "demands": [5], "prices": [1]},
      {"agent": "a2", "demands": [0], "prices": [1]}, {"agent": "a3", "demands": [0], "prices": [1]}]})");
  rejects(d, "$.dynamics.initial.messages");

  CHECK_THROWS_AS(parse_scenario_text("{ not json"), FormatError);
}

TEST_CASE("gamma default resolves against the instance") {
  Json d = doc();
  d["dynamics"]["gamma"] = "default";
  const Scenario s = parse_scenario(d);
  CHECK_FALSE(s.gamma.has_value());
  CHECK(to_json(s)["dynamics"]["gamma"] == "default");
  CHECK(resolved_config(s, build_instance(s)).gamma == 1e3 * 1.0 * 10.0);
}

TEST_CASE("hashes") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const Scenario a = parse_scenario(doc());
  Scenario b = a;
  b.dynamics.seed = 12;
  CHECK(scenario_hash(a) == scenario_hash(parse_scenario(to_json(a))));
  CHECK(scenario_hash(a) != scenario_hash(b));
  CHECK(instance_hash(a) == instance_hash(b));
  b.instance.goods[0].capacity = 2.0;
  CHECK(instance_hash(a) != instance_hash(b));
}

TEST_CASE("records and states serialize losslessly") {
  const Scenario s = short_run_scenario();
  const MarketInstance inst = build_instance(s);
  DynamicsConfig cfg = resolved_config(s, inst);
  cfg.max_rounds = 12;
  const Trace t = run(inst, cfg);
  REQUIRE(t.records.size() == 12);
  for (const auto& rec : t.records) {
    const Json j = record_to_json(inst, rec);
    const TraceRecord back = record_from_json(inst, j);
    CHECK(record_to_json(inst, back).dump() == j.dump());
    CHECK(back.messages == rec.messages);
    CHECK(back.taxes.agents[2].goods[0].upsilon3 == rec.taxes.agents[2].goods[0].upsilon3);
    CHECK(back.taxes.subsidies[0].has_value());
  }
  const MechanismState back = state_from_json(inst, state_to_json(inst, t.final_state));
  CHECK(back.messages == t.final_state.messages);
  CHECK(back.weight_accum == t.final_state.weight_accum);
  CHECK(back.kappa == t.final_state.kappa);
  CHECK(back.lagged_mean_accum == t.final_state.lagged_mean_accum);
  CHECK(back.round == t.final_state.round);
}

TEST_CASE("trace files") {
  const Scenario s = short_run_scenario();
  const std::string text = write_trace(s);

  std::istringstream in(text);
  const TraceFile tf = read_trace(in);
  CHECK(tf.records.size() == 40);
  CHECK(tf.reason == Termination::RoundCap);
  CHECK(tf.terminal.round == 41);
  CHECK(tf.provenance.version == "0.1.0");
  CHECK(tf.provenance.seed == 11);
  CHECK(tf.provenance.scenario_hash == scenario_hash(s));
  CHECK(tf.provenance.config["gamma"] == 100.0);
  CHECK(tf.config.gamma == 100.0);

  SUBCASE("header is first, summary last") {
    std::istringstream lines(text);
    std::string first, line, last;
    std::getline(lines, first);
    std::size_t count = 1;
    while (std::getline(lines, line)) {
      last = line;
      ++count;
    }
    CHECK(count == 42);
    CHECK(Json::parse(first)["type"] == "header");
    CHECK(Json::parse(last)["type"] == "summary");
    CHECK(Json::parse(last)["reason"] == "round-cap");
  }
  SUBCASE("truncation is detected") {
    std::istringstream cut(text.substr(0, text.rfind("{\"type\":\"summary\"")));
    CHECK_THROWS_AS(read_trace(cut), FormatError);
  }
  SUBCASE("an edited embedded scenario breaks the hash") {
    std::istringstream lines(text);
    std::string first;
    std::getline(lines, first);
    Json h = Json::parse(first);
    h["provenance"]["scenario"]["dynamics"]["seed"] = 12;
    std::istringstream edited(h.dump() + "\n" + text.substr(first.size() + 1));
    CHECK_THROWS_AS(read_trace(edited), FormatError);
  }
}

TEST_CASE("solution files") {
  const Scenario s = short_run_scenario();
  std::ostringstream out, log;
  REQUIRE(cmd_oracle(s, out, log) == kExitOk);
  const MarketInstance inst = build_instance(s);
  const SolutionFile f = read_solution(inst, Json::parse(out.str()));
  const OracleSolution direct = solve_centralized(inst, s.oracle);
  CHECK(f.solution.multipliers == direct.multipliers);
  CHECK(f.solution.allocation == direct.allocation);
  CHECK(f.solution.unique_allocation == direct.unique_allocation);
  CHECK(f.provenance.instance_hash == instance_hash(s));
  CHECK(solution_to_json(inst, f.solution, f.provenance).dump() + "\n" == out.str());
}

TEST_CASE("overrides") {
  Scenario s = parse_scenario(doc());
  Overrides o;
  o.seed = 3;
  o.max_rounds = 0;
  o.theta = "harmonic";
  o.gamma = "default";
  o.epsilon = 1e-3;
  o.tol = 1e-5;
  apply_overrides(s, o, Verb::Run);
  CHECK(s.dynamics.seed == 3);
  CHECK(s.dynamics.max_rounds == 0);
  CHECK(s.dynamics.theta == ThetaSchedule::harmonic());
  CHECK_FALSE(s.gamma.has_value());
  CHECK(s.dynamics.epsilon == 1e-3);
  CHECK(s.dynamics.stationarity_tol == 1e-5);
  CHECK(s.oracle.tol == 1e-7);

  Overrides tol_only;
  tol_only.tol = 1e-8;
  apply_overrides(s, tol_only, Verb::Oracle);
  CHECK(s.oracle.tol == 1e-8);

  auto rejected = [&](auto set) {
    Overrides bad;
    set(bad);
    CHECK_THROWS_AS(apply_overrides(s, bad, Verb::Run), FormatError);
  };
  rejected([](Overrides& b) { b.gamma = "-1"; });
  rejected([](Overrides& b) { b.gamma = "12x"; });
  rejected([](Overrides& b) { b.theta = "cubic"; });
  rejected([](Overrides& b) { b.epsilon = 1.0; });
}

TEST_CASE("verify suite selects families") {
  const std::string text = write_trace(short_run_scenario());
  std::istringstream in(text);
  const TraceFile tf = read_trace(in);
  const auto rep = verify_suite(tf, nullptr, {"budget"}, 1e-2);
  CHECK(rep.count_family("budget") == rep.checks.size());
  CHECK(rep.checks.size() == 2);
  CHECK(rep.passed());

  const auto all = verify_suite(tf, nullptr, check_families(), 1e-2);
  CHECK(all.count_family("capacity") > 0);
  CHECK(all.count_family("stationary") == 4);
  CHECK(all.count_family("ir") == 12);
  CHECK(all.count_family("convergence") == 0);  // no solution given
}

TEST_CASE("schemas are closed objects") {
  for (const char* name : {"scenario", "trace", "solution", "report"}) {
    const auto s = schema_document(name);
    REQUIRE(s.has_value());
    CHECK(s->contains("$schema"));
  }
  CHECK((*schema_document("scenario"))["additionalProperties"] == false);
  CHECK_FALSE(schema_document("plot").has_value());
}

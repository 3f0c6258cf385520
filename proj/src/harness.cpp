#include "bbmech/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace bbmech {

namespace {

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(where, "expected a number, got '" + text + "'");
  return v;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("", "cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print_check_summary(const VerificationReport& report, std::ostream& log) {
  for (const auto& c : report.checks) {
    log << (c.passed ? "pass " : (c.hard ? "FAIL " : "warn ")) << c.family << '/' << c.name << " residual=" << c.residual
        << " tol=" << c.tolerance << " at " << c.location;
    if (!c.detail.empty()) log << " (" << c.detail << ')';
    log << '\n';
  }
}

}  // namespace

void apply_overrides(Scenario& s, const Overrides& o, Verb verb) {
  if (o.seed) s.dynamics.seed = *o.seed;
  if (o.max_rounds) s.dynamics.max_rounds = *o.max_rounds;
  if (o.theta) {
    try {
      s.dynamics.theta = ThetaSchedule::parse(*o.theta);
    } catch (const std::invalid_argument& e) {
      throw FormatError("--theta", e.what());
    }
  }
  if (o.gamma) {
    if (*o.gamma == "default") {
      s.gamma.reset();
    } else {
      const double g = parse_double(*o.gamma, "--gamma");
      if (!(g > 0.0) || !std::isfinite(g)) throw FormatError("--gamma", "must be positive");
      s.gamma = g;
    }
  }
  if (o.epsilon) {
    if (!(*o.epsilon > 0.0 && *o.epsilon < 1.0)) throw FormatError("--epsilon", "must lie in (0, 1)");
    s.dynamics.epsilon = *o.epsilon;
  }
  if (o.tol) {
    if (!(*o.tol > 0.0)) throw FormatError("--tol", "must be positive");
    if (verb == Verb::Run) {
      s.dynamics.stationarity_tol = *o.tol;
    } else {
      s.oracle.tol = *o.tol;
    }
  }
}

int cmd_run(const Scenario& scenario, std::ostream& trace_out, std::ostream& log) {
  const MarketInstance instance = build_instance(scenario);
  const DynamicsConfig config = resolved_config(scenario, instance);
  TraceWriter writer(trace_out, instance, make_provenance(scenario, dynamics_to_json(instance, config)));
  Trace trace;
  try {
    trace = run(instance, config, [&](const TraceRecord& r) {
      writer.write(r);
      return false;
    });
  } catch (const BestResponseError& e) {
    log << "solver failure: " << e.what() << '\n';
    return kExitSolverFailure;
  }
  writer.finish(trace);

  const StationarityReport& r = trace.final_report;
  log << "rounds " << trace.final_state.round - trace.initial.round << " (final round " << trace.final_state.round
      << "), reason " << to_string(trace.reason) << '\n'
      << "price spread " << r.price_spread << ", slackness " << r.slackness << ", gradient " << r.gradient
      << ", overshoot " << r.overshoot << (r.penalty_active ? ", penalty active" : "") << '\n';
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    const auto members = instance.members(l);
    const auto slots = instance.member_slots(l);
    double lo = trace.final_state.weight(members[0], slots[0]), hi = lo;
    for (std::size_t m = 1; m < members.size(); ++m) {
      const double w = trace.final_state.weight(members[m], slots[m]);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
    log << "good " << instance.good(l).id << ": weights in [" << lo << ", " << hi << "]\n";
  }
  return kExitOk;
}

int cmd_oracle(const Scenario& scenario, std::ostream& solution_out, std::ostream& log) {
  const MarketInstance instance = build_instance(scenario);
  OracleSolution sol;
  try {
    sol = solve_centralized(instance, scenario.oracle);
  } catch (const OracleError& e) {
    log << "solver failure: " << e.what() << "; best residuals: stationarity " << e.best().stationarity
        << ", complementarity " << e.best().complementarity << ", feasibility " << e.best().feasibility << " after "
        << e.iterations() << " iterations\n";
    return kExitSolverFailure;
  }
  solution_out << solution_to_json(instance, sol, make_provenance(scenario, oracle_config_to_json(scenario.oracle))).dump()
               << '\n';
  for (std::size_t l = 0; l < instance.num_goods(); ++l) {
    log << "good " << instance.good(l).id << ": lambda* = " << sol.multipliers[l]
        << (sol.unique_allocation[l] ? "" : " (allocation not unique)") << '\n';
  }
  log << "kkt: stationarity " << sol.kkt.stationarity << ", complementarity " << sol.kkt.complementarity
      << ", feasibility " << sol.kkt.feasibility << "; " << sol.iterations << " iterations\n";
  return kExitOk;
}

VerificationReport verify_suite(const TraceFile& trace, const OracleSolution* solution,
                                const std::vector<std::string>& families, double convergence_tol) {
  VerificationReport rep;
  const TaxParams params = trace.config.tax_params();
  auto wanted = [&](std::string_view f) { return std::find(families.begin(), families.end(), f) != families.end(); };
  if (wanted("budget")) rep.merge(check_budget_balance(trace.records));
  if (wanted("capacity")) rep.merge(check_capacity_penalty(trace.instance, trace.records, params.epsilon));
  if (wanted("stationary")) rep.merge(check_stationary_conditions(trace.instance, trace.terminal, params.gamma));
  if (wanted("ir")) rep.merge(check_individual_rationality(trace.instance, trace.terminal, params));
  if (wanted("convergence") && solution) {
    rep.merge(check_convergence(trace.instance, trace.terminal, trace.records, *solution, convergence_tol));
    rep.checks.push_back(dispersion_trend(trace.records));
  }
  return rep;
}

int cmd_verify(const std::filesystem::path& trace_path, const std::optional<std::filesystem::path>& solution_path,
               const VerifyOptions& options, std::ostream& report_out, std::ostream& log) {
  const std::string trace_bytes = read_bytes(trace_path);
  std::istringstream trace_in(trace_bytes);
  const TraceFile trace = read_trace(trace_in);

  std::vector<std::string> families = options.checks.empty() ? trace.scenario.checks : options.checks;
  for (const auto& f : families) {
    const auto& known = check_families();
    if (std::find(known.begin(), known.end(), f) == known.end()) {
      throw FormatError("--checks", "unknown check family '" + f + "'");
    }
  }
  const bool want_convergence = std::find(families.begin(), families.end(), "convergence") != families.end();

  std::optional<SolutionFile> solution;
  std::string solution_digest;
  if (solution_path) {
    const std::string bytes = read_bytes(*solution_path);
    solution_digest = sha256_hex(bytes);
    Json doc;
    try {
      doc = Json::parse(bytes);
    } catch (const Json::parse_error& e) {
      throw FormatError("", "'" + solution_path->string() + "' is not valid JSON: " + e.what());
    }
    // the hash comparison comes first so a foreign solution reports as a mismatch
    if (!doc.is_object() || !doc.contains("provenance") || !doc["provenance"].is_object() ||
        !doc["provenance"].contains("instance_hash")) {
      throw FormatError("$.provenance.instance_hash", "solution file carries no instance hash");
    }
    if (doc["provenance"]["instance_hash"] != trace.provenance.instance_hash) {
      throw FormatError("$.provenance.instance_hash", "solution was computed for a different instance (trace " +
                                                          trace.provenance.instance_hash + ", solution " +
                                                          doc["provenance"]["instance_hash"].dump() + ")");
    }
    solution = read_solution(trace.instance, doc);
  } else if (want_convergence && !options.checks.empty()) {
    throw FormatError("--solution", "the convergence checks need a solution file");
  } else if (want_convergence) {
    log << "no solution file: convergence checks skipped\n";
    families.erase(std::remove(families.begin(), families.end(), "convergence"), families.end());
  }

  const VerificationReport report =
      verify_suite(trace, solution ? &solution->solution : nullptr, families, options.tol);

  Provenance prov = trace.provenance;
  Json config;
  config["checks"] = families;
  config["tol"] = options.tol;
  config["trace_sha256"] = sha256_hex(trace_bytes);
  config["solution_sha256"] = solution_digest;
  prov.config = std::move(config);
  report_out << report_to_json(report, prov).dump() << '\n';

  print_check_summary(report, log);
  log << (report.passed() ? "all hard checks passed" : "hard check failure") << '\n';
  return report.passed() ? kExitOk : kExitCheckFailed;
}

// --- schemas -----------------------------------------------------------------

namespace {

Json number_array() { return Json{{"type", "array"}, {"items", Json{{"type", "number"}}}}; }

Json closed_object(Json properties, std::vector<std::string> required) {
  return Json{{"type", "object"},
              {"additionalProperties", false},
              {"required", std::move(required)},
              {"properties", std::move(properties)}};
}

Json message_schema() {
  return closed_object(Json{{"agent", Json{{"type", "string"}}}, {"demands", number_array()}, {"prices", number_array()}},
                       {"agent", "demands", "prices"});
}

Json provenance_schema() {
  return closed_object(Json{{"tool", Json{{"const", std::string(kToolName)}}},
                            {"version", Json{{"type", "string"}}},
                            {"scenario_hash", Json{{"type", "string"}, {"pattern", "^[0-9a-f]{64}$"}}},
                            {"instance_hash", Json{{"type", "string"}, {"pattern", "^[0-9a-f]{64}$"}}},
                            {"seed", Json{{"type", "integer"}, {"minimum", 0}}},
                            {"config", Json{{"type", "object"}}},
                            {"scenario", Json{{"$ref", "#/$defs/scenario"}}}},
                       {"tool", "version", "scenario_hash", "instance_hash", "seed", "config", "scenario"});
}

Json scenario_schema() {
  const Json positive = Json{{"type", "number"}, {"exclusiveMinimum", 0}};
  const Json count = Json{{"type", "integer"}, {"minimum", 0}};
  Json utility = Json{
      {"oneOf",
       Json::array({closed_object(Json{{"family", Json{{"const", "scaled-log"}}}, {"a", number_array()}}, {"family", "a"}),
                    closed_object(Json{{"family", Json{{"const", "isoelastic"}}},
                                       {"a", number_array()},
                                       {"beta", Json{{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}}},
                                  {"family", "a", "beta"}),
                    closed_object(Json{{"family", Json{{"const", "saturating-quadratic"}}},
                                       {"a", number_array()},
                                       {"b", number_array()}},
                                  {"family", "a", "b"})})}};
  Json instance = closed_object(
      Json{{"price_bound", positive},
           {"min_participants", count},
           {"goods", Json{{"type", "array"},
                          {"items", closed_object(Json{{"id", Json{{"type", "string"}}},
                                                       {"capacity", Json{{"type", "number"}, {"minimum", 0}}}},
                                                  {"id", "capacity"})}}},
           {"agents", Json{{"type", "array"},
                           {"items", closed_object(Json{{"id", Json{{"type", "string"}}},
                                                        {"goods", Json{{"type", "array"}, {"items", Json{{"type", "string"}}}}},
                                                        {"utility", utility}},
                                                   {"id", "goods", "utility"})}}}},
      {"price_bound", "goods", "agents"});
  Json dynamics = closed_object(
      Json{{"gamma", Json{{"oneOf", Json::array({positive, Json{{"const", "default"}}})}}},
           {"epsilon", Json{{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
           {"theta", Json{{"type", "string"}, {"pattern", "^(harmonic|pow:.+)$"}}},
           {"max_rounds", count},
           {"stationarity_tol", positive},
           {"best_response_passes", Json{{"type", "integer"}, {"minimum", 1}}},
           {"initial", closed_object(Json{{"kind", Json{{"enum", {"default", "zero", "explicit"}}}},
                                          {"messages", Json{{"type", "array"}, {"items", message_schema()}}}},
                                     {"kind"})},
           {"subsidy_split", Json{{"enum", {"random-recipient", "complement-equal"}}}},
           {"seed", count}},
      {"gamma", "epsilon"});
  Json oracle = closed_object(
      Json{{"tol", positive}, {"feasibility_tol", positive}, {"max_iterations", count}, {"step_scale", positive}}, {});
  return closed_object(
      Json{{"name", Json{{"type", "string"}}},
           {"units", closed_object(Json{{"quantity", Json{{"type", "string"}}}, {"currency", Json{{"type", "string"}}}},
                                   {"quantity", "currency"})},
           {"instance", instance},
           {"dynamics", dynamics},
           {"oracle", oracle},
           {"checks", Json{{"type", "array"}, {"items", Json{{"enum", check_families()}}}}},
           {"outputs", closed_object(Json{{"trace", Json{{"type", "string"}}},
                                          {"solution", Json{{"type", "string"}}},
                                          {"report", Json{{"type", "string"}}}},
                                     {})}},
      {"units", "instance", "dynamics"});
}

Json with_header(Json schema, std::string_view title) {
  Json out;
  out["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  out["title"] = std::string(title);
  for (auto& [k, v] : schema.items()) out[k] = v;
  out["$defs"] = Json{{"scenario", scenario_schema()}};
  return out;
}

Json trace_line_schema() {
  Json breakdown = closed_object(Json{{"good", Json{{"type", "string"}}},
                                      {"upsilon1", Json{{"type", "number"}}},
                                      {"upsilon2", Json{{"type", "number"}}},
                                      {"upsilon3", Json{{"type", "number"}}},
                                      {"penalty", Json{{"type", "number"}}},
                                      {"q_subsidy", Json{{"type", "number"}}},
                                      {"total", Json{{"type", "number"}}}},
                                 {"good", "upsilon1", "upsilon2", "upsilon3", "penalty", "q_subsidy", "total"});
  Json agent = closed_object(
      Json{{"agent", Json{{"type", "string"}}},
           {"demands", number_array()},
           {"prices", number_array()},
           {"weights", number_array()},
           {"tax", closed_object(Json{{"goods", Json{{"type", "array"}, {"items", breakdown}}},
                                      {"subsidy_share", Json{{"type", "number"}}},
                                      {"total", Json{{"type", "number"}}}},
                                 {"goods", "subsidy_share", "total"})},
           {"payoff", Json{{"type", "number"}}},
           {"weight_dispersion", Json{{"type", "number"}}}},
      {"agent", "demands", "prices", "weights", "tax", "payoff", "weight_dispersion"});
  Json good = closed_object(
      Json{{"good", Json{{"type", "string"}}},
           {"capacity_residual", Json{{"type", "number"}}},
           {"lagged_mean_weight", Json{{"type", "number"}}},
           {"subsidy", Json{{"oneOf", Json::array({Json{{"type", "null"}},
                                                   closed_object(Json{{"amount", Json{{"type", "number"}}},
                                                                      {"recipients", Json{{"type", "array"},
                                                                                          {"items", Json{{"type", "string"}}}}}},
                                                                 {"amount", "recipients"})})}}}},
      {"good", "capacity_residual", "lagged_mean_weight", "subsidy"});
  Json header = closed_object(Json{{"type", Json{{"const", "header"}}}, {"provenance", provenance_schema()}},
                              {"type", "provenance"});
  Json round = closed_object(Json{{"type", Json{{"const", "round"}}},
                                  {"round", Json{{"type", "integer"}, {"minimum", 1}}},
                                  {"kappa", Json{{"type", "number"}}},
                                  {"agents", Json{{"type", "array"}, {"items", agent}}},
                                  {"goods", Json{{"type", "array"}, {"items", good}}},
                                  {"budget_residual", Json{{"type", "number"}}},
                                  {"budget_scale", Json{{"type", "number"}}},
                                  {"penalty_total", Json{{"type", "number"}}},
                                  {"price_dispersion", Json{{"type", "number"}}}},
                             {"type", "round", "kappa", "agents", "goods", "budget_residual", "budget_scale",
                              "penalty_total", "price_dispersion"});
  Json terminal = closed_object(Json{{"round", Json{{"type", "integer"}}},
                                     {"kappa", Json{{"type", "number"}}},
                                     {"rng_seed", Json{{"type", "integer"}}},
                                     {"messages", Json{{"type", "array"}, {"items", message_schema()}}},
                                     {"weight_accum", Json{{"type", "array"}, {"items", number_array()}}},
                                     {"lagged_mean_accum", number_array()}},
                                {"round", "kappa", "rng_seed", "messages", "weight_accum", "lagged_mean_accum"});
  Json summary = closed_object(Json{{"type", Json{{"const", "summary"}}},
                                    {"rounds", Json{{"type", "integer"}, {"minimum", 0}}},
                                    {"reason", Json{{"enum", {"stationary", "round-cap"}}}},
                                    {"stationarity", Json{{"type", "object"}}},
                                    {"terminal", terminal}},
                               {"type", "rounds", "reason", "terminal"});
  return Json{{"description", "one JSON object per line: a header, zero or more rounds, a summary"},
              {"oneOf", Json::array({header, round, summary})}};
}

}  // namespace

std::optional<Json> schema_document(std::string_view which) {
  if (which == "scenario") {
    Json s = scenario_schema();
    Json out;
    out["$schema"] = "https://json-schema.org/draft/2020-12/schema";
    out["title"] = "bbmech scenario";
    for (auto& [k, v] : s.items()) out[k] = v;
    return out;
  }
  if (which == "trace") return with_header(trace_line_schema(), "bbmech trace line");
  if (which == "solution") {
    return with_header(
        closed_object(
            Json{{"type", Json{{"const", "solution"}}},
                 {"provenance", provenance_schema()},
                 {"multipliers", Json{{"type", "array"},
                                      {"items", closed_object(Json{{"good", Json{{"type", "string"}}},
                                                                   {"lambda", Json{{"type", "number"}, {"minimum", 0}}},
                                                                   {"unique_allocation", Json{{"type", "boolean"}}}},
                                                              {"good", "lambda", "unique_allocation"})}}},
                 {"allocation", Json{{"type", "array"},
                                     {"items", closed_object(Json{{"agent", Json{{"type", "string"}}}, {"demands", number_array()}},
                                                             {"agent", "demands"})}}},
                 {"kkt", Json{{"type", "object"}}},
                 {"objective", Json{{"type", "number"}}},
                 {"iterations", Json{{"type", "integer"}}},
                 {"dual_monotone", Json{{"type", "boolean"}}}},
            {"type", "provenance", "multipliers", "allocation", "kkt", "objective", "iterations", "dual_monotone"}),
        "bbmech oracle solution");
  }
  if (which == "report") {
    Json check = closed_object(Json{{"family", Json{{"enum", check_families()}}},
                                    {"name", Json{{"type", "string"}}},
                                    {"passed", Json{{"type", "boolean"}}},
                                    {"hard", Json{{"type", "boolean"}}},
                                    {"residual", Json{{"type", "number"}}},
                                    {"tolerance", Json{{"type", "number"}}},
                                    {"location", Json{{"type", "string"}}},
                                    {"detail", Json{{"type", "string"}}}},
                               {"family", "name", "passed", "hard", "residual", "tolerance", "location", "detail"});
    return with_header(closed_object(Json{{"type", Json{{"const", "report"}}},
                                          {"provenance", provenance_schema()},
                                          {"passed", Json{{"type", "boolean"}}},
                                          {"checks", Json{{"type", "array"}, {"items", check}}},
                                          {"curves", Json{{"type", "object"},
                                                          {"additionalProperties",
                                                           Json{{"type", "array"}, {"items", number_array()}}}}}},
                                     {"type", "provenance", "passed", "checks", "curves"}),
                       "bbmech verification report");
  }
  return std::nullopt;
}

}  // namespace bbmech

// bbmech: run the bid-based mechanism, solve the centralized problem, verify traces.

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "bbmech/harness.hpp"

namespace {

using namespace bbmech;

constexpr const char* kEnvPrefix = "BBMECH_";

std::string env(const char* name) { return std::string(kEnvPrefix) + name; }

/// Opens `path` (or stdout for "" / "-") and hands the stream to `body`.
int with_output(const std::string& path, const std::function<int(std::ostream&)>& body) {
  if (path.empty() || path == "-") return body(std::cout);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write '" << path << "'\n";
    return kExitInvalidInput;
  }
  const int code = body(out);
  out.close();
  if (!out) {
    std::cerr << "error: failed writing '" << path << "'\n";
    return kExitInvalidInput;
  }
  return code;
}

std::string sweep_path(const std::string& out, std::uint64_t seed) {
  const std::filesystem::path p(out);
  return (p.parent_path() / (p.stem().string() + "-seed" + std::to_string(seed) + p.extension().string())).string();
}

std::pair<std::uint64_t, std::uint64_t> parse_sweep(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(text);
    std::size_t used_a = 0, used_b = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    const auto lo = std::stoull(a, &used_a), hi = std::stoull(b, &used_b);
    if (used_a != a.size() || used_b != b.size() || lo > hi || a.starts_with('-') || b.starts_with('-')) {
      throw std::invalid_argument(text);
    }
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw FormatError("--sweep", "expected FIRST:LAST seed range, got '" + text + "'");
  }
}

void add_override_flags(CLI::App* cmd, Overrides& o, bool dynamics) {
  if (dynamics) {
    cmd->add_option("--seed", o.seed, "recipient-draw seed")->envname(env("SEED"));
    cmd->add_option("--max-rounds", o.max_rounds, "round cap")->envname(env("MAX_ROUNDS"));
    cmd->add_option("--theta", o.theta, "step weights: harmonic | pow:<alpha>")->envname(env("THETA"));
    cmd->add_option("--gamma", o.gamma, "coupling constant, or 'default'")->envname(env("GAMMA"));
    cmd->add_option("--epsilon", o.epsilon, "capacity penalty parameter in (0, 1)")->envname(env("EPSILON"));
    cmd->add_option("--tol", o.tol, "stationarity tolerance")->envname(env("TOL"));
  } else {
    cmd->add_option("--tol", o.tol, "KKT tolerance")->envname(env("TOL"));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bid-based budget-balanced allocation mechanism: simulate, solve, verify"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::string scenario_path, out;
  Overrides run_o, oracle_o;
  std::optional<std::string> sweep;

  auto* run_cmd = app.add_subcommand("run", "simulate the best-response dynamic and write a trace");
  run_cmd->add_option("scenario", scenario_path, "scenario file")->required();
  add_override_flags(run_cmd, run_o, true);
  run_cmd->add_option("--out", out, "trace path (default: scenario outputs.trace, else stdout)")->envname(env("OUT"));
  run_cmd->add_option("--sweep", sweep, "run seeds FIRST:LAST, one trace per seed")->envname(env("SWEEP"));

  auto* oracle_cmd = app.add_subcommand("oracle", "solve the centralized welfare problem");
  oracle_cmd->add_option("scenario", scenario_path, "scenario file")->required();
  add_override_flags(oracle_cmd, oracle_o, false);
  oracle_cmd->add_option("--out", out, "solution path (default: scenario outputs.solution, else stdout)")
      ->envname(env("OUT"));

  std::string trace_path;
  std::optional<std::string> solution_path;
  std::vector<std::string> checks;
  double verify_tol = 1e-2;
  auto* verify_cmd = app.add_subcommand("verify", "check a trace against the mechanism's guarantees");
  verify_cmd->add_option("trace", trace_path, "trace file")->required();
  verify_cmd->add_option("--solution", solution_path, "oracle solution file")->envname(env("SOLUTION"));
  verify_cmd->add_option("--checks", checks, "families: budget,capacity,stationary,ir,convergence")
      ->delimiter(',')
      ->envname(env("CHECKS"));
  verify_cmd->add_option("--tol", verify_tol, "convergence tolerance")->envname(env("TOL"));
  verify_cmd->add_option("--out", out, "report path (default: stdout)")->envname(env("OUT"));

  std::string schema_name = "scenario";
  auto* schema_cmd = app.add_subcommand("schema", "print the JSON Schema of a file format");
  schema_cmd->add_option("format", schema_name, "scenario | trace | solution | report");
  schema_cmd->add_option("--out", out, "output path (default: stdout)")->envname(env("OUT"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidInput;
  }

  try {
    if (run_cmd->parsed()) {
      Scenario s = load_scenario(scenario_path);
      apply_overrides(s, run_o, Verb::Run);
      const std::string target = out.empty() ? s.outputs.trace : out;
      if (!sweep) {
        return with_output(target, [&](std::ostream& os) { return cmd_run(s, os, std::cerr); });
      }
      const auto [lo, hi] = parse_sweep(*sweep);
      if (target.empty() || target == "-") throw FormatError("--sweep", "needs an output path");
      int worst = kExitOk;
      for (std::uint64_t seed = lo;; ++seed) {
        s.dynamics.seed = seed;
        const std::string path = sweep_path(target, seed);
        std::cerr << "seed " << seed << " -> " << path << '\n';
        worst = std::max(worst, with_output(path, [&](std::ostream& os) { return cmd_run(s, os, std::cerr); }));
        if (seed == hi) break;
      }
      return worst;
    }
    if (oracle_cmd->parsed()) {
      Scenario s = load_scenario(scenario_path);
      apply_overrides(s, oracle_o, Verb::Oracle);
      const std::string target = out.empty() ? s.outputs.solution : out;
      return with_output(target, [&](std::ostream& os) { return cmd_oracle(s, os, std::cerr); });
    }
    if (verify_cmd->parsed()) {
      VerifyOptions opts{checks, verify_tol};
      std::optional<std::filesystem::path> sol;
      if (solution_path) sol = *solution_path;
      return with_output(out, [&](std::ostream& os) { return cmd_verify(trace_path, sol, opts, os, std::cerr); });
    }
    if (schema_cmd->parsed()) {
      const auto doc = schema_document(schema_name);
      if (!doc) throw FormatError("format", "unknown format '" + schema_name + "'");
      return with_output(out, [&](std::ostream& os) {
        os << doc->dump(2) << '\n';
        return kExitOk;
      });
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kExitSolverFailure;
  }
  return kExitInvalidInput;
}

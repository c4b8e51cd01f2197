/**
 * Command-line front end for the cascade control toolkit.
 *
 *   solvex run <scenario.json>     closed-loop run + artifact emission
 *   solvex sweep <scenario...>     batch runs with a one-line summary each
 *   solvex saturation-curve        steady-state feed sweep to CSV
 */

#include "solvex/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace {

using namespace solvex;

std::string resolve_out_dir(const Scenario& sc, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  if (!sc.out_dir.empty()) return sc.out_dir;
  return "out/" + sc.name;
}

void apply_overrides(Scenario& sc, bool have_seed, std::uint64_t seed,
                     bool no_estimator) {
  if (have_seed) sc.seed = seed;
  if (no_estimator) sc.estimator_enabled = false;
}

void print_summary(const RunTrace& trace, const Metrics& m, const std::string& dir) {
  std::printf("scenario %-22s seed %llu  ->  %s\n", trace.scenario.name.c_str(),
              static_cast<unsigned long long>(trace.scenario.seed), dir.c_str());
  if (trace.aborted) {
    std::printf("  ABORTED: %s\n", trace.abort_reason.c_str());
  }
  std::printf("  ticks %zu  overshoot %.2f%%  settled %s", trace.rows.size() - 1,
              100.0 * m.max_overshoot_fraction, m.settled ? "yes" : "no");
  if (m.settled) std::printf(" (%.1f h)", m.settling_time_h);
  std::printf("\n  violations: raffinate %d, overshoot %d\n",
              m.raffinate_violation_ticks, m.overshoot_violation_ticks);
  std::printf("  control ticks %d (hold %.0f%%, post-settling hold %.0f%%)\n",
              m.control_ticks, 100.0 * m.hold_fraction,
              100.0 * m.post_settling_hold_fraction);
  std::printf("  estimator activations %d, final flow estimate %.4f L/h\n",
              m.estimator_activations, m.q_hat_final);
  std::printf("  solver rollouts %lld\n", static_cast<long long>(m.solver_rollouts));
}

int cmd_run(const std::string& file, bool have_seed, std::uint64_t seed,
            const std::string& out_dir, bool no_estimator, bool strict) {
  Scenario sc = load_scenario(file);
  apply_overrides(sc, have_seed, seed, no_estimator);
  RunTrace trace = run_scenario(sc);
  Metrics m = compute_metrics(trace);
  const std::string dir = resolve_out_dir(sc, out_dir);
  emit_outputs(trace, m, dir);
  print_summary(trace, m, dir);
  if (strict && (trace.aborted || m.constraint_violations > 0)) {
    std::fprintf(stderr, "strict mode: run violated constraints\n");
    return 2;
  }
  return 0;
}

int cmd_sweep(const std::vector<std::string>& files, bool have_seed,
              std::uint64_t seed, const std::string& out_root, bool no_estimator) {
  std::printf("%-24s %-9s %-10s %-7s %-9s %-6s %s\n", "case", "OS%", "settle_h",
              "hold%", "postHold%", "raffV", "q_hat");
  bool any_aborted = false;
  for (const std::string& file : files) {
    Scenario sc = load_scenario(file);
    apply_overrides(sc, have_seed, seed, no_estimator);
    RunTrace trace = run_scenario(sc);
    Metrics m = compute_metrics(trace);
    const std::string root = out_root.empty() ? std::string("out") : out_root;
    emit_outputs(trace, m, root + "/" + sc.name);
    any_aborted = any_aborted || trace.aborted;
    char settle[32];
    if (m.settled) std::snprintf(settle, sizeof settle, "%.1f", m.settling_time_h);
    else std::snprintf(settle, sizeof settle, "-");
    std::printf("%-24s %-9.3f %-10s %-7.0f %-9.0f %-6d %.3f%s\n", sc.name.c_str(),
                100.0 * m.max_overshoot_fraction, settle, 100.0 * m.hold_fraction,
                100.0 * m.post_settling_hold_fraction, m.raffinate_violation_ticks,
                m.q_hat_final, trace.aborted ? "  ABORTED" : "");
  }
  return any_aborted ? 1 : 0;
}

int cmd_saturation(const std::string& scenario_file, double solvent_flow,
                   double u_min, double u_max, int points,
                   const std::string& out_file) {
  Scenario sc;
  if (!scenario_file.empty()) sc = load_scenario(scenario_file);
  CascadeModel model{sc.plant};
  const double q = solvent_flow > 0.0 ? solvent_flow : sc.plant.nominal_solvent_flow;
  const double lo = u_min > 0.0 ? u_min : sc.plant.feed_flow_min;
  const double hi = u_max > 0.0 ? u_max : sc.plant.feed_flow_max;

  std::vector<SaturationPoint> curve = saturation_curve(model, q, lo, hi, points);
  std::FILE* out = std::fopen(out_file.c_str(), "wb");
  if (out == nullptr) {
    std::fprintf(stderr, "error: cannot write '%s'\n", out_file.c_str());
    return 1;
  }
  std::fprintf(out, "u,y_steady,raffinate\n");
  int skipped = 0;
  for (const SaturationPoint& pt : curve) {
    if (!pt.converged) {
      ++skipped;
      continue;
    }
    std::fprintf(out, "%.10g,%.10g,%.10g\n", pt.u, pt.y_steady, pt.raffinate);
  }
  std::fclose(out);
  std::printf("saturation curve at solvent flow %.3f L/h: %zu points -> %s\n", q,
              curve.size() - skipped, out_file.c_str());
  if (skipped > 0) {
    std::printf("  (%d non-converged feed points skipped)\n", skipped);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"software-in-the-loop adaptive control of a solvent-extraction cascade"};
  app.require_subcommand(1);

  std::string scenario_file, out_dir, out_file = "saturation.csv";
  std::vector<std::string> sweep_files;
  std::uint64_t seed = 0;
  bool no_estimator = false, strict = false;
  double solvent_flow = 0.0, u_min = 0.0, u_max = 0.0;
  int points = 60;

  CLI::App* run = app.add_subcommand("run", "run one scenario and write its artifacts");
  run->add_option("scenario", scenario_file, "scenario JSON file")->required();
  CLI::Option* run_seed = run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out-dir", out_dir, "output directory (default out/<name>)");
  run->add_flag("--no-estimator", no_estimator, "disable the flow estimator");
  run->add_flag("--strict", strict, "exit nonzero on constraint violations");

  CLI::App* sweep = app.add_subcommand("sweep", "run several scenarios and tabulate");
  sweep->add_option("scenarios", sweep_files, "scenario JSON files")->required();
  CLI::Option* sweep_seed = sweep->add_option("--seed", seed, "override every scenario seed");
  sweep->add_option("--out-dir", out_dir, "output root (default out/)");
  sweep->add_flag("--no-estimator", no_estimator, "disable the flow estimator");

  CLI::App* sat = app.add_subcommand("saturation-curve", "steady-state feed sweep to CSV");
  sat->add_option("--scenario", scenario_file, "plant parameters from this scenario");
  sat->add_option("--solvent-flow", solvent_flow, "solvent flow L/h (default nominal)");
  sat->add_option("--u-min", u_min, "sweep start (default actuator minimum)");
  sat->add_option("--u-max", u_max, "sweep end (default actuator maximum)");
  sat->add_option("--points", points, "number of feed points")->check(CLI::PositiveNumber);
  sat->add_option("--out", out_file, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(scenario_file, !run_seed->empty(), seed, out_dir,
                     no_estimator, strict);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_files, !sweep_seed->empty(), seed, out_dir,
                       no_estimator);
    }
    return cmd_saturation(scenario_file, solvent_flow, u_min, u_max, points,
                          out_file);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
}

#pragma once

/**
 * Closed-loop software-in-the-loop driver.
 *
 * One authoritative plant instance advances on the measurement grid with the
 * true (possibly disturbed) solvent flow. The estimator consumes every
 * measurement and re-fits its solvent-flow estimate when its gate trips at
 * an estimation tick; a material change in the estimate re-derives the
 * operating setpoint. The controller re-plans at control ticks from the
 * estimator's belief state. The driver records one trace row per tick plus
 * per-solve diagnostics, derives the run metrics, and writes the artifact
 * files (trace.csv, controller.csv, estimator.csv, metrics.json).
 */

#include "solvex/mhe.hpp"
#include "solvex/nmpc.hpp"
#include "solvex/scenario.hpp"

#include <string>
#include <vector>

namespace solvex {

/// One measurement tick as recorded in trace.csv. `u` is the input in force
/// after the tick's decisions, so it changes only at control ticks; margins
/// are positive while the corresponding constraint is respected.
struct TraceRow {
  long long k = 0;
  double t = 0.0;
  double y_meas = 0.0;
  double y_set = 0.0;
  double u = 0.0;
  double q_true = 0.0;        // solvent flow during the step into this tick
  double q_hat = 0.0;
  double e_esti = 0.0;        // live estimator output error at this tick
  std::string mode;           // controller mode in force ("init" before any)
  double raffinate_margin = 0.0;  // loss ceiling minus true raffinate
  double os_margin = 0.0;         // overshoot ceiling minus current overshoot
};

/// One control-tick solve, kept with inputs the offline audit needs.
struct ControllerRow {
  long long k = 0;
  double t = 0.0;
  double u_prev = 0.0;
  double y_set = 0.0;
  double q_hat = 0.0;
  CascadeState x_belief;      // estimator state handed to the controller
  ControlDecision decision;
};

/// One estimation-tick gate evaluation.
struct EstimatorRow {
  long long k = 0;
  double t = 0.0;
  EstimateResult result;
  bool setpoint_refreshed = false;  // estimate moved enough to re-derive it
  bool setpoint_valid = true;       // false: refresh failed, kept the old one
};

struct RunTrace {
  Scenario scenario;          // as run
  Setpoint initial_setpoint;
  std::vector<TraceRow> rows;             // rows[0] is the t = 0 baseline
  std::vector<ControllerRow> controller;
  std::vector<EstimatorRow> estimator;
  bool aborted = false;
  std::string abort_reason;
};

struct Metrics {
  double max_overshoot_fraction = 0.0;  // max(y/y_set - 1, 0) over the run
  bool settled = false;
  double settling_time_h = -1.0;        // meaningful only when settled
  int raffinate_violation_ticks = 0;
  int overshoot_violation_ticks = 0;
  int constraint_violations = 0;        // sum of the two counts
  int control_ticks = 0;
  int hold_ticks = 0;
  double hold_fraction = 0.0;
  int post_settling_control_ticks = 0;
  int post_settling_hold_ticks = 0;
  double post_settling_hold_fraction = 0.0;
  long long solver_rollouts = 0;        // controller + estimator evaluations
  int estimator_activations = 0;
  double q_hat_final = 0.0;
};

/// Runs a validated scenario to completion (or to plant divergence, which
/// marks the trace aborted and keeps the partial rows). Deterministic for a
/// given scenario + seed. Throws std::invalid_argument when the scenario has
/// no valid operating point at the nominal solvent flow.
RunTrace run_scenario(const Scenario& scenario);

/// Derives the run metrics from a trace. Settling time is the earliest tick
/// after which the output stays inside the +/- eps_ss band around y_set for
/// the remainder of the run.
Metrics compute_metrics(const RunTrace& trace);

/// Writes trace.csv, controller.csv, estimator.csv and metrics.json into
/// `dir` (created if missing). Throws std::runtime_error when a file cannot
/// be written.
void emit_outputs(const RunTrace& trace, const Metrics& metrics,
                  const std::string& dir);

}  // namespace solvex

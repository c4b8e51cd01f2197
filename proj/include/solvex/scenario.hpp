#pragma once

/**
 * Scenario configuration for closed-loop cascade runs.
 *
 * A scenario bundles the plant parameters, the controller and estimator
 * settings, the shared timing grid, the solvent-flow disturbance schedule
 * and the run bookkeeping (length, seed, noise, output directory). Scenarios
 * load from JSON files; unknown keys are rejected so typos fail loudly
 * instead of silently running defaults.
 */

#include "solvex/cascade.hpp"
#include "solvex/mhe.hpp"
#include "solvex/nmpc.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace solvex {

/// One entry of the solvent-flow disturbance schedule: from `time_h` onward
/// the true solvent flow is (1 + relative_change) times the nominal flow.
struct DisturbanceEvent {
  double time_h = 0.0;
  double relative_change = 0.0;
};

/// True solvent flow at time t under a schedule sorted by time: the nominal
/// flow scaled by the latest entry at or before t (unscaled before the
/// first entry).
double disturbed_solvent_flow(double t,
                              const std::vector<DisturbanceEvent>& schedule,
                              double q_nominal);

struct Scenario {
  std::string name = "scenario";
  CascadeParams plant;
  NmpcConfig control;
  MheConfig estimator;
  bool estimator_enabled = true;
  double setpoint_fraction = 0.5;   // of the critical output
  int n_sim = 150;                  // measurement ticks
  double u_init = 0.0;              // initial feed flow; 0 = actuator minimum
  double noise_sigma = 0.0;         // mol/L, gaussian measurement noise
  double os_max_fraction = 0.20;    // overshoot ceiling for the audit
  double eps_ss = 0.05;             // settling band, fraction of y_set
  double setpoint_refresh_fraction = 0.005;  // q-hat drift forcing a refresh
  std::uint64_t seed = 1;
  std::vector<DisturbanceEvent> disturbances;
  std::string out_dir;              // empty = out/<name>

  double t_meas() const { return control.t_meas; }
  double resolved_u_init() const {
    return u_init > 0.0 ? u_init : plant.feed_flow_min;
  }

  /// Throws std::invalid_argument on inconsistent settings: mismatched tick
  /// lengths, control intervals not a multiple of estimation intervals, an
  /// unsorted or out-of-range disturbance schedule, or a schedule entry that
  /// would drive the solvent flow to zero or below.
  void validate() const;
};

/// Parses a scenario from JSON text / a JSON file. Both throw
/// std::invalid_argument on malformed JSON, unknown keys or values that fail
/// Scenario::validate().
Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);

}  // namespace solvex

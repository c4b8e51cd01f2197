#pragma once

/**
 * Moving-horizon estimator for the cascade's solvent-flow disturbance.
 *
 * The estimator runs a copy of the plant model in parallel with the real
 * plant, driven by the same applied inputs but by the *estimated* solvent
 * flow. Every measurement tick it records the measured and predicted
 * outputs; when the prediction error at an estimation tick exceeds the
 * activation threshold, it re-fits the solvent flow over the recent past:
 *
 *  - an anchor tick is chosen as the most recent record whose trailing
 *    window of errors is small, backed off by a small lag margin so the
 *    anchor state predates any divergence the output has not yet shown;
 *  - the span from the anchor to now is subsampled at a few coincidence
 *    points, and the solvent flow is fitted as one piecewise-constant value
 *    per coincidence interval by the swarm optimizer, weighting recent
 *    mismatches more heavily;
 *  - the history is then re-rolled from the anchor under the accepted
 *    profile, and the latest segment value becomes the operating estimate.
 */

#include "solvex/cascade.hpp"
#include "solvex/gcpso.hpp"

#include <cstdint>
#include <deque>
#include <vector>

namespace solvex {

struct MheConfig {
  int n_esti = 5;                  // measurement ticks per estimation interval
  double t_meas = 0.1;             // h, measurement tick length
  int n_w = 5;                     // anchor window, ticks
  int n_e = 2;                     // coincidence intervals across the span
  double active_fraction = 0.01;   // activation threshold, fraction of y_set
  double anchor_fraction = 0.001;  // anchor cleanliness, fraction of y_set
  int anchor_lag_margin = 1;       // ticks backed off the last clean tick
  double q_lower_fraction = 0.25;  // search box, fraction of nominal solvent
  double q_upper_fraction = 2.0;
  int history_factor = 4;          // ticks kept behind the anchor, times n_w
  SwarmConfig swarm = fit_swarm_defaults();

  void validate() const;           // throws std::invalid_argument
  int history_cap() const { return 2 * history_factor * n_w; }

  /// Fit costs are squared output mismatches (1e-10..1e-5), far below the
  /// solver's control-scale stopping defaults, so the floor and stall
  /// tolerances are tightened for estimation work.
  static SwarmConfig fit_swarm_defaults() {
    SwarmConfig s;
    s.eps_l = 1e-14;
    s.eps_dl = 1e-8;
    return s;
  }
};

/// One measurement tick as the estimator saw it. `error` is the mismatch
/// against the model as it ran live and is never rewritten afterwards: it is
/// the evidence used to judge where the model was still trustworthy. Refits
/// overwrite `x_model`/`y_model` with the re-rolled belief and leave the
/// post-fit mismatch in `residual`.
struct MheRecord {
  long long k = 0;          // measurement tick index
  double y_meas = 0.0;
  double u_applied = 0.0;   // feed flow applied over (k-1, k]
  double y_model = 0.0;     // current-belief model output at k
  double error = 0.0;       // live mismatch, immutable once recorded
  double residual = 0.0;    // mismatch against the current belief
  CascadeState x_model;     // current-belief model state at k
};

struct EstimateResult {
  bool activated = false;
  bool anchor_fallback = false;   // no clean window; oldest record used
  long long anchor_k = -1;
  double q_hat = 0.0;             // operating estimate after the call
  double cost = 0.0;
  int iterations = 0;
  long long rollouts = 0;
  std::vector<long long> coincidence;
};

/// Ticks {k0 + round(j * (k - k0) / n_e), j = 0..n_e}, duplicates removed.
std::vector<long long> coincidence_points(long long k0, long long k, int n_e);

class MheEstimator {
 public:
  MheEstimator(CascadeModel model, MheConfig cfg, double q_nominal);

  /// Start (or restart) the parallel model at state `x0`, tick `k0`, with the
  /// estimate reset to the nominal solvent flow. Writes a pristine record.
  void reset(const CascadeState& x0, long long k0 = 0);

  /// Advance the parallel model across one measurement tick with the applied
  /// feed flow, then record the measurement taken at tick `k`.
  const MheRecord& advance(long long k, double u_applied, double y_meas);

  /// Gate-and-estimate at an estimation tick. `y_set` scales the activation
  /// and anchor thresholds; `seed` fixes the solver randomness.
  EstimateResult estimate(long long k, double y_set, std::uint64_t seed);

  double q_hat() const { return q_hat_; }
  double q_nominal() const { return q_nominal_; }
  const CascadeState& state() const { return x_; }
  double output() const { return model_.output(x_); }
  const std::deque<MheRecord>& history() const { return history_; }
  const CascadeModel& model() const { return model_; }

 private:
  void trim_history(long long anchor_k);

  CascadeModel model_;
  MheConfig cfg_;
  double q_nominal_;
  double q_hat_;
  CascadeState x_;
  long long last_k_ = -1;
  std::deque<MheRecord> history_;
};

}  // namespace solvex

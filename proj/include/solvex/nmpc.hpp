#pragma once

/**
 * Receding-horizon feed-flow controller for the extraction cascade.
 *
 * Every control interval the controller searches, with the swarm optimizer,
 * for a short sequence of feed-flow moves that tracks a state/output setpoint
 * while respecting the actuator range, a per-interval rate limit and a hard
 * ceiling on predicted raffinate losses. The search space is the reachable
 * tube around the previously applied input; candidate plans that leave it are
 * clipped back by a forward saturation pass. When the plant is already
 * settled, a cheaper hold test keeps the input pinned at the setpoint value
 * instead of re-optimizing. When no candidate plan is feasible the controller
 * widens the allowed downward move step by step (an emergency descent) and,
 * once the whole tube has collapsed onto the minimum feed, pins the swarm and
 * the command there.
 */

#include "solvex/cascade.hpp"
#include "solvex/gcpso.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace solvex {

/// Per-step feed-flow bounds reachable from the previously applied input
/// under the rate limit, intersected with the actuator range. `shift` > 0
/// widens the allowed downward move (emergency relaxation) while shrinking
/// the upward one by the same number of rate steps.
struct ReachableTube {
  Vec lower;
  Vec upper;
  double u_ref = 0.0;    // rate reference ahead of step 0
  double max_step = 0.0; // downward rate allowance per step
  double up_step = 0.0;  // upward rate allowance per step (0 in emergencies)
  double u_min = 0.0;
  double u_max = 0.0;
  int shift = 0;

  BoxBounds box() const { return BoxBounds{lower, upper}; }
  /// True when every step's bounds have collapsed onto the minimum feed.
  bool collapsed_to_floor() const;
};

ReachableTube reachable_tube(double u_prev, double max_step, double u_min,
                             double u_max, int n_steps, int shift = 0);

/// Forward pass clipping each step into the actuator range and to within
/// the rate limit of its (already clipped) predecessor. Idempotent.
void saturate_plan(Vec& plan, const ReachableTube& tube);

/// Move phase used instead of the optimizer's default: each particle's
/// proposed move is halved (up to `max_halvings` times) until the raw target
/// stays inside the tube; if it never does, the saturated target is used.
/// Velocities are rewritten to the displacement actually taken.
void apply_rate_limited_moves(SwarmContext& ctx, const ReachableTube& tube,
                              int max_halvings);

/// Operating target derived from the current solvent flow: the critical feed
/// where raffinate losses break through, the output there, and the
/// half-of-critical setpoint with its steady state.
struct Setpoint {
  bool valid = false;
  double solvent_flow = 0.0;
  double critical_feed = 0.0;
  double critical_output = 0.0;
  double y_set = 0.0;
  double u_set = 0.0;
  CascadeState x_set;
};

/// Locates the critical feed (steady raffinate crossing 0.2% of the feed
/// concentration) by bisection over the actuator range, then the feed whose
/// steady output equals `setpoint_fraction` of the critical output. Returns
/// valid = false when the window does not exist inside the actuator range
/// (e.g. the solvent flow is too small to run the cascade at all) or the
/// plant will not settle.
Setpoint compute_setpoint(const CascadeModel& model, double solvent_flow,
                          double setpoint_fraction = 0.5);

struct NmpcConfig {
  int n_p = 3;               // decision steps in the horizon
  int n_ctrl = 5;            // measurement ticks per control interval
  double t_meas = 0.1;       // h, measurement tick length
  double tracking_weight = 1.0;   // state deviation weight per horizon step
  double terminal_weight = 1.0;   // state deviation weight after the held tail
  double input_scale = 0.01;      // input deviation weight = scale / u_set
  double move_scale = 0.01;       // input move weight = scale / u_set
  double rate_fraction = 0.1;     // rate limit per interval, fraction of u_set
  int hold_horizon = 10;          // intervals simulated by the hold test
  double hold_band = 0.05;        // output band around y_set for holding
  double raffinate_limit_fraction = 0.01;  // of the feed concentration
  int max_velocity_halvings = 12;
  int relax_i_max = 20;      // iteration budget during emergency rounds
  SwarmConfig swarm;

  void validate() const;     // throws std::invalid_argument
};

/// True on measurement ticks where a control interval starts (k = 1, 1 +
/// n_ctrl, 1 + 2 n_ctrl, ...).
bool is_control_tick(long long k, int n_ctrl);

/// Memoized rollout cost for candidate feed-flow plans from a fixed start
/// state. A plan of n_p steps is simulated over n_p + 1 control intervals
/// (the last step is held one extra interval); the cost accumulates weighted
/// squared state deviations at interval ends, input deviations from u_set and
/// input moves, plus a terminal state deviation. Any rollout that diverges or
/// whose predicted raffinate exceeds the loss ceiling costs +infinity.
class RolloutEvaluator {
 public:
  RolloutEvaluator(const CascadeModel& model, const NmpcConfig& cfg,
                   const Setpoint& setpoint, const CascadeState& start,
                   double u_prev, double solvent_flow);

  double cost(const Vec& plan);

  long long rollouts() const { return rollouts_; }
  long long cache_hits() const { return cache_hits_; }

 private:
  double evaluate(const Vec& plan) const;

  const CascadeModel& model_;
  const NmpcConfig& cfg_;
  const Setpoint& setpoint_;
  CascadeState start_;
  double u_prev_;
  double solvent_flow_;
  double raffinate_limit_;
  std::unordered_map<std::string, double> memo_;
  long long rollouts_ = 0;
  long long cache_hits_ = 0;
};

enum class ControlMode { kHold, kOptimize, kPinned };
const char* to_string(ControlMode mode);

struct ControlDecision {
  double u = 0.0;
  ControlMode mode = ControlMode::kOptimize;
  Vec plan;                   // the full accepted sequence (empty when pinned)
  double cost = 0.0;          // rollout cost of the applied plan
  int iterations = 0;         // swarm iterations of the accepted solve
  StopReason stop_reason = StopReason::kNone;
  double cluster_rate = 0.0;
  int relax_rounds = 0;       // emergency widenings before a feasible solve
  bool pinned_min = false;    // tube collapsed; command forced to minimum feed
  bool rate_relaxed = false;  // |u - u_prev| exceeded the nominal rate limit
  long long rollouts = 0;
  long long cache_hits = 0;
};

class NmpcController {
 public:
  NmpcController(CascadeModel model, NmpcConfig cfg);

  /// True when holding the input at u_set for `hold_horizon` intervals keeps
  /// the predicted output inside the hold band (and the raffinate clean).
  bool hold_acceptable(const CascadeState& x, const Setpoint& setpoint,
                       double solvent_flow) const;

  /// One control decision from the estimated state. `seed` fixes all solver
  /// randomness for the call.
  ControlDecision decide(const CascadeState& x, const Setpoint& setpoint,
                         double solvent_flow, double u_prev,
                         std::uint64_t seed);

  /// Forget the warm-start plan carried between calls.
  void reset_plan() { last_plan_.clear(); }

  const NmpcConfig& config() const { return cfg_; }
  const CascadeModel& model() const { return model_; }

 private:
  CascadeModel model_;
  NmpcConfig cfg_;
  Vec last_plan_;
};

}  // namespace solvex

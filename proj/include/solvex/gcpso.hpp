#pragma once

/**
 * Global-best particle swarm optimizer with a guaranteed-convergence update
 * for the best particle.
 *
 * Features:
 *  - linearly scheduled inertia weight and acceleration coefficients,
 *  - per-dimension velocity clamping,
 *  - a random-search ("guaranteed convergence") velocity rule for the particle
 *    holding the global best, with an adaptive search radius driven by
 *    success/failure streaks,
 *  - termination by cost stall, velocity stall or cost floor, gated by a
 *    minimum swarm cluster rate, plus an iteration budget,
 *  - removal of exactly duplicated particles (position, personal best and
 *    velocity all identical) with uniform re-sampling,
 *  - an optional per-iteration re-initialization hook that lets a caller
 *    replace the move phase entirely (used by the predictive controller to
 *    enforce state constraints by velocity halving and bound shrinking).
 *
 * All randomness comes from a single seeded std::mt19937_64, so a run is
 * fully reproducible from (config, bounds, initial guess, seed).
 */

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace solvex {

using Vec = std::vector<double>;

/// Per-dimension box for the decision vector.
struct BoxBounds {
  Vec lower;
  Vec upper;

  std::size_t dims() const { return lower.size(); }
  double width(std::size_t d) const { return upper[d] - lower[d]; }

  /// Throws std::invalid_argument on size mismatch, empty box, non-finite
  /// entries or lower > upper in any dimension.
  void validate() const;
};

/// Solver settings. Defaults follow the reference tuning used throughout the
/// toolkit (50 particles, 100 iterations, inertia 0.9 -> 0.4, cognitive
/// coefficient 2.5 -> 0.5, social coefficient 0.5 -> 2.5).
struct SwarmConfig {
  int n_particles = 50;
  int i_max = 100;                  // iteration budget
  double w_init = 0.9;              // inertia weight at iteration 0
  double w_final = 0.4;             // inertia weight at i_max
  double c1_init = 2.5;             // cognitive coefficient at iteration 0
  double c1_final = 0.5;            // cognitive coefficient at i_max
  double c2_init = 0.5;             // social coefficient at iteration 0
  double c2_final = 2.5;            // social coefficient at i_max
  int eps_success = 15;             // success streak before radius doubling
  int eps_failure = 5;              // failure streak before radius halving
  double r_clus_min = 0.70;         // cluster rate required for convergence
  int n_ter = 5;                    // window length for stall detection
  double eps_dl = 1e-5;             // relative best-cost stall tolerance
  double eps_v = 1e-3;              // velocity stall tolerance (normalized)
  double eps_l = 1e-4;              // absolute cost floor
  double v_max_fraction = 0.5;      // velocity clamp as fraction of box width
  double rho_init = 1.0;            // initial search radius (normalized)
  double cluster_radius_fraction = 0.02;  // of the normalized box diagonal
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument when a setting is out of range.
  void validate() const;
};

struct Particle {
  Vec position;
  Vec velocity;
  Vec pbest_position;
  double pbest_cost = std::numeric_limits<double>::infinity();
};

/// Full swarm state; public so tests and hooks can construct and inspect it.
struct SwarmState {
  std::vector<Particle> particles;
  Vec gbest_position;
  double gbest_cost = std::numeric_limits<double>::infinity();
  int gbest_index = 0;              // particle holding the global best
  double rho = 1.0;                 // current search radius (normalized)
  int n_success = 0;                // consecutive global-best improvements
  int n_failure = 0;                // consecutive non-improvements
  int iteration = 0;
  std::vector<double> gbest_history;           // one entry per iteration
  std::vector<double> velocity_history_maxima; // max normalized ||v|| per iteration
};

enum class StopReason {
  kNone,             // keep iterating
  kCostStall,        // relative best-cost change below eps_dl over the window
  kVelocityStall,    // max velocity norm below eps_v over the window
  kCostFloor,        // best cost at or below eps_l
  kIterationBudget,  // iteration budget exhausted
};

const char* to_string(StopReason reason);

/// View handed to the re-initialization hook once per iteration. The hook
/// owns the whole move phase: it must leave every particle at its final
/// position with a velocity equal to the displacement actually taken.
/// Bounds may be narrowed in place (never widened).
struct SwarmContext {
  SwarmState& swarm;
  BoxBounds& bounds;
  std::mt19937_64& rng;
};

struct ProblemCallbacks {
  /// Required. Non-finite returns are treated as +infinity (the candidate
  /// can never become a personal or global best).
  std::function<double(const Vec&)> cost;
  /// Optional position projection applied after every move and to fresh
  /// samples. Defaults to clamping into the current bounds. The solver
  /// rewrites the velocity as (repaired position - previous position).
  std::function<void(Vec&)> repair;
  /// Optional replacement for the whole move phase; see SwarmContext.
  std::function<void(SwarmContext&)> reinit_hook;
};

struct SolveDiagnostics {
  int iterations = 0;
  StopReason reason = StopReason::kNone;
  double final_cluster_rate = 0.0;
  long long cost_evaluations = 0;
  bool all_infeasible = false;  // no finite-cost candidate was ever seen
};

struct SolveResult {
  Vec best_position;
  double best_cost = std::numeric_limits<double>::infinity();
  SolveDiagnostics diagnostics;
};

// ---- schedule and update rules (pure, unit-tested directly) ----

/// Inertia weight at iteration i: linear from w_init (i = 0) down to
/// w_final (i = i_max), exact at both endpoints.
double inertia_weight(int i, const SwarmConfig& cfg);

/// Acceleration coefficient at iteration i: linear from c_start (i = 0) to
/// c_end (i = i_max), exact at both endpoints.
double acceleration_coefficient(int i, double c_start, double c_end, int i_max);

/// Standard velocity rule: w*v + c1*r1.*(pbest - p) + c2*r2.*(gbest - p).
Vec standard_velocity(const Vec& v_prev, const Vec& position, const Vec& pbest,
                      const Vec& gbest, double w, double c1, double c2,
                      const Vec& r1, const Vec& r2);

/// Guaranteed-convergence rule for the best particle: the resulting move
/// lands at gbest + w*v_prev + radius.*(1 - 2*r2), i.e. a random probe around
/// the global best. `radius` is the per-dimension search radius.
Vec convergence_velocity(const Vec& position, const Vec& gbest, double w,
                         const Vec& v_prev, const Vec& radius, const Vec& r2);

/// Clamp each velocity component to +-v_max_fraction * box width.
void clamp_velocity(Vec& v, const BoxBounds& bounds, double v_max_fraction);

/// Next search radius given the post-update streak counters: doubled after
/// more than eps_success consecutive improvements, halved after more than
/// eps_failure consecutive failures, unchanged otherwise.
double next_search_radius(double rho, int n_success, int n_failure,
                          const SwarmConfig& cfg);

/// Update the success/failure streaks from this iteration's outcome and apply
/// next_search_radius. Returns the new radius.
double update_rho(SwarmState& state, bool improved, const SwarmConfig& cfg);

/// Refresh personal bests from freshly evaluated costs (aligned with the
/// particle array), then re-select the global best. Ties keep the lowest
/// particle index. Appends the best cost to gbest_history.
void update_bests(SwarmState& state, const std::vector<double>& costs);

/// Norm of v with each component divided by the box width (zero-width
/// dimensions contribute nothing).
double normalized_norm(const Vec& v, const BoxBounds& bounds);

/// Normalized Euclidean distance between two positions.
double normalized_distance(const Vec& a, const Vec& b, const BoxBounds& bounds);

/// Fraction of particles within `radius` (normalized units) of the global
/// best position. The particle holding the global best always counts.
double cluster_rate(const SwarmState& state, const BoxBounds& bounds,
                    double radius);

/// Termination test for the current iteration. The stall and floor criteria
/// only fire once the cluster rate reaches r_clus_min; the iteration budget
/// fires unconditionally.
StopReason check_termination(const SwarmState& state, const BoxBounds& bounds,
                             const SwarmConfig& cfg);

/// Assign every particle its next velocity: the guaranteed-convergence rule
/// for the particle holding the global best, the standard clamped rule for
/// all others.
void refresh_velocities(SwarmState& state, const BoxBounds& bounds,
                        const SwarmConfig& cfg, std::mt19937_64& rng);

/// Remove particles whose (position, pbest, velocity) triple exactly matches
/// an earlier particle's; replacements are sampled uniformly in the current
/// bounds with zero velocity, repaired, evaluated and folded into the bests.
/// Returns the number of particles replaced.
int remove_duplicates(SwarmState& state, const BoxBounds& bounds,
                      std::mt19937_64& rng,
                      const std::function<void(Vec&)>& repair,
                      const std::function<double(const Vec&)>& cost,
                      long long* eval_counter = nullptr);

class SwarmOptimizer {
 public:
  explicit SwarmOptimizer(SwarmConfig cfg);

  /// Run the optimizer. `initial_guess` becomes particle 0 (after repair);
  /// the rest of the swarm is scattered uniformly. Throws
  /// std::invalid_argument on invalid bounds or a guess of the wrong size.
  SolveResult minimize(const ProblemCallbacks& problem, BoxBounds bounds,
                       const Vec& initial_guess);

  const SwarmConfig& config() const { return cfg_; }

 private:
  SwarmConfig cfg_;
};

}  // namespace solvex

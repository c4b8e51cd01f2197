#include "solvex/gcpso.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace solvex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sanitize_cost(double c) { return std::isfinite(c) ? c : kInf; }

double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

Vec uniform_sample(const BoxBounds& bounds, std::mt19937_64& rng) {
  Vec p(bounds.dims());
  for (std::size_t d = 0; d < p.size(); ++d) {
    const double w = bounds.width(d);
    p[d] = w > 0.0 ? bounds.lower[d] + uniform01(rng) * w : bounds.lower[d];
  }
  return p;
}

}  // namespace

void BoxBounds::validate() const {
  if (lower.empty() || lower.size() != upper.size()) {
    throw std::invalid_argument("BoxBounds: empty box or size mismatch");
  }
  for (std::size_t d = 0; d < lower.size(); ++d) {
    if (!std::isfinite(lower[d]) || !std::isfinite(upper[d])) {
      throw std::invalid_argument("BoxBounds: non-finite bound");
    }
    if (lower[d] > upper[d]) {
      std::ostringstream oss;
      oss << "BoxBounds: lower > upper in dimension " << d << " (" << lower[d]
          << " > " << upper[d] << ")";
      throw std::invalid_argument(oss.str());
    }
  }
}

void SwarmConfig::validate() const {
  if (n_particles < 2) throw std::invalid_argument("SwarmConfig: n_particles < 2");
  if (i_max < 1) throw std::invalid_argument("SwarmConfig: i_max < 1");
  if (n_ter < 1) throw std::invalid_argument("SwarmConfig: n_ter < 1");
  if (!(w_init >= w_final) || !(w_final > 0.0) || !(w_init < 1.0)) {
    throw std::invalid_argument("SwarmConfig: need 0 < w_final <= w_init < 1");
  }
  if (c1_init < 0.0 || c1_final < 0.0 || c2_init < 0.0 || c2_final < 0.0) {
    throw std::invalid_argument("SwarmConfig: negative acceleration coefficient");
  }
  if (eps_success < 1 || eps_failure < 1) {
    throw std::invalid_argument("SwarmConfig: streak thresholds must be >= 1");
  }
  if (!(r_clus_min >= 0.0 && r_clus_min <= 1.0)) {
    throw std::invalid_argument("SwarmConfig: r_clus_min outside [0, 1]");
  }
  if (!(eps_dl > 0.0) || !(eps_v > 0.0) || !(eps_l > 0.0)) {
    throw std::invalid_argument("SwarmConfig: stall tolerances must be > 0");
  }
  if (!(v_max_fraction > 0.0 && v_max_fraction <= 1.0)) {
    throw std::invalid_argument("SwarmConfig: v_max_fraction outside (0, 1]");
  }
  if (!(rho_init > 0.0) || !(cluster_radius_fraction > 0.0)) {
    throw std::invalid_argument("SwarmConfig: rho_init and cluster radius must be > 0");
  }
}

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kNone: return "none";
    case StopReason::kCostStall: return "cost_stall";
    case StopReason::kVelocityStall: return "velocity_stall";
    case StopReason::kCostFloor: return "cost_floor";
    case StopReason::kIterationBudget: return "iteration_budget";
  }
  return "unknown";
}

double inertia_weight(int i, const SwarmConfig& cfg) {
  if (i <= 0) return cfg.w_init;
  if (i >= cfg.i_max) return cfg.w_final;
  return cfg.w_final +
         (cfg.w_init - cfg.w_final) *
             (static_cast<double>(cfg.i_max - i) / static_cast<double>(cfg.i_max));
}

double acceleration_coefficient(int i, double c_start, double c_end, int i_max) {
  if (i <= 0) return c_start;
  if (i >= i_max) return c_end;
  return c_start + (c_end - c_start) *
                       (static_cast<double>(i) / static_cast<double>(i_max));
}

Vec standard_velocity(const Vec& v_prev, const Vec& position, const Vec& pbest,
                      const Vec& gbest, double w, double c1, double c2,
                      const Vec& r1, const Vec& r2) {
  Vec v(position.size());
  for (std::size_t d = 0; d < v.size(); ++d) {
    v[d] = w * v_prev[d] + c1 * r1[d] * (pbest[d] - position[d]) +
           c2 * r2[d] * (gbest[d] - position[d]);
  }
  return v;
}

Vec convergence_velocity(const Vec& position, const Vec& gbest, double w,
                         const Vec& v_prev, const Vec& radius, const Vec& r2) {
  Vec v(position.size());
  for (std::size_t d = 0; d < v.size(); ++d) {
    v[d] = gbest[d] - position[d] + w * v_prev[d] +
           radius[d] * (1.0 - 2.0 * r2[d]);
  }
  return v;
}

void clamp_velocity(Vec& v, const BoxBounds& bounds, double v_max_fraction) {
  for (std::size_t d = 0; d < v.size(); ++d) {
    const double vmax = v_max_fraction * bounds.width(d);
    v[d] = std::clamp(v[d], -vmax, vmax);
  }
}

double next_search_radius(double rho, int n_success, int n_failure,
                          const SwarmConfig& cfg) {
  if (n_success > cfg.eps_success) return 2.0 * rho;
  if (n_failure > cfg.eps_failure) return 0.5 * rho;
  return rho;
}

double update_rho(SwarmState& state, bool improved, const SwarmConfig& cfg) {
  if (improved) {
    ++state.n_success;
    state.n_failure = 0;
  } else {
    ++state.n_failure;
    state.n_success = 0;
  }
  state.rho = next_search_radius(state.rho, state.n_success, state.n_failure, cfg);
  return state.rho;
}

void update_bests(SwarmState& state, const std::vector<double>& costs) {
  for (std::size_t n = 0; n < state.particles.size(); ++n) {
    Particle& p = state.particles[n];
    const double c = sanitize_cost(costs[n]);
    if (c < p.pbest_cost) {
      p.pbest_cost = c;
      p.pbest_position = p.position;
    }
  }
  int best = 0;
  for (std::size_t n = 1; n < state.particles.size(); ++n) {
    if (state.particles[n].pbest_cost < state.particles[best].pbest_cost) {
      best = static_cast<int>(n);
    }
  }
  state.gbest_index = best;
  state.gbest_cost = state.particles[best].pbest_cost;
  state.gbest_position = state.particles[best].pbest_position;
  state.gbest_history.push_back(state.gbest_cost);
}

double normalized_norm(const Vec& v, const BoxBounds& bounds) {
  double s = 0.0;
  for (std::size_t d = 0; d < v.size(); ++d) {
    const double w = bounds.width(d);
    if (w > 0.0) {
      const double z = v[d] / w;
      s += z * z;
    }
  }
  return std::sqrt(s);
}

double normalized_distance(const Vec& a, const Vec& b, const BoxBounds& bounds) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double w = bounds.width(d);
    if (w > 0.0) {
      const double z = (a[d] - b[d]) / w;
      s += z * z;
    }
  }
  return std::sqrt(s);
}

double cluster_rate(const SwarmState& state, const BoxBounds& bounds,
                    double radius) {
  if (state.particles.empty()) return 0.0;
  int count = 0;
  for (std::size_t n = 0; n < state.particles.size(); ++n) {
    if (static_cast<int>(n) == state.gbest_index ||
        normalized_distance(state.particles[n].position, state.gbest_position,
                            bounds) <= radius) {
      ++count;
    }
  }
  return static_cast<double>(count) / static_cast<double>(state.particles.size());
}

StopReason check_termination(const SwarmState& state, const BoxBounds& bounds,
                             const SwarmConfig& cfg) {
  if (state.iteration >= cfg.i_max) return StopReason::kIterationBudget;

  const double radius = cfg.cluster_radius_fraction *
                        std::sqrt(static_cast<double>(bounds.dims()));
  if (cluster_rate(state, bounds, radius) < cfg.r_clus_min) {
    return StopReason::kNone;
  }

  if (state.gbest_cost <= cfg.eps_l) return StopReason::kCostFloor;

  // Stall windows span the last n_ter + 1 iterations and need that much
  // history before they can fire.
  const int i = state.iteration;
  if (i >= cfg.n_ter + 1 &&
      state.gbest_history.size() > static_cast<std::size_t>(i)) {
    double max_diff = 0.0;
    bool finite = true;
    for (int j = i - cfg.n_ter; j <= i; ++j) {
      const double a = state.gbest_history[j - 1];
      const double b = state.gbest_history[j];
      if (!std::isfinite(a) || !std::isfinite(b)) {
        finite = false;
        break;
      }
      max_diff = std::max(max_diff, std::abs(b - a));
    }
    if (finite) {
      const double scale = std::abs(state.gbest_cost);
      const double dl = scale > 0.0 ? max_diff / scale
                                    : (max_diff == 0.0 ? 0.0 : kInf);
      if (dl <= cfg.eps_dl) return StopReason::kCostStall;
    }
    if (state.velocity_history_maxima.size() > static_cast<std::size_t>(i)) {
      double vmax = 0.0;
      for (int j = i - cfg.n_ter; j <= i; ++j) {
        vmax = std::max(vmax, state.velocity_history_maxima[j]);
      }
      if (vmax <= cfg.eps_v) return StopReason::kVelocityStall;
    }
  }
  return StopReason::kNone;
}

void refresh_velocities(SwarmState& state, const BoxBounds& bounds,
                        const SwarmConfig& cfg, std::mt19937_64& rng) {
  const std::size_t dims = bounds.dims();
  const double w = inertia_weight(state.iteration, cfg);
  const double c1 =
      acceleration_coefficient(state.iteration, cfg.c1_init, cfg.c1_final, cfg.i_max);
  const double c2 =
      acceleration_coefficient(state.iteration, cfg.c2_init, cfg.c2_final, cfg.i_max);

  Vec r1(dims), r2(dims), radius(dims);
  for (std::size_t n = 0; n < state.particles.size(); ++n) {
    Particle& p = state.particles[n];
    const bool use_convergence_rule =
        static_cast<int>(n) == state.gbest_index &&
        std::isfinite(state.gbest_cost);
    if (use_convergence_rule) {
      for (std::size_t d = 0; d < dims; ++d) {
        r2[d] = uniform01(rng);
        radius[d] = state.rho * bounds.width(d);
      }
      p.velocity = convergence_velocity(p.position, state.gbest_position, w,
                                        p.velocity, radius, r2);
    } else {
      for (std::size_t d = 0; d < dims; ++d) r1[d] = uniform01(rng);
      for (std::size_t d = 0; d < dims; ++d) r2[d] = uniform01(rng);
      p.velocity = standard_velocity(p.velocity, p.position, p.pbest_position,
                                     state.gbest_position, w, c1, c2, r1, r2);
      clamp_velocity(p.velocity, bounds, cfg.v_max_fraction);
    }
  }
}

int remove_duplicates(SwarmState& state, const BoxBounds& bounds,
                      std::mt19937_64& rng,
                      const std::function<void(Vec&)>& repair,
                      const std::function<double(const Vec&)>& cost,
                      long long* eval_counter) {
  const auto triple_equal = [](const Particle& a, const Particle& b) {
    return a.position == b.position && a.pbest_position == b.pbest_position &&
           a.velocity == b.velocity;
  };

  int replaced = 0;
  for (std::size_t n = 1; n < state.particles.size(); ++n) {
    bool duplicate = false;
    for (std::size_t m = 0; m < n; ++m) {
      if (triple_equal(state.particles[m], state.particles[n])) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) continue;

    Particle& p = state.particles[n];
    p.position = uniform_sample(bounds, rng);
    if (repair) repair(p.position);
    p.velocity.assign(bounds.dims(), 0.0);
    p.pbest_position = p.position;
    p.pbest_cost = sanitize_cost(cost(p.position));
    if (eval_counter) ++(*eval_counter);
    ++replaced;
  }

  if (replaced > 0) {
    // Re-select the global best; a replacement may have improved on it.
    int best = 0;
    for (std::size_t n = 1; n < state.particles.size(); ++n) {
      if (state.particles[n].pbest_cost < state.particles[best].pbest_cost) {
        best = static_cast<int>(n);
      }
    }
    state.gbest_index = best;
    state.gbest_cost = state.particles[best].pbest_cost;
    state.gbest_position = state.particles[best].pbest_position;
  }
  return replaced;
}

SwarmOptimizer::SwarmOptimizer(SwarmConfig cfg) : cfg_(cfg) { cfg_.validate(); }

SolveResult SwarmOptimizer::minimize(const ProblemCallbacks& problem,
                                     BoxBounds bounds,
                                     const Vec& initial_guess) {
  bounds.validate();
  const std::size_t dims = bounds.dims();
  if (!problem.cost) {
    throw std::invalid_argument("SwarmOptimizer: cost callback is required");
  }
  if (!initial_guess.empty() && initial_guess.size() != dims) {
    throw std::invalid_argument("SwarmOptimizer: initial guess has wrong size");
  }

  std::mt19937_64 rng(cfg_.rng_seed);
  const std::function<void(Vec&)> repair =
      problem.repair ? problem.repair : std::function<void(Vec&)>([&bounds](Vec& p) {
        for (std::size_t d = 0; d < p.size(); ++d) {
          p[d] = std::clamp(p[d], bounds.lower[d], bounds.upper[d]);
        }
      });

  SolveDiagnostics diag;
  SwarmState state;
  state.rho = cfg_.rho_init;
  state.particles.resize(cfg_.n_particles);
  for (int n = 0; n < cfg_.n_particles; ++n) {
    Particle& p = state.particles[n];
    p.position = (n == 0 && !initial_guess.empty()) ? initial_guess
                                                    : uniform_sample(bounds, rng);
    repair(p.position);
    p.velocity.assign(dims, 0.0);
    p.pbest_position = p.position;
  }

  std::vector<double> costs(cfg_.n_particles);
  for (int n = 0; n < cfg_.n_particles; ++n) {
    costs[n] = problem.cost(state.particles[n].position);
    ++diag.cost_evaluations;
  }
  update_bests(state, costs);
  state.velocity_history_maxima.push_back(0.0);

  StopReason reason = StopReason::kNone;
  Vec p_before(dims);
  for (int i = 1; i <= cfg_.i_max; ++i) {
    state.iteration = i;
    refresh_velocities(state, bounds, cfg_, rng);

    if (problem.reinit_hook) {
      SwarmContext ctx{state, bounds, rng};
      problem.reinit_hook(ctx);
    } else {
      for (Particle& p : state.particles) {
        p_before = p.position;
        for (std::size_t d = 0; d < dims; ++d) p.position[d] += p.velocity[d];
        repair(p.position);
        for (std::size_t d = 0; d < dims; ++d) {
          p.velocity[d] = p.position[d] - p_before[d];
        }
      }
    }

    double vmax = 0.0;
    for (const Particle& p : state.particles) {
      vmax = std::max(vmax, normalized_norm(p.velocity, bounds));
    }
    state.velocity_history_maxima.push_back(vmax);

    for (int n = 0; n < cfg_.n_particles; ++n) {
      costs[n] = problem.cost(state.particles[n].position);
      ++diag.cost_evaluations;
    }
    const double prev_best = state.gbest_cost;
    update_bests(state, costs);
    const bool improved = state.gbest_cost < prev_best;
    update_rho(state, improved, cfg_);

    remove_duplicates(state, bounds, rng, repair, problem.cost,
                      &diag.cost_evaluations);

    reason = check_termination(state, bounds, cfg_);
    if (reason != StopReason::kNone) break;
  }
  if (reason == StopReason::kNone) reason = StopReason::kIterationBudget;

  diag.iterations = state.iteration;
  diag.reason = reason;
  diag.final_cluster_rate = cluster_rate(
      state, bounds,
      cfg_.cluster_radius_fraction * std::sqrt(static_cast<double>(dims)));
  diag.all_infeasible = !std::isfinite(state.gbest_cost);

  SolveResult result;
  result.best_position = state.gbest_position;
  result.best_cost = state.gbest_cost;
  result.diagnostics = diag;
  return result;
}

}  // namespace solvex

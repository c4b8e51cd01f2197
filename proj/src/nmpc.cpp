#include "solvex/nmpc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace solvex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Distinct per-round seeds derived from one base seed (splitmix64 step).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

bool ReachableTube::collapsed_to_floor() const {
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (upper[j] > u_min || lower[j] > u_min) return false;
  }
  return !lower.empty();
}

ReachableTube reachable_tube(double u_prev, double max_step, double u_min,
                             double u_max, int n_steps, int shift) {
  if (n_steps <= 0) throw std::invalid_argument("reachable_tube: n_steps <= 0");
  if (!(max_step > 0.0)) throw std::invalid_argument("reachable_tube: max_step <= 0");
  if (!(u_min < u_max)) throw std::invalid_argument("reachable_tube: empty actuator range");
  ReachableTube tube;
  tube.max_step = max_step;
  tube.u_min = u_min;
  tube.u_max = u_max;
  tube.shift = shift;
  // Emergency rounds (shift > 0) descend the rate reference by `shift` steps
  // and forbid upward moves, so repeated widening drives the whole tube onto
  // the minimum feed.
  tube.u_ref = std::max(u_min, std::min(u_prev, u_max) - shift * max_step);
  tube.up_step = shift == 0 ? max_step : 0.0;
  tube.lower.resize(n_steps);
  tube.upper.resize(n_steps);
  for (int j = 0; j < n_steps; ++j) {
    tube.lower[j] = std::max(u_min, tube.u_ref - (j + 1) * max_step);
    tube.upper[j] = std::max(tube.lower[j],
                             std::min(u_max, tube.u_ref + (j + 1) * tube.up_step));
  }
  return tube;
}

void saturate_plan(Vec& plan, const ReachableTube& tube) {
  double prev = tube.u_ref;
  for (std::size_t j = 0; j < plan.size(); ++j) {
    double p = std::clamp(plan[j], tube.lower[j], tube.upper[j]);
    p = std::clamp(p, prev - tube.max_step, prev + tube.up_step);
    plan[j] = p;
    prev = p;
  }
}

void apply_rate_limited_moves(SwarmContext& ctx, const ReachableTube& tube,
                              int max_halvings) {
  const std::size_t dims = ctx.bounds.dims();
  Vec target(dims);
  for (Particle& p : ctx.swarm.particles) {
    target = p.position;
    for (std::size_t d = 0; d < dims; ++d) target[d] += p.velocity[d];

    Vec check = target;
    saturate_plan(check, tube);
    int halvings = 0;
    while (check != target && halvings < max_halvings) {
      for (std::size_t d = 0; d < dims; ++d) {
        p.velocity[d] *= 0.5;
        target[d] = p.position[d] + p.velocity[d];
      }
      check = target;
      saturate_plan(check, tube);
      ++halvings;
    }
    // Either the halved move became feasible, or we accept its projection.
    for (std::size_t d = 0; d < dims; ++d) {
      p.velocity[d] = check[d] - p.position[d];
      p.position[d] = check[d];
    }
  }
}

Setpoint compute_setpoint(const CascadeModel& model, double solvent_flow,
                          double setpoint_fraction) {
  const CascadeParams& p = model.params();
  Setpoint sp;
  sp.solvent_flow = solvent_flow;
  const double thresh = 0.002 * p.feed_u;
  if (!(p.feed_u > 0.0)) return sp;  // no uranium: no operating window
  if (!(setpoint_fraction > 0.0) || !(setpoint_fraction < 1.0)) {
    throw std::invalid_argument("compute_setpoint: fraction outside (0, 1)");
  }

  try {
    // The critical feed only exists when losses are clean at the bottom of
    // the range and break through somewhere inside it.
    CascadeState ws = model.steady_state(p.feed_flow_min, solvent_flow);
    if (model.raffinate(ws) > thresh) return sp;
    CascadeState top = model.steady_state(p.feed_flow_max, solvent_flow, &ws);
    if (model.raffinate(top) <= thresh) return sp;

    double lo = p.feed_flow_min, hi = p.feed_flow_max;
    for (int it = 0; it < 48; ++it) {
      const double mid = 0.5 * (lo + hi);
      ws = model.steady_state(mid, solvent_flow, &ws);
      (model.raffinate(ws) > thresh ? hi : lo) = mid;
    }
    sp.critical_feed = 0.5 * (lo + hi);
    ws = model.steady_state(sp.critical_feed, solvent_flow, &ws);
    sp.critical_output = model.output(ws);
    sp.y_set = setpoint_fraction * sp.critical_output;
    if (!(sp.y_set > 0.0)) return sp;

    double ulo = p.feed_flow_min, uhi = sp.critical_feed;
    CascadeState bottom = model.steady_state(ulo, solvent_flow);
    if (model.output(bottom) > sp.y_set) return sp;  // setpoint unreachable
    ws = bottom;
    for (int it = 0; it < 48; ++it) {
      const double mid = 0.5 * (ulo + uhi);
      ws = model.steady_state(mid, solvent_flow, &ws);
      (model.output(ws) > sp.y_set ? uhi : ulo) = mid;
    }
    sp.u_set = 0.5 * (ulo + uhi);
    sp.x_set = model.steady_state(sp.u_set, solvent_flow, &ws);
    sp.valid = true;
  } catch (const SteadyStateError&) {
    sp.valid = false;
  }
  return sp;
}

void NmpcConfig::validate() const {
  if (n_p < 1) throw std::invalid_argument("NmpcConfig: n_p < 1");
  if (n_ctrl < 1) throw std::invalid_argument("NmpcConfig: n_ctrl < 1");
  if (!(t_meas > 0.0)) throw std::invalid_argument("NmpcConfig: t_meas <= 0");
  if (tracking_weight < 0.0 || terminal_weight < 0.0 || input_scale < 0.0 ||
      move_scale < 0.0) {
    throw std::invalid_argument("NmpcConfig: negative weight");
  }
  if (!(rate_fraction > 0.0)) throw std::invalid_argument("NmpcConfig: rate_fraction <= 0");
  if (hold_horizon < 1) throw std::invalid_argument("NmpcConfig: hold_horizon < 1");
  if (!(hold_band > 0.0)) throw std::invalid_argument("NmpcConfig: hold_band <= 0");
  if (!(raffinate_limit_fraction > 0.0)) {
    throw std::invalid_argument("NmpcConfig: raffinate_limit_fraction <= 0");
  }
  if (max_velocity_halvings < 1) {
    throw std::invalid_argument("NmpcConfig: max_velocity_halvings < 1");
  }
  if (relax_i_max < 1) throw std::invalid_argument("NmpcConfig: relax_i_max < 1");
  swarm.validate();
}

bool is_control_tick(long long k, int n_ctrl) {
  return k >= 1 && (k - 1) % n_ctrl == 0;
}

RolloutEvaluator::RolloutEvaluator(const CascadeModel& model,
                                   const NmpcConfig& cfg,
                                   const Setpoint& setpoint,
                                   const CascadeState& start, double u_prev,
                                   double solvent_flow)
    : model_(model),
      cfg_(cfg),
      setpoint_(setpoint),
      start_(start),
      u_prev_(u_prev),
      solvent_flow_(solvent_flow),
      raffinate_limit_(cfg.raffinate_limit_fraction * model.params().feed_u) {}

double RolloutEvaluator::cost(const Vec& plan) {
  std::string key(reinterpret_cast<const char*>(plan.data()),
                  plan.size() * sizeof(double));
  auto it = memo_.find(key);
  if (it != memo_.end()) {
    ++cache_hits_;
    return it->second;
  }
  const double value = evaluate(plan);
  ++rollouts_;
  memo_.emplace(std::move(key), value);
  return value;
}

double RolloutEvaluator::evaluate(const Vec& plan) const {
  const double dt = cfg_.n_ctrl * cfg_.t_meas;
  const double u_set = setpoint_.u_set;
  const double r_weight = cfg_.input_scale / std::max(u_set, 1e-12);
  const double s_weight = cfg_.move_scale / std::max(u_set, 1e-12);

  CascadeState x = start_;
  double prev_u = u_prev_;
  double total = 0.0;
  auto state_deviation = [&]() {
    double s = 0.0;
    for (int j = 0; j < kStateSize; ++j) {
      const double d = x.c[j] - setpoint_.x_set.c[j];
      s += d * d;
    }
    return s;
  };

  for (std::size_t j = 0; j < plan.size(); ++j) {
    const double u = plan[j];
    if (!model_.step(x, u, solvent_flow_, dt)) return kInf;
    if (model_.raffinate(x) > raffinate_limit_) return kInf;
    total += cfg_.tracking_weight * state_deviation();
    total += r_weight * (u - u_set) * (u - u_set);
    total += s_weight * (u - prev_u) * (u - prev_u);
    prev_u = u;
  }
  // Hold the last input one extra interval and charge the terminal deviation.
  if (!model_.step(x, plan.back(), solvent_flow_, dt)) return kInf;
  if (model_.raffinate(x) > raffinate_limit_) return kInf;
  total += cfg_.terminal_weight * state_deviation();
  return total;
}

const char* to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::kHold: return "hold";
    case ControlMode::kOptimize: return "optimize";
    case ControlMode::kPinned: return "pinned";
  }
  return "unknown";
}

NmpcController::NmpcController(CascadeModel model, NmpcConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  cfg_.validate();
}

bool NmpcController::hold_acceptable(const CascadeState& x,
                                     const Setpoint& setpoint,
                                     double solvent_flow) const {
  if (!setpoint.valid || !(setpoint.y_set > 0.0)) return false;
  const double dt = cfg_.n_ctrl * cfg_.t_meas;
  const double band = cfg_.hold_band * setpoint.y_set;
  const double limit = cfg_.raffinate_limit_fraction * model_.params().feed_u;
  CascadeState sim = x;
  for (int j = 0; j < cfg_.hold_horizon; ++j) {
    if (!model_.step(sim, setpoint.u_set, solvent_flow, dt)) return false;
    if (std::abs(model_.output(sim) - setpoint.y_set) > band) return false;
    if (model_.raffinate(sim) > limit) return false;
  }
  return true;
}

ControlDecision NmpcController::decide(const CascadeState& x,
                                       const Setpoint& setpoint,
                                       double solvent_flow, double u_prev,
                                       std::uint64_t seed) {
  const CascadeParams& pp = model_.params();
  const double delta =
      cfg_.rate_fraction * std::max(setpoint.u_set, pp.feed_flow_min);

  ControlDecision decision;
  RolloutEvaluator evaluator(model_, cfg_, setpoint, x, u_prev, solvent_flow);

  if (hold_acceptable(x, setpoint, solvent_flow)) {
    decision.mode = ControlMode::kHold;
    decision.u = setpoint.u_set;
    decision.plan.assign(cfg_.n_p, setpoint.u_set);
    decision.cost = evaluator.cost(decision.plan);
    decision.rate_relaxed = std::abs(decision.u - u_prev) > delta + 1e-12;
    decision.rollouts = evaluator.rollouts();
    decision.cache_hits = evaluator.cache_hits();
    last_plan_ = decision.plan;
    return decision;
  }

  for (int round = 0;; ++round) {
    // Each failed round doubles the downward widening: shift 0, 1, 2, 4, ...
    const int shift = round == 0 ? 0 : 1 << (round - 1);
    ReachableTube tube = reachable_tube(u_prev, delta, pp.feed_flow_min,
                                        pp.feed_flow_max, cfg_.n_p, shift);
    if (tube.collapsed_to_floor()) {
      decision.mode = ControlMode::kPinned;
      decision.u = pp.feed_flow_min;
      decision.plan.assign(cfg_.n_p, pp.feed_flow_min);
      decision.cost = evaluator.cost(decision.plan);
      decision.pinned_min = true;
      decision.relax_rounds = round;
      decision.rate_relaxed = std::abs(decision.u - u_prev) > delta + 1e-12;
      decision.rollouts = evaluator.rollouts();
      decision.cache_hits = evaluator.cache_hits();
      last_plan_.clear();
      return decision;
    }

    SwarmConfig swarm_cfg = cfg_.swarm;
    swarm_cfg.rng_seed = mix_seed(seed, static_cast<std::uint64_t>(round));
    if (round > 0) swarm_cfg.i_max = std::min(swarm_cfg.i_max, cfg_.relax_i_max);

    Vec guess;
    if (round == 0 && last_plan_.size() == static_cast<std::size_t>(cfg_.n_p)) {
      guess = last_plan_;
      guess.erase(guess.begin());
      guess.push_back(guess.back());
    } else if (round > 0) {
      guess = tube.lower;  // fastest allowed descent
    }
    if (!guess.empty()) saturate_plan(guess, tube);

    ProblemCallbacks problem;
    problem.cost = [&evaluator](const Vec& plan) { return evaluator.cost(plan); };
    problem.repair = [&tube](Vec& plan) { saturate_plan(plan, tube); };
    problem.reinit_hook = [this, &tube](SwarmContext& ctx) {
      apply_rate_limited_moves(ctx, tube, cfg_.max_velocity_halvings);
    };

    SwarmOptimizer solver(swarm_cfg);
    SolveResult result = solver.minimize(problem, tube.box(), guess);

    if (!result.diagnostics.all_infeasible) {
      decision.mode = ControlMode::kOptimize;
      decision.plan = result.best_position;
      decision.u = decision.plan.front();
      decision.cost = result.best_cost;
      decision.iterations = result.diagnostics.iterations;
      decision.stop_reason = result.diagnostics.reason;
      decision.cluster_rate = result.diagnostics.final_cluster_rate;
      decision.relax_rounds = round;
      decision.rate_relaxed = std::abs(decision.u - u_prev) > delta + 1e-12;
      decision.rollouts = evaluator.rollouts();
      decision.cache_hits = evaluator.cache_hits();
      last_plan_ = decision.plan;
      return decision;
    }
  }
}

}  // namespace solvex

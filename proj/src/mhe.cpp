#include "solvex/mhe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace solvex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

void MheConfig::validate() const {
  if (n_esti < 1) throw std::invalid_argument("MheConfig: n_esti < 1");
  if (!(t_meas > 0.0)) throw std::invalid_argument("MheConfig: t_meas <= 0");
  if (n_w < 1) throw std::invalid_argument("MheConfig: n_w < 1");
  if (n_e < 1) throw std::invalid_argument("MheConfig: n_e < 1");
  if (!(active_fraction > 0.0)) throw std::invalid_argument("MheConfig: active_fraction <= 0");
  if (!(anchor_fraction > 0.0)) throw std::invalid_argument("MheConfig: anchor_fraction <= 0");
  if (anchor_fraction > active_fraction) {
    throw std::invalid_argument("MheConfig: anchor threshold above activation threshold");
  }
  if (anchor_lag_margin < 0) throw std::invalid_argument("MheConfig: anchor_lag_margin < 0");
  if (!(q_lower_fraction > 0.0) || !(q_upper_fraction > q_lower_fraction)) {
    throw std::invalid_argument("MheConfig: bad solvent-flow search box");
  }
  if (history_factor < 1) throw std::invalid_argument("MheConfig: history_factor < 1");
  swarm.validate();
}

std::vector<long long> coincidence_points(long long k0, long long k, int n_e) {
  if (k < k0) throw std::invalid_argument("coincidence_points: k < k0");
  if (n_e < 1) throw std::invalid_argument("coincidence_points: n_e < 1");
  std::vector<long long> points;
  points.reserve(n_e + 1);
  for (int j = 0; j <= n_e; ++j) {
    const long long p =
        k0 + std::llround(static_cast<double>(j) * static_cast<double>(k - k0) /
                          static_cast<double>(n_e));
    if (points.empty() || p != points.back()) points.push_back(p);
  }
  return points;
}

MheEstimator::MheEstimator(CascadeModel model, MheConfig cfg, double q_nominal)
    : model_(std::move(model)), cfg_(cfg), q_nominal_(q_nominal), q_hat_(q_nominal) {
  cfg_.validate();
  if (!(q_nominal > 0.0)) {
    throw std::invalid_argument("MheEstimator: q_nominal <= 0");
  }
}

void MheEstimator::reset(const CascadeState& x0, long long k0) {
  x_ = x0;
  q_hat_ = q_nominal_;
  last_k_ = k0;
  history_.clear();
  MheRecord rec;
  rec.k = k0;
  rec.y_meas = rec.y_model = model_.output(x0);
  rec.u_applied = 0.0;  // nothing was applied ahead of the first record
  rec.error = 0.0;
  rec.x_model = x0;
  history_.push_back(std::move(rec));
}

const MheRecord& MheEstimator::advance(long long k, double u_applied,
                                       double y_meas) {
  if (k != last_k_ + 1) {
    throw std::logic_error("MheEstimator::advance: ticks must be consecutive");
  }
  if (!model_.step(x_, u_applied, q_hat_, cfg_.t_meas)) {
    throw std::runtime_error("MheEstimator::advance: parallel model diverged");
  }
  last_k_ = k;
  MheRecord rec;
  rec.k = k;
  rec.y_meas = y_meas;
  rec.u_applied = u_applied;
  rec.y_model = model_.output(x_);
  rec.error = y_meas - rec.y_model;
  rec.residual = rec.error;
  rec.x_model = x_;
  history_.push_back(std::move(rec));
  while (static_cast<int>(history_.size()) > cfg_.history_cap()) {
    history_.pop_front();
  }
  return history_.back();
}

void MheEstimator::trim_history(long long anchor_k) {
  const long long keep_from = anchor_k - cfg_.history_factor * cfg_.n_w;
  while (!history_.empty() && history_.front().k < keep_from) {
    history_.pop_front();
  }
}

EstimateResult MheEstimator::estimate(long long k, double y_set,
                                      std::uint64_t seed) {
  if (history_.empty() || history_.back().k != k) {
    throw std::logic_error("MheEstimator::estimate: no record for this tick");
  }
  EstimateResult result;
  result.q_hat = q_hat_;

  const double active = cfg_.active_fraction * y_set;
  if (!(std::abs(history_.back().error) > active)) return result;
  result.activated = true;

  // Anchor: the most recent record whose trailing window of live errors is
  // clean, minus a small lag margin. The margin matters: the output lags
  // internal divergence by a tick or so, so the last "clean" tick can sit
  // right on top of a disturbance onset with its internals already drifting.
  // Backing off past the lag lands the anchor on a genuinely trustworthy
  // state, which the span refit needs (a contaminated anchor is compensated
  // by a biased flow estimate).
  const double clean = cfg_.anchor_fraction * y_set;
  const MheRecord* anchor = nullptr;
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    if (it->k == k) continue;  // anchoring on the offending tick is pointless
    bool ok = true;
    for (const MheRecord& r : history_) {
      if (r.k >= it->k - cfg_.n_w && r.k <= it->k && std::abs(r.error) > clean) {
        ok = false;
        break;
      }
    }
    if (ok) {
      const long long target = it->k - cfg_.anchor_lag_margin;
      while (it != history_.rend() && it->k > target) ++it;
      anchor = it != history_.rend() ? &*it : &history_.front();
      break;
    }
  }
  if (anchor == nullptr) {
    anchor = &history_.front();
    result.anchor_fallback = true;
  }
  const long long k0 = anchor->k;
  result.anchor_k = k0;
  result.coincidence = coincidence_points(k0, k, cfg_.n_e);
  const std::vector<long long>& pts = result.coincidence;
  if (pts.size() < 2) return result;  // nothing to fit across

  auto find_record = [&](long long tick) -> const MheRecord& {
    // History holds consecutive ticks, so index arithmetic is exact.
    const long long front = history_.front().k;
    return history_[static_cast<std::size_t>(tick - front)];
  };

  // Recency weights over the non-anchor coincidence points: 2^i, normalized.
  const std::size_t n_fit = pts.size() - 1;
  std::vector<double> alpha(n_fit);
  double alpha_sum = 0.0;
  for (std::size_t i = 0; i < n_fit; ++i) alpha_sum += (alpha[i] = std::ldexp(1.0, static_cast<int>(i)));
  for (double& a : alpha) a /= alpha_sum;

  const CascadeState start = find_record(k0).x_model;
  auto span_cost = [&](const Vec& q_profile) -> double {
    CascadeState x = start;
    double total = 0.0;
    std::size_t seg = 0;
    for (long long tick = k0 + 1; tick <= k; ++tick) {
      while (seg + 1 < q_profile.size() && tick > pts[seg + 1]) ++seg;
      if (!model_.step(x, find_record(tick).u_applied, q_profile[seg], cfg_.t_meas)) {
        return kInf;
      }
      for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i] == tick) {
          const double e = find_record(tick).y_meas - model_.output(x);
          total += alpha[i - 1] * e * e;
        }
      }
    }
    return total;
  };

  BoxBounds bounds;
  bounds.lower.assign(n_fit, cfg_.q_lower_fraction * q_nominal_);
  bounds.upper.assign(n_fit, cfg_.q_upper_fraction * q_nominal_);

  SwarmConfig swarm_cfg = cfg_.swarm;
  swarm_cfg.rng_seed = mix_seed(seed, static_cast<std::uint64_t>(k));

  ProblemCallbacks problem;
  long long rollouts = 0;
  problem.cost = [&](const Vec& q_profile) {
    ++rollouts;
    return span_cost(q_profile);
  };

  SwarmOptimizer solver(swarm_cfg);
  SolveResult solve = solver.minimize(problem, bounds, Vec(n_fit, q_hat_));
  result.cost = solve.best_cost;
  result.iterations = solve.diagnostics.iterations;
  result.rollouts = rollouts;

  if (!solve.diagnostics.all_infeasible) {
    const Vec& q_profile = solve.best_position;
    // Re-roll the span under the accepted profile so stored states and
    // errors describe the model we now believe in.
    CascadeState x = start;
    std::size_t seg = 0;
    for (long long tick = k0 + 1; tick <= k; ++tick) {
      while (seg + 1 < q_profile.size() && tick > pts[seg + 1]) ++seg;
      MheRecord& rec = history_[static_cast<std::size_t>(tick - history_.front().k)];
      if (!model_.step(x, rec.u_applied, q_profile[seg], cfg_.t_meas)) {
        throw std::runtime_error("MheEstimator::estimate: accepted profile diverged");
      }
      rec.y_model = model_.output(x);
      rec.residual = rec.y_meas - rec.y_model;
      rec.x_model = x;
    }
    x_ = x;
    q_hat_ = q_profile.back();
    trim_history(k0);
  }
  result.q_hat = q_hat_;
  return result;
}

}  // namespace solvex

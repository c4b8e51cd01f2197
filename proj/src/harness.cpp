#include "solvex/harness.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

namespace solvex {

namespace {

/// Stateless seed mixer (splitmix64 finalizer) so every solve gets its own
/// stream derived from the scenario seed and the tick index.
std::uint64_t mix_stream(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double overshoot_fraction(double y, double y_set) {
  return y_set > 0.0 ? std::max(y / y_set - 1.0, 0.0) : 0.0;
}

}  // namespace

RunTrace run_scenario(const Scenario& scenario) {
  scenario.validate();
  RunTrace out;
  out.scenario = scenario;

  const CascadeParams& pp = scenario.plant;
  CascadeModel model{pp};

  // The run starts from the uranium-free plant: the cascade settled on
  // acid-only feed at the initial feed flow, with uranium switched into the
  // feed from t = 0.
  CascadeParams acid_only = pp;
  acid_only.feed_u = 0.0;
  const double u_init = scenario.resolved_u_init();
  CascadeState x_true =
      CascadeModel{acid_only}.steady_state(u_init, pp.nominal_solvent_flow);

  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow,
                                 scenario.setpoint_fraction);
  if (!sp.valid) {
    throw std::invalid_argument(
        "run_scenario: no valid operating point at the nominal solvent flow");
  }
  out.initial_setpoint = sp;

  NmpcController controller(model, scenario.control);
  MheEstimator estimator(model, scenario.estimator, pp.nominal_solvent_flow);
  estimator.reset(x_true, 0);

  const double raffinate_limit =
      scenario.control.raffinate_limit_fraction * pp.feed_u;
  double u_applied = u_init;
  std::string mode = "init";
  double q_for_setpoint = pp.nominal_solvent_flow;

  std::mt19937_64 noise_rng(mix_stream(scenario.seed, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto record = [&](long long k, double t, double y, double q_true, double e) {
    TraceRow row;
    row.k = k;
    row.t = t;
    row.y_meas = y;
    row.y_set = sp.y_set;
    row.u = u_applied;
    row.q_true = q_true;
    row.q_hat = estimator.q_hat();
    row.e_esti = e;
    row.mode = mode;
    row.raffinate_margin = raffinate_limit - model.raffinate(x_true);
    row.os_margin =
        scenario.os_max_fraction - overshoot_fraction(y, sp.y_set);
    out.rows.push_back(std::move(row));
  };

  record(0, 0.0, model.output(x_true), pp.nominal_solvent_flow, 0.0);

  for (long long k = 1; k <= scenario.n_sim; ++k) {
    const double t_step_start = (k - 1) * scenario.t_meas();
    const double t = k * scenario.t_meas();
    const double q_true = disturbed_solvent_flow(
        t_step_start, scenario.disturbances, pp.nominal_solvent_flow);

    if (!model.step(x_true, u_applied, q_true, scenario.t_meas())) {
      out.aborted = true;
      char buf[128];
      std::snprintf(buf, sizeof buf,
                    "plant integration diverged during the step into t=%.3f h",
                    t);
      out.abort_reason = buf;
      break;
    }

    double y = model.output(x_true);
    if (scenario.noise_sigma > 0.0) y += scenario.noise_sigma * gauss(noise_rng);

    const MheRecord& rec = estimator.advance(k, u_applied, y);
    const double e_live = rec.error;

    if (scenario.estimator_enabled && is_control_tick(k, scenario.estimator.n_esti)) {
      EstimatorRow erow;
      erow.k = k;
      erow.t = t;
      erow.result = estimator.estimate(k, sp.y_set, mix_stream(scenario.seed, 2 * k));
      if (erow.result.activated) {
        const double drift =
            std::abs(estimator.q_hat() - q_for_setpoint) / q_for_setpoint;
        if (drift > scenario.setpoint_refresh_fraction) {
          Setpoint candidate = compute_setpoint(model, estimator.q_hat(),
                                                scenario.setpoint_fraction);
          erow.setpoint_refreshed = true;
          erow.setpoint_valid = candidate.valid;
          if (candidate.valid) {
            sp = candidate;
            q_for_setpoint = estimator.q_hat();
          }  // otherwise keep steering toward the last defensible target
        }
      }
      out.estimator.push_back(std::move(erow));
    }

    if (is_control_tick(k, scenario.control.n_ctrl)) {
      ControllerRow crow;
      crow.k = k;
      crow.t = t;
      crow.u_prev = u_applied;
      crow.y_set = sp.y_set;
      crow.q_hat = estimator.q_hat();
      crow.x_belief = estimator.state();
      crow.decision = controller.decide(estimator.state(), sp, estimator.q_hat(),
                                        u_applied, mix_stream(scenario.seed, 2 * k + 1));
      u_applied = crow.decision.u;
      mode = to_string(crow.decision.mode);
      out.controller.push_back(std::move(crow));
    }

    record(k, t, y, q_true, e_live);
  }
  return out;
}

Metrics compute_metrics(const RunTrace& trace) {
  const Scenario& sc = trace.scenario;
  Metrics m;
  if (trace.rows.empty()) return m;

  for (const TraceRow& row : trace.rows) {
    m.max_overshoot_fraction =
        std::max(m.max_overshoot_fraction, overshoot_fraction(row.y_meas, row.y_set));
    if (row.raffinate_margin < 0.0) ++m.raffinate_violation_ticks;
    if (row.os_margin < 0.0) ++m.overshoot_violation_ticks;
  }
  m.constraint_violations = m.raffinate_violation_ticks + m.overshoot_violation_ticks;
  m.q_hat_final = trace.rows.back().q_hat;

  // Settling: earliest tick after which every later tick stays inside the
  // band. Scan backward for the last out-of-band tick.
  std::size_t first_settled = 0;
  for (std::size_t i = trace.rows.size(); i-- > 0;) {
    const TraceRow& row = trace.rows[i];
    if (std::abs(row.y_meas - row.y_set) > sc.eps_ss * row.y_set) {
      first_settled = i + 1;
      break;
    }
  }
  if (!trace.aborted && first_settled < trace.rows.size()) {
    m.settled = true;
    m.settling_time_h = trace.rows[first_settled].t;
  }

  for (const ControllerRow& crow : trace.controller) {
    ++m.control_ticks;
    const bool hold = crow.decision.mode == ControlMode::kHold;
    if (hold) ++m.hold_ticks;
    if (m.settled && crow.t >= m.settling_time_h) {
      ++m.post_settling_control_ticks;
      if (hold) ++m.post_settling_hold_ticks;
    }
    m.solver_rollouts += crow.decision.rollouts;
  }
  if (m.control_ticks > 0) {
    m.hold_fraction = static_cast<double>(m.hold_ticks) / m.control_ticks;
  }
  if (m.post_settling_control_ticks > 0) {
    m.post_settling_hold_fraction =
        static_cast<double>(m.post_settling_hold_ticks) / m.post_settling_control_ticks;
  }
  for (const EstimatorRow& erow : trace.estimator) {
    m.solver_rollouts += erow.result.rollouts;
    if (erow.result.activated) ++m.estimator_activations;
  }
  return m;
}

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path)
      : path_(path.string()), file_(std::fopen(path_.c_str(), "wb")) {
    if (file_ == nullptr) {
      throw std::runtime_error("cannot write '" + path_ + "'");
    }
  }
  ~CsvWriter() {
    if (file_ != nullptr) std::fclose(file_);
  }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void line(const std::string& text) {
    if (std::fputs(text.c_str(), file_) == EOF || std::fputc('\n', file_) == EOF) {
      throw std::runtime_error("short write to '" + path_ + "'");
    }
  }

 private:
  std::string path_;
  std::FILE* file_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void emit_outputs(const RunTrace& trace, const Metrics& metrics,
                  const std::string& dir) {
  const std::filesystem::path base(dir);
  std::error_code ec;
  std::filesystem::create_directories(base, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir + "': " + ec.message());

  {
    CsvWriter csv(base / "trace.csv");
    csv.line("t,y_meas,y_set,u,q_true,q_hat,e_esti,mode,raffinate_margin,os_margin");
    for (const TraceRow& r : trace.rows) {
      csv.line(fmt(r.t) + "," + fmt(r.y_meas) + "," + fmt(r.y_set) + "," +
               fmt(r.u) + "," + fmt(r.q_true) + "," + fmt(r.q_hat) + "," +
               fmt(r.e_esti) + "," + r.mode + "," + fmt(r.raffinate_margin) +
               "," + fmt(r.os_margin));
    }
  }
  {
    CsvWriter csv(base / "controller.csv");
    csv.line("t,mode,u,u_prev,cost,iterations,stop_reason,cluster_rate,"
             "relax_rounds,rate_relaxed,rollouts,cache_hits");
    for (const ControllerRow& r : trace.controller) {
      const ControlDecision& d = r.decision;
      csv.line(fmt(r.t) + "," + to_string(d.mode) + "," + fmt(d.u) + "," +
               fmt(r.u_prev) + "," + fmt(d.cost) + "," +
               std::to_string(d.iterations) + "," + to_string(d.stop_reason) +
               "," + fmt(d.cluster_rate) + "," + std::to_string(d.relax_rounds) +
               "," + std::to_string(d.rate_relaxed ? 1 : 0) + "," +
               std::to_string(d.rollouts) + "," + std::to_string(d.cache_hits));
    }
  }
  {
    CsvWriter csv(base / "estimator.csv");
    csv.line("t,activated,anchor_k,anchor_fallback,q_hat,cost,iterations,"
             "rollouts,coincidence_points,setpoint_refreshed,setpoint_valid");
    for (const EstimatorRow& r : trace.estimator) {
      const EstimateResult& e = r.result;
      csv.line(fmt(r.t) + "," + std::to_string(e.activated ? 1 : 0) + "," +
               std::to_string(e.anchor_k) + "," +
               std::to_string(e.anchor_fallback ? 1 : 0) + "," + fmt(e.q_hat) +
               "," + fmt(e.cost) + "," + std::to_string(e.iterations) + "," +
               std::to_string(e.rollouts) + "," +
               std::to_string(e.coincidence.size()) + "," +
               std::to_string(r.setpoint_refreshed ? 1 : 0) + "," +
               std::to_string(r.setpoint_valid ? 1 : 0));
    }
  }
  {
    nlohmann::json j;
    j["name"] = trace.scenario.name;
    j["seed"] = trace.scenario.seed;
    j["aborted"] = trace.aborted;
    if (trace.aborted) j["abort_reason"] = trace.abort_reason;
    j["max_overshoot_pct"] = 100.0 * metrics.max_overshoot_fraction;
    j["settled"] = metrics.settled;
    if (metrics.settled) {
      j["settling_time_h"] = metrics.settling_time_h;
    } else {
      j["settling_time_h"] = nullptr;
    }
    j["raffinate_violation_ticks"] = metrics.raffinate_violation_ticks;
    j["overshoot_violation_ticks"] = metrics.overshoot_violation_ticks;
    j["constraint_violations"] = metrics.constraint_violations;
    j["control_ticks"] = metrics.control_ticks;
    j["hold_ticks"] = metrics.hold_ticks;
    j["hold_fraction"] = metrics.hold_fraction;
    j["post_settling_hold_fraction"] = metrics.post_settling_hold_fraction;
    j["solver_rollouts"] = metrics.solver_rollouts;
    j["estimator_activations"] = metrics.estimator_activations;
    j["q_hat_final"] = metrics.q_hat_final;
    j["u_set"] = trace.initial_setpoint.u_set;
    j["y_set_initial"] = trace.initial_setpoint.y_set;
    j["critical_feed_initial"] = trace.initial_setpoint.critical_feed;

    CsvWriter file(base / "metrics.json");
    file.line(j.dump(2));
  }
}

}  // namespace solvex

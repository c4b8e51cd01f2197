#include "solvex/scenario.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace solvex {

using nlohmann::json;

double disturbed_solvent_flow(double t,
                              const std::vector<DisturbanceEvent>& schedule,
                              double q_nominal) {
  double factor = 1.0;
  for (const DisturbanceEvent& ev : schedule) {
    if (ev.time_h > t) break;
    factor = 1.0 + ev.relative_change;
  }
  return q_nominal * factor;
}

void Scenario::validate() const {
  plant.validate();
  control.validate();
  estimator.validate();
  if (control.t_meas != estimator.t_meas) {
    throw std::invalid_argument("Scenario: controller and estimator disagree on the tick length");
  }
  if (control.n_ctrl % estimator.n_esti != 0) {
    throw std::invalid_argument("Scenario: control interval must be a multiple of the estimation interval");
  }
  if (n_sim < 1) throw std::invalid_argument("Scenario: n_sim < 1");
  if (u_init != 0.0 &&
      (u_init < plant.feed_flow_min || u_init > plant.feed_flow_max)) {
    throw std::invalid_argument("Scenario: u_init outside the actuator range");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("Scenario: noise_sigma < 0");
  if (!(setpoint_fraction > 0.0) || !(setpoint_fraction < 1.0)) {
    throw std::invalid_argument("Scenario: setpoint_fraction outside (0, 1)");
  }
  if (!(os_max_fraction > 0.0)) throw std::invalid_argument("Scenario: os_max_fraction <= 0");
  if (!(eps_ss > 0.0)) throw std::invalid_argument("Scenario: eps_ss <= 0");
  if (!(setpoint_refresh_fraction > 0.0)) {
    throw std::invalid_argument("Scenario: setpoint_refresh_fraction <= 0");
  }
  const double t_end = n_sim * t_meas();
  double prev = -std::numeric_limits<double>::infinity();
  for (const DisturbanceEvent& ev : disturbances) {
    if (ev.time_h < prev) throw std::invalid_argument("Scenario: disturbances not sorted by time");
    if (ev.time_h < 0.0 || ev.time_h > t_end) {
      throw std::invalid_argument("Scenario: disturbance outside the simulated window");
    }
    if (ev.relative_change <= -1.0) {
      throw std::invalid_argument("Scenario: disturbance would stop the solvent flow");
    }
    prev = ev.time_h;
  }
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::invalid_argument("scenario " + where + ": " + what);
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) fail(key, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) fail(key, "expected an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) fail(key, "expected a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) fail(key, "expected a string");
  return v.get<std::string>();
}

void parse_plant(const json& j, CascadeParams& p) {
  for (const auto& [key, v] : j.items()) {
    if (key == "feed_stage") p.feed_stage = as_int(v, key);
    else if (key == "mixer_aq_volume") p.mixer_aq_volume = as_number(v, key);
    else if (key == "mixer_org_volume") p.mixer_org_volume = as_number(v, key);
    else if (key == "settler_aq_volume") p.settler_aq_volume = as_number(v, key);
    else if (key == "settler_org_volume") p.settler_org_volume = as_number(v, key);
    else if (key == "k_la") p.k_la = as_number(v, key);
    else if (key == "tbp_total") p.tbp_total = as_number(v, key);
    else if (key == "k_u") p.k_u = as_number(v, key);
    else if (key == "k_h") p.k_h = as_number(v, key);
    else if (key == "scrub_flow") p.scrub_flow = as_number(v, key);
    else if (key == "scrub_acid") p.scrub_acid = as_number(v, key);
    else if (key == "feed_u") p.feed_u = as_number(v, key);
    else if (key == "feed_h") p.feed_h = as_number(v, key);
    else if (key == "nominal_solvent_flow") p.nominal_solvent_flow = as_number(v, key);
    else if (key == "feed_flow_min") p.feed_flow_min = as_number(v, key);
    else if (key == "feed_flow_max") p.feed_flow_max = as_number(v, key);
    else if (key == "substep_h") p.substep_h = as_number(v, key);
    else fail("plant", "unknown key '" + key + "'");
  }
}

void parse_swarm(const json& j, SwarmConfig& s, const std::string& where) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n_particles") s.n_particles = as_int(v, key);
    else if (key == "i_max") s.i_max = as_int(v, key);
    else if (key == "n_ter") s.n_ter = as_int(v, key);
    else if (key == "eps_dl") s.eps_dl = as_number(v, key);
    else if (key == "eps_v") s.eps_v = as_number(v, key);
    else if (key == "eps_l") s.eps_l = as_number(v, key);
    else if (key == "r_clus_min") s.r_clus_min = as_number(v, key);
    else fail(where, "unknown key '" + key + "'");
  }
}

void parse_control(const json& j, NmpcConfig& c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n_p") c.n_p = as_int(v, key);
    else if (key == "n_ctrl") c.n_ctrl = as_int(v, key);
    else if (key == "tracking_weight") c.tracking_weight = as_number(v, key);
    else if (key == "terminal_weight") c.terminal_weight = as_number(v, key);
    else if (key == "input_scale") c.input_scale = as_number(v, key);
    else if (key == "move_scale") c.move_scale = as_number(v, key);
    else if (key == "rate_fraction") c.rate_fraction = as_number(v, key);
    else if (key == "hold_horizon") c.hold_horizon = as_int(v, key);
    else if (key == "hold_band") c.hold_band = as_number(v, key);
    else if (key == "raffinate_limit_fraction") c.raffinate_limit_fraction = as_number(v, key);
    else if (key == "max_velocity_halvings") c.max_velocity_halvings = as_int(v, key);
    else if (key == "relax_i_max") c.relax_i_max = as_int(v, key);
    else if (key == "swarm") parse_swarm(v, c.swarm, "control.swarm");
    else fail("control", "unknown key '" + key + "'");
  }
}

void parse_estimator(const json& j, MheConfig& e) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n_esti") e.n_esti = as_int(v, key);
    else if (key == "n_w") e.n_w = as_int(v, key);
    else if (key == "n_e") e.n_e = as_int(v, key);
    else if (key == "active_fraction") e.active_fraction = as_number(v, key);
    else if (key == "anchor_fraction") e.anchor_fraction = as_number(v, key);
    else if (key == "anchor_lag_margin") e.anchor_lag_margin = as_int(v, key);
    else if (key == "q_lower_fraction") e.q_lower_fraction = as_number(v, key);
    else if (key == "q_upper_fraction") e.q_upper_fraction = as_number(v, key);
    else if (key == "history_factor") e.history_factor = as_int(v, key);
    else if (key == "swarm") parse_swarm(v, e.swarm, "estimator.swarm");
    else fail("estimator", "unknown key '" + key + "'");
  }
}

void parse_disturbances(const json& j, std::vector<DisturbanceEvent>& out) {
  if (!j.is_array()) fail("disturbances", "expected an array");
  for (const json& item : j) {
    if (!item.is_object()) fail("disturbances", "expected objects");
    DisturbanceEvent ev;
    bool have_time = false, have_change = false;
    for (const auto& [key, v] : item.items()) {
      if (key == "time_h") { ev.time_h = as_number(v, key); have_time = true; }
      else if (key == "relative_change") { ev.relative_change = as_number(v, key); have_change = true; }
      else fail("disturbances", "unknown key '" + key + "'");
    }
    if (!have_time || !have_change) {
      fail("disturbances", "each entry needs time_h and relative_change");
    }
    out.push_back(ev);
  }
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw std::invalid_argument(std::string("scenario: malformed JSON: ") + err.what());
  }
  if (!j.is_object()) throw std::invalid_argument("scenario: top level must be an object");

  Scenario sc;
  for (const auto& [key, v] : j.items()) {
    if (key == "name") sc.name = as_string(v, key);
    else if (key == "seed") {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      sc.seed = v.get<std::uint64_t>();
    }
    else if (key == "n_sim") sc.n_sim = as_int(v, key);
    else if (key == "t_meas") {
      const double t = as_number(v, key);
      sc.control.t_meas = t;
      sc.estimator.t_meas = t;
    }
    else if (key == "u_init") sc.u_init = as_number(v, key);
    else if (key == "noise_sigma") sc.noise_sigma = as_number(v, key);
    else if (key == "estimator_enabled") sc.estimator_enabled = as_bool(v, key);
    else if (key == "setpoint_fraction") sc.setpoint_fraction = as_number(v, key);
    else if (key == "os_max_fraction") sc.os_max_fraction = as_number(v, key);
    else if (key == "eps_ss") sc.eps_ss = as_number(v, key);
    else if (key == "setpoint_refresh_fraction") sc.setpoint_refresh_fraction = as_number(v, key);
    else if (key == "out_dir") sc.out_dir = as_string(v, key);
    else if (key == "plant") parse_plant(v, sc.plant);
    else if (key == "control") parse_control(v, sc.control);
    else if (key == "estimator") parse_estimator(v, sc.estimator);
    else if (key == "disturbances") parse_disturbances(v, sc.disturbances);
    else fail("top level", "unknown key '" + key + "'");
  }
  sc.validate();
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("scenario: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace solvex

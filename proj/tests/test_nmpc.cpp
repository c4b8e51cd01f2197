#include "doctest.h"

#include "solvex/nmpc.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

using namespace solvex;

TEST_CASE("control ticks start at 1 and repeat every interval") {
  CHECK(is_control_tick(1, 5));
  CHECK(is_control_tick(6, 5));
  CHECK(is_control_tick(11, 5));
  CHECK_FALSE(is_control_tick(0, 5));
  CHECK_FALSE(is_control_tick(2, 5));
  CHECK_FALSE(is_control_tick(5, 5));
  CHECK_FALSE(is_control_tick(10, 5));
  CHECK(is_control_tick(1, 1));
  CHECK(is_control_tick(2, 1));
}

TEST_CASE("reachable tube widens by one rate step per horizon step") {
  ReachableTube tube = reachable_tube(0.5, 0.1, 0.3, 0.7, 3);
  REQUIRE(tube.lower.size() == 3);
  CHECK(tube.lower[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(tube.lower[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(tube.lower[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(tube.upper[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(tube.upper[1] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(tube.upper[2] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(tube.u_ref == 0.5);
  CHECK(tube.up_step == 0.1);
  CHECK_FALSE(tube.collapsed_to_floor());

  CHECK_THROWS_AS(reachable_tube(0.5, 0.0, 0.3, 0.7, 3), std::invalid_argument);
  CHECK_THROWS_AS(reachable_tube(0.5, 0.1, 0.7, 0.3, 3), std::invalid_argument);
  CHECK_THROWS_AS(reachable_tube(0.5, 0.1, 0.3, 0.7, 0), std::invalid_argument);
}

TEST_CASE("emergency shifts descend the tube and finally collapse it") {
  ReachableTube one = reachable_tube(0.5, 0.1, 0.3, 0.7, 3, 1);
  CHECK(one.u_ref == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(one.up_step == 0.0);
  for (int j = 0; j < 3; ++j) CHECK(one.upper[j] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(one.lower[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_FALSE(one.collapsed_to_floor());

  ReachableTube flat = reachable_tube(0.5, 0.1, 0.3, 0.7, 3, 8);
  CHECK(flat.collapsed_to_floor());
  for (int j = 0; j < 3; ++j) {
    CHECK(flat.lower[j] == 0.3);
    CHECK(flat.upper[j] == 0.3);
  }
}

TEST_CASE("saturation clips forward through the plan and is idempotent") {
  ReachableTube tube = reachable_tube(0.5, 0.1, 0.0, 1.0, 3);
  Vec plan = {0.7, 0.2, 0.9};
  saturate_plan(plan, tube);
  CHECK(plan[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(plan[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(plan[2] == doctest::Approx(0.6).epsilon(1e-15));

  Vec again = plan;
  saturate_plan(again, tube);
  CHECK(again == plan);

  Vec fine = {0.55, 0.6, 0.52};
  Vec expect = fine;
  saturate_plan(fine, tube);
  CHECK(fine == expect);  // feasible plans pass through untouched
}

TEST_CASE("saturation lands every random plan inside the tube and rate limit") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> wild(-1.0, 2.0);
  ReachableTube tube = reachable_tube(0.45, 0.07, 0.1, 0.9, 4);
  for (int trial = 0; trial < 200; ++trial) {
    Vec plan(4);
    for (double& v : plan) v = wild(rng);
    saturate_plan(plan, tube);
    double prev = tube.u_ref;
    for (std::size_t j = 0; j < plan.size(); ++j) {
      CHECK(plan[j] >= tube.lower[j] - 1e-15);
      CHECK(plan[j] <= tube.upper[j] + 1e-15);
      CHECK(std::abs(plan[j] - prev) <= tube.max_step + 1e-15);
      prev = plan[j];
    }
    Vec again = plan;
    saturate_plan(again, tube);
    CHECK(again == plan);
  }
}

TEST_CASE("rate-limited moves halve infeasible velocities and project the rest") {
  ReachableTube tube = reachable_tube(0.5, 0.1, 0.0, 1.0, 2);
  BoxBounds bounds = tube.box();
  std::mt19937_64 rng(3);

  SwarmState swarm;
  swarm.particles.resize(3);
  // Feasible small move: taken verbatim.
  swarm.particles[0].position = {0.5, 0.5};
  swarm.particles[0].velocity = {0.05, 0.02};
  // Wild move: must end feasible with velocity equal to the displacement.
  swarm.particles[1].position = {0.55, 0.5};
  swarm.particles[1].velocity = {5.0, -7.0};
  // Zero move: stays put.
  swarm.particles[2].position = {0.45, 0.4};
  swarm.particles[2].velocity = {0.0, 0.0};
  for (Particle& p : swarm.particles) {
    p.pbest_position = p.position;
    p.pbest_cost = 1.0;
  }

  SwarmContext ctx{swarm, bounds, rng};
  Vec before1 = swarm.particles[1].position;
  apply_rate_limited_moves(ctx, tube, 12);

  CHECK(swarm.particles[0].position[0] == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(swarm.particles[0].position[1] == doctest::Approx(0.52).epsilon(1e-15));
  CHECK(swarm.particles[2].position[0] == 0.45);
  CHECK(swarm.particles[2].position[1] == 0.4);

  for (const Particle& p : swarm.particles) {
    Vec sat = p.position;
    saturate_plan(sat, tube);
    CHECK(sat == p.position);  // every landing spot is feasible
  }
  CHECK(swarm.particles[1].velocity[0] ==
        doctest::Approx(swarm.particles[1].position[0] - before1[0]).epsilon(1e-12));
  CHECK(swarm.particles[1].velocity[1] ==
        doctest::Approx(swarm.particles[1].position[1] - before1[1]).epsilon(1e-12));
}

TEST_CASE("rollout cost matches a hand-rolled simulation of the same plan") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  NmpcConfig cfg;
  cfg.n_p = 2;
  const double u_prev = 4.0;
  CascadeState start = model.steady_state(4.0, pp.nominal_solvent_flow);
  RolloutEvaluator eval(model, cfg, sp, start, u_prev, pp.nominal_solvent_flow);

  const Vec plan = {4.4, 4.8};
  const double got = eval.cost(plan);

  // Spell the cost out longhand: interval-end state deviations, input
  // deviation and move terms, then a held tail with a terminal deviation.
  const double dt = cfg.n_ctrl * cfg.t_meas;
  const double rw = cfg.input_scale / sp.u_set;
  const double sw = cfg.move_scale / sp.u_set;
  CascadeState x = start;
  double expected = 0.0, prev = u_prev;
  for (double u : plan) {
    REQUIRE(model.step(x, u, pp.nominal_solvent_flow, dt));
    double dev = 0.0;
    for (int j = 0; j < kStateSize; ++j) {
      const double d = x.c[j] - sp.x_set.c[j];
      dev += d * d;
    }
    expected += cfg.tracking_weight * dev + rw * (u - sp.u_set) * (u - sp.u_set) +
                sw * (u - prev) * (u - prev);
    prev = u;
  }
  REQUIRE(model.step(x, plan.back(), pp.nominal_solvent_flow, dt));
  double dev = 0.0;
  for (int j = 0; j < kStateSize; ++j) {
    const double d = x.c[j] - sp.x_set.c[j];
    dev += d * d;
  }
  expected += cfg.terminal_weight * dev;

  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::isfinite(got));

  // Second evaluation of the same plan is served from the cache.
  CHECK(eval.cost(plan) == got);
  CHECK(eval.rollouts() == 1);
  CHECK(eval.cache_hits() == 1);
}

TEST_CASE("plans that would breach the raffinate ceiling cost infinity") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  NmpcConfig cfg;
  cfg.n_p = 2;
  // Starved solvent flow washes uranium out at the bottom within the horizon.
  const double q_low = 0.25 * pp.nominal_solvent_flow;
  CascadeState start = sp.x_set;
  for (int k = 0; k < 60; ++k) REQUIRE(model.step(start, 2.0, q_low, 0.1));
  REQUIRE(model.raffinate(start) > cfg.raffinate_limit_fraction * pp.feed_u);

  RolloutEvaluator eval(model, cfg, sp, start, 2.0, q_low);
  CHECK(std::isinf(eval.cost({2.0, 2.0})));
  CHECK(std::isinf(eval.cost({2.5, 3.0})));
}

TEST_CASE("setpoint tracks the critical feed of the current solvent flow") {
  CascadeParams pp;
  CascadeModel model{pp};

  Setpoint nominal = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(nominal.valid);
  CHECK(nominal.critical_feed > 6.5);
  CHECK(nominal.critical_feed < 7.5);
  CHECK(nominal.u_set == doctest::Approx(5.78).epsilon(0.02));
  CHECK(nominal.y_set == doctest::Approx(0.26).epsilon(0.05));
  CHECK(nominal.y_set == doctest::Approx(0.5 * nominal.critical_output).epsilon(1e-12));
  CHECK(model.output(nominal.x_set) == doctest::Approx(nominal.y_set).epsilon(1e-3));

  // Less solvent, less capacity: the whole operating point shifts down.
  Setpoint reduced = compute_setpoint(model, 0.8 * pp.nominal_solvent_flow);
  REQUIRE(reduced.valid);
  CHECK(reduced.critical_feed < nominal.critical_feed);
  CHECK(reduced.u_set < nominal.u_set);

  // A quarter of the nominal flow cannot run the cascade at any allowed feed.
  Setpoint starved = compute_setpoint(model, 0.25 * pp.nominal_solvent_flow);
  CHECK_FALSE(starved.valid);
}

TEST_CASE("hold test accepts the settled state and rejects a cold start") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  NmpcController ctrl(model, NmpcConfig{});
  CHECK(ctrl.hold_acceptable(sp.x_set, sp, pp.nominal_solvent_flow));

  CascadeParams acid = pp;
  acid.feed_u = 0.0;
  CascadeModel acid_model{acid};
  CascadeState cold = acid_model.steady_state(pp.feed_flow_min, pp.nominal_solvent_flow);
  CHECK_FALSE(ctrl.hold_acceptable(cold, sp, pp.nominal_solvent_flow));

  Setpoint invalid;
  CHECK_FALSE(ctrl.hold_acceptable(sp.x_set, invalid, pp.nominal_solvent_flow));
}

TEST_CASE("settled plant gets a hold decision at exactly the setpoint feed") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  NmpcController ctrl(model, NmpcConfig{});
  ControlDecision d = ctrl.decide(sp.x_set, sp, pp.nominal_solvent_flow, sp.u_set, 99);
  CHECK(d.mode == ControlMode::kHold);
  CHECK(d.u == sp.u_set);
  CHECK_FALSE(d.rate_relaxed);
  CHECK(std::isfinite(d.cost));
  CHECK(d.cost < 1e-10);  // already at the target
}

TEST_CASE("cold start optimizes, stays in the tube and beats standing still") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  CascadeParams acid = pp;
  acid.feed_u = 0.0;
  CascadeModel acid_model{acid};
  CascadeState cold = acid_model.steady_state(pp.feed_flow_min, pp.nominal_solvent_flow);

  NmpcConfig cfg;
  NmpcController ctrl(model, cfg);
  const double u_prev = pp.feed_flow_min;
  ControlDecision d = ctrl.decide(cold, sp, pp.nominal_solvent_flow, u_prev, 123);

  CHECK(d.mode == ControlMode::kOptimize);
  const double delta = cfg.rate_fraction * sp.u_set;
  ReachableTube tube = reachable_tube(u_prev, delta, pp.feed_flow_min,
                                      pp.feed_flow_max, cfg.n_p);
  REQUIRE(d.plan.size() == static_cast<std::size_t>(cfg.n_p));
  Vec sat = d.plan;
  saturate_plan(sat, tube);
  CHECK(sat == d.plan);  // accepted plan is feasible as returned
  CHECK(d.u == d.plan.front());
  CHECK(d.u >= u_prev);  // loading up, never backing away from an empty plant

  RolloutEvaluator eval(model, cfg, sp, cold, u_prev, pp.nominal_solvent_flow);
  CHECK(d.cost <= eval.cost(Vec(cfg.n_p, u_prev)) + 1e-12);

  NmpcController again(model, cfg);
  ControlDecision d2 = again.decide(cold, sp, pp.nominal_solvent_flow, u_prev, 123);
  CHECK(d2.u == d.u);
  CHECK(d2.plan == d.plan);
  CHECK(d2.cost == d.cost);

  NmpcController other(model, cfg);
  ControlDecision d3 = other.decide(cold, sp, pp.nominal_solvent_flow, u_prev, 124);
  CHECK((d3.u != d.u || d3.plan != d.plan));  // seed matters somewhere
}

TEST_CASE("all-infeasible tube collapses to a pinned minimum-feed command") {
  CascadeParams pp;
  CascadeModel model{pp};
  Setpoint sp = compute_setpoint(model, pp.nominal_solvent_flow);
  REQUIRE(sp.valid);

  const double q_low = 0.25 * pp.nominal_solvent_flow;
  CascadeState bad = sp.x_set;
  for (int k = 0; k < 60; ++k) REQUIRE(model.step(bad, 2.0, q_low, 0.1));

  NmpcController ctrl(model, NmpcConfig{});
  ControlDecision d = ctrl.decide(bad, sp, q_low, pp.feed_flow_min, 7);
  CHECK(d.mode == ControlMode::kPinned);
  CHECK(d.pinned_min);
  CHECK(d.u == pp.feed_flow_min);  // exact, not approximately
  CHECK(d.relax_rounds >= 1);
}

TEST_CASE("controller configuration is validated") {
  auto broken = [](auto mutate) {
    NmpcConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_NOTHROW(NmpcConfig{}.validate());
  CHECK_THROWS_AS(broken([](NmpcConfig& c) { c.n_p = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](NmpcConfig& c) { c.rate_fraction = 0.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](NmpcConfig& c) { c.hold_band = -0.1; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](NmpcConfig& c) { c.tracking_weight = -1.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](NmpcConfig& c) { c.swarm.n_particles = 0; }).validate(),
                  std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "chauffeur/errors.hpp"
#include "chauffeur/runner.hpp"
#include "chauffeur/simulator.hpp"

using namespace chauffeur;

namespace {

// Straight two-lane world, ego cruising at 5 m/s down the center line, with an
// optional same-lane follower approaching from behind at 10 m/s.
Scenario straight_scene(bool with_follower) {
  Scenario s;
  s.id = "straight-hand";
  s.frequency_hz = 10.0;
  s.horizon_steps = 80;
  s.ego_index = 0;
  s.map_polylines = {Polyline{{{-40, 5}, {80, 5}}}, Polyline{{{-40, -5}, {80, -5}}}};
  AgentLog ego;
  for (int t = 0; t < 80; ++t) {
    ego.states.push_back({0.5 * t, 0, 0, 5, 0});
    s.routing.points.push_back({0.5 * t, 0});
  }
  s.agents.push_back(ego);
  if (with_follower) {
    AgentLog f;
    for (int t = 0; t < 80; ++t) f.states.push_back({-20.0 + t, 0, 0, 10, 0});
    s.agents.push_back(f);
  }
  return s;
}

struct ConstantPolicy : Policy {
  BicycleAction action;
  explicit ConstantPolicy(BicycleAction a) : action(a) {}
  TransitionKind kind() const override { return TransitionKind::bicycle; }
  PolicyDecision act(const Simulator&, const Observation&) override {
    PolicyDecision d;
    d.bicycle = action;
    return d;
  }
};

}  // namespace

TEST_CASE("idm_accel pins the canonical cases") {
  IdmParams p;
  p.desired_speed = 10.0;
  double inf = std::numeric_limits<double>::infinity();

  // Free road: a_max (1 - (v/v0)^4), exactly representable here.
  CHECK(idm_accel(5.0, 0.0, inf, p) == 1.40625);
  CHECK(idm_accel(10.0, 0.0, inf, p) == 0.0);

  // Following at distance: independent arithmetic of the same formula.
  CHECK(idm_accel(5.0, 3.0, 30.0, p) == doctest::Approx(1.1629592404689546).epsilon(1e-12));

  // Closing hard on a stopped leader saturates at the braking clamp.
  CHECK(idm_accel(10.0, 0.0, 3.0, p) == -4.0);

  // A parked agent wants nothing.
  IdmParams q;
  q.desired_speed = 0.0;
  CHECK(idm_accel(0.0, 0.0, 5.0, q) == 0.0);
}

TEST_CASE("compute_reward composes the shaped terms") {
  RewardConfig cfg;
  ViolationFlags none;

  RewardBreakdown r = compute_reward(5.0, 5.0, none, cfg);
  CHECK(r.total == 0.0);

  r = compute_reward(4.0, 5.0, none, cfg);
  CHECK(r.r_speed == -1.0);
  CHECK(r.total == -1.0);

  ViolationFlags all{true, true, true};
  r = compute_reward(5.0, 5.0, all, cfg);
  CHECK(r.r_offroad == 1.0);
  CHECK(r.r_collision == 1.0);
  CHECK(r.r_wrongway == 1.0);
  CHECK(r.total == -3.0);

  RewardConfig w;
  w.w_speed = 2.0;
  w.w_collision = -10.0;
  r = compute_reward(3.0, 5.0, ViolationFlags{false, true, false}, w);
  CHECK(r.total == 2.0 * -2.0 + -10.0);
}

TEST_CASE("full-horizon expert replay stays clean and completes the route") {
  for (Family fam : {Family::straight, Family::curve, Family::intersection, Family::parking}) {
    for (uint64_t seed : {1ull, 2ull}) {
      Scenario s = generate_scenario({fam, 6, 0.0, seed});
      EpisodeMetrics m = replay_expert_metrics(s, TransitionKind::bicycle);
      INFO("family ", family_name(fam), " seed ", seed);
      CHECK(!m.collision);
      CHECK(!m.offroad);
      CHECK(!m.wrongway);
      CHECK(m.progress_ratio > 99.0);
      CHECK(m.arrived);
    }
  }
}

TEST_CASE("waypoint expert replay reaches the exact route end") {
  Scenario s = generate_scenario({Family::curve, 4, 0.0, 11});
  EpisodeMetrics m = replay_expert_metrics(s, TransitionKind::waypoint);
  CHECK(m.progress_ratio == 100.0);
  CHECK(m.arrived);
  CHECK(!m.collision);
}

TEST_CASE("closed-loop arrival cuts the episode just past 90 percent") {
  Scenario s = generate_scenario({Family::straight, 4, 0.0, 9});
  ExpertPolicy expert(TransitionKind::bicycle);
  EpisodeRecord rec = run_episode(s, expert);
  CHECK(rec.metrics.arrived);
  CHECK(rec.metrics.progress_ratio > 90.0);
  CHECK(rec.metrics.progress_ratio < 95.0);  // done fires at the first crossing
  CHECK(rec.steps < s.horizon_steps - 1);
}

TEST_CASE("arrival closes the episode before the horizon") {
  Scenario s = straight_scene(false);
  ExpertPolicy expert;
  EpisodeRecord rec = run_episode(s, expert);
  CHECK(rec.metrics.arrived);
  CHECK(rec.steps < s.horizon_steps - 1);
}

TEST_CASE("exact log replay earns exactly zero reward on an exact scene") {
  Scenario s = straight_scene(false);
  Simulator sim(s, AgentControl::non_reactive);
  ExpertPolicy expert;
  Observation dummy;
  RewardBreakdown r = sim.step(expert.act(sim, dummy).bicycle);
  CHECK(r.total == 0.0);
  CHECK(sim.state().agents[0].x == 0.5);
}

TEST_CASE("violations latch and never terminate the episode") {
  Scenario s = generate_scenario({Family::straight, 0, 0.0, 3});
  Simulator sim(s, AgentControl::non_reactive);
  ConstantPolicy circler({2.0, -0.3});  // spirals across the right edge and back

  bool saw_offroad = false, saw_recovered_latch = false;
  int steps = 0;
  while (!sim.state().done) {
    sim.step(circler.action);
    ++steps;
    if (sim.state().flags.offroad) saw_offroad = true;
    if (saw_offroad && !sim.state().flags.offroad && sim.state().offroad_ever)
      saw_recovered_latch = true;
  }
  CHECK(saw_offroad);
  CHECK(saw_recovered_latch);  // momentary flag cleared, latch held
  CHECK(sim.state().offroad_ever);
  CHECK(!sim.state().arrived);
  CHECK(steps == s.horizon_steps - 1);  // ran the full horizon despite violating
}

TEST_CASE("stepping a finished episode throws") {
  Scenario s = straight_scene(false);
  Simulator sim(s, AgentControl::non_reactive);
  ExpertPolicy expert;
  Observation dummy;
  while (!sim.state().done) sim.step(expert.act(sim, dummy).bicycle);
  CHECK_THROWS_AS(sim.step(BicycleAction{}), SteppedAfterDone);
}

TEST_CASE("ego override re-seats the ego and keeps its speed") {
  Scenario s = straight_scene(false);
  Simulator sim(s, AgentControl::non_reactive, Pose{5.0, -1.0, 0.3});
  const AgentState& ego = sim.state().agents[0];
  CHECK(ego.x == 5.0);
  CHECK(ego.y == -1.0);
  CHECK(ego.yaw == 0.3);
  CHECK(std::hypot(ego.vx, ego.vy) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(ego.vx == doctest::Approx(5.0 * std::cos(0.3)).epsilon(1e-12));
}

TEST_CASE("reactive traffic yields where log replay collides") {
  Scenario s = straight_scene(true);
  ConstantPolicy brake({-6.0, 0.0});

  RunConfig nonreactive;
  EpisodeRecord hit = run_episode(s, brake, nonreactive);
  CHECK(hit.metrics.collision);  // logged follower drives through the stopped ego

  RunConfig reactive;
  reactive.control = AgentControl::reactive;
  EpisodeRecord yield = run_episode(s, brake, reactive);
  CHECK(!yield.metrics.collision);
  CHECK(yield.steps == s.horizon_steps - 1);
}

TEST_CASE("reactive followers hold their logged path") {
  Scenario s = straight_scene(true);
  Simulator sim(s, AgentControl::reactive);
  ExpertPolicy expert;
  Observation dummy;
  while (!sim.state().done) {
    sim.step(expert.act(sim, dummy).bicycle);
    CHECK(std::abs(sim.state().agents[1].y) < 1e-9);
    CHECK(sim.state().agents[1].x <= 59.0 + 1e-9);  // never beyond the logged path end
  }
}

TEST_CASE("wrongway flags either heading or lateral offence, or both when required") {
  Scenario s = straight_scene(false);
  Simulator sim(s, AgentControl::non_reactive);

  AgentState reversed{10, 0, M_PI, -5, 0};
  CHECK(sim.detect_violations(reversed, sim.state().agents).wrongway);

  AgentState far_out{10, 4.4, 0, 5, 0};  // 4.4 m lateral > 3.5, heading fine
  CHECK(sim.detect_violations(far_out, sim.state().agents).wrongway);

  RewardConfig both;
  both.wrongway_requires_both = true;
  Simulator sim2(s, AgentControl::non_reactive, std::nullopt, both);
  CHECK(!sim2.detect_violations(far_out, sim2.state().agents).wrongway);
  AgentState both_off{10, 4.4, M_PI, -5, 0};
  CHECK(sim2.detect_violations(both_off, sim2.state().agents).wrongway);
}

TEST_CASE("progress ratio caps at 100 and log_speed clamps its index") {
  Scenario s = straight_scene(false);
  Simulator sim(s, AgentControl::non_reactive);
  CHECK(sim.log_speed(-5) == 5.0);
  CHECK(sim.log_speed(1000) == 5.0);
  CHECK(sim.progress_ratio() >= 0.0);
  CHECK(sim.progress_ratio() <= 100.0);
}

TEST_CASE("aggregate averages per-episode metrics into percentages") {
  std::vector<EpisodeMetrics> eps(4);
  eps[0].arrived = true;
  eps[0].progress_ratio = 100.0;
  eps[1].collision = true;
  eps[1].progress_ratio = 50.0;
  eps[2].offroad = true;
  eps[2].collision = true;
  eps[2].progress_ratio = 30.0;
  eps[3].arrived = true;
  eps[3].progress_ratio = 96.0;

  BenchmarkReport r = aggregate(eps);
  CHECK(r.n_episodes == 4);
  CHECK(r.arrival_rate == 50.0);
  CHECK(r.collision_rate == 50.0);
  CHECK(r.offroad_rate == 25.0);
  CHECK(r.mean_progress == doctest::Approx(69.0));

  CHECK_THROWS_AS(aggregate({}), EmptyDataset);
}

TEST_CASE("evaluate_policy repeats deterministically and fills the report") {
  std::vector<Scenario> scens = {generate_scenario({Family::straight, 2, 0.0, 5}),
                                 generate_scenario({Family::curve, 2, 0.0, 5})};
  ExpertPolicy expert;
  EvalResult a = evaluate_policy(scens, expert, 2);
  EvalResult b = evaluate_policy(scens, expert, 2);
  REQUIRE(a.episodes.size() == 4);
  CHECK(a.report.n_episodes == 4);
  CHECK(a.report.arrival_rate == 100.0);
  for (size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(a.episodes[i].total_reward == b.episodes[i].total_reward);
    CHECK(a.episodes[i].metrics.progress_ratio == b.episodes[i].metrics.progress_ratio);
  }
}

TEST_CASE("episode csv is byte-stable") {
  std::vector<EpisodeRecord> recs(2);
  recs[0].scenario_id = "s1";
  recs[0].episode = 0;
  recs[0].metrics.arrived = true;
  recs[0].metrics.progress_ratio = 100.0;
  recs[0].total_reward = -1.25;
  recs[0].steps = 71;
  recs[1].scenario_id = "s2";
  recs[1].episode = 1;
  recs[1].metrics.collision = true;
  recs[1].metrics.progress_ratio = 33.0517578;
  recs[1].total_reward = -12.5;
  recs[1].steps = 79;

  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "chauffeur_eps.csv";
  write_episode_csv(recs, path);
  std::ifstream f(path, std::ios::binary);
  std::stringstream got;
  got << f.rdbuf();
  CHECK(got.str() ==
        "scenario,episode,arrived,collision,offroad,wrongway,progress_ratio,total_reward,"
        "steps\n"
        "s1,0,1,0,0,0,100,-1.25,71\n"
        "s2,1,0,1,0,0,33.0517578,-12.5,79\n");
  fs::remove(path);
}

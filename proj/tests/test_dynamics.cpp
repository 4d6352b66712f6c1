#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "chauffeur/dynamics.hpp"
#include "chauffeur/geometry.hpp"

using namespace chauffeur;

TEST_CASE("bicycle step: coasting, accelerating, turning") {
  AgentState s{0, 0, 0, 5, 0};
  ControlFrequency f;

  AgentState coast = step_bicycle(s, {0, 0}, f);
  CHECK(coast.x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(coast.y == doctest::Approx(0.0));
  CHECK(coast.yaw == doctest::Approx(0.0));
  CHECK(coast.vx == doctest::Approx(5.0));
  CHECK(coast.vy == doctest::Approx(0.0));

  AgentState acc = step_bicycle(s, {2, 0}, f);
  CHECK(acc.x == doctest::Approx(0.51).epsilon(1e-12));
  CHECK(acc.vx == doctest::Approx(5.2).epsilon(1e-12));

  AgentState turn = step_bicycle(s, {0, 0.1}, f);
  CHECK(turn.yaw == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(turn.x == doctest::Approx(0.5));
  // Velocity re-aimed along the updated yaw by default.
  CHECK(turn.vx == doctest::Approx(5.0 * std::cos(0.05)).epsilon(1e-12));
  CHECK(turn.vy == doctest::Approx(5.0 * std::sin(0.05)).epsilon(1e-12));

  AgentState turn_old = step_bicycle(s, {0, 0.1}, f, /*velocity_along_old_yaw=*/true);
  CHECK(turn_old.vx == doctest::Approx(5.0));
  CHECK(turn_old.vy == doctest::Approx(0.0));
}

TEST_CASE("bicycle speed floors at zero and actions clamp") {
  ControlFrequency f;
  AgentState slow{0, 0, 0, 0.3, 0};
  AgentState stopped = step_bicycle(slow, {-6, 0}, f);
  CHECK(std::hypot(stopped.vx, stopped.vy) == doctest::Approx(0.0));

  AgentState s{0, 0, 0, 5, 0};
  AgentState a = step_bicycle(s, {100.0, 0}, f);   // clamps to +6
  AgentState b = step_bicycle(s, {kAccMax, 0}, f);
  CHECK(a.x == b.x);
  CHECK(a.vx == b.vx);
  AgentState c = step_bicycle(s, {0, 2.0}, f);     // clamps to 0.3
  AgentState d = step_bicycle(s, {0, kSteerMax}, f);
  CHECK(c.yaw == d.yaw);
}

TEST_CASE("waypoint step: ego-frame delta rotated into world") {
  ControlFrequency f;
  AgentState s{0, 0, M_PI_2, 0, 0};
  AgentState n = step_delta(s, {0.5, 0, 0}, f);
  CHECK(n.x == doctest::Approx(0.0));
  CHECK(n.y == doctest::Approx(0.5));
  CHECK(n.yaw == doctest::Approx(M_PI_2));
  CHECK(n.vx == doctest::Approx(0.0));
  CHECK(n.vy == doctest::Approx(5.0));

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0), uyaw(-M_PI, M_PI);
  for (int i = 0; i < 1000; ++i) {
    AgentState st{u(rng) * 50, u(rng) * 50, uyaw(rng), u(rng) * 10, u(rng) * 10};
    WaypointAction w{u(rng), u(rng), 0.3 * u(rng)};
    AgentState nx = step_delta(st, w, f);
    double v2 = nx.vx * nx.vx + nx.vy * nx.vy;
    double want = f.hz * f.hz * (w.dx * w.dx + w.dy * w.dy);
    CHECK(v2 == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("waypoint inverse round-trips") {
  ControlFrequency f;
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.0, 1.0), uyaw(-M_PI, M_PI);
  for (int i = 0; i < 2000; ++i) {
    AgentState st{u(rng) * 50, u(rng) * 50, uyaw(rng), 0, 0};
    WaypointAction w{u(rng), u(rng), 0.3 * u(rng)};
    AgentState nx = step_delta(st, w, f);
    WaypointAction back = infer_waypoint_action(st, nx);
    CHECK(std::abs(back.dx - w.dx) < 1e-9);
    CHECK(std::abs(back.dy - w.dy) < 1e-9);
    CHECK(std::abs(wrap_angle(back.dyaw - w.dyaw)) < 1e-9);
    AgentState replay = step_delta(st, back, f);
    CHECK(std::abs(replay.x - nx.x) < 1e-9);
    CHECK(std::abs(replay.y - nx.y) < 1e-9);
  }
}

TEST_CASE("bicycle inverse recovers feasible actions and replays the state") {
  ControlFrequency f;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> uacc(kAccMin, kAccMax), usteer(kSteerMin, kSteerMax);
  std::uniform_real_distribution<double> uspeed(0.2, 15.0), uyaw(-M_PI, M_PI), upos(-100, 100);
  std::uniform_real_distribution<double> uslip(-0.05, 0.05);
  for (int i = 0; i < 5000; ++i) {
    double speed = uspeed(rng), yaw = uyaw(rng);
    // Velocity mostly but not exactly along yaw: the inverse must not assume alignment.
    double vyaw = yaw + uslip(rng);
    AgentState s{upos(rng), upos(rng), yaw, speed * std::cos(vyaw), speed * std::sin(vyaw)};
    BicycleAction a{uacc(rng), usteer(rng)};
    if (speed + a.acc / f.hz < 0.05) a.acc = -speed * f.hz * 0.5;  // keep off the floor
    AgentState nx = step_bicycle(s, a, f);
    bool degenerate = false;
    BicycleAction back = infer_bicycle_action(s, nx, f, &degenerate);
    CHECK_FALSE(degenerate);
    CHECK(std::abs(back.acc - a.acc) < 1e-9);
    CHECK(std::abs(back.steer - a.steer) < 1e-9);
    AgentState replay = step_bicycle(s, back, f);
    CHECK(std::abs(replay.x - nx.x) < 1e-9);
    CHECK(std::abs(replay.y - nx.y) < 1e-9);
    CHECK(std::abs(wrap_angle(replay.yaw - nx.yaw)) < 1e-9);
    CHECK(std::abs(replay.vx - nx.vx) < 1e-9);
    CHECK(std::abs(replay.vy - nx.vy) < 1e-9);
  }
}

TEST_CASE("bicycle inverse flags degenerate standstill") {
  ControlFrequency f;
  AgentState s{0, 0, 1.0, 0, 0};
  AgentState n{0, 0, 1.0, 0, 0};
  bool degenerate = false;
  BicycleAction a = infer_bicycle_action(s, n, f, &degenerate);
  CHECK(degenerate);
  CHECK(a.steer == 0.0);
  CHECK(a.acc == doctest::Approx(0.0));
}

TEST_CASE("bicycle inverse pinned example") {
  ControlFrequency f;
  AgentState s{0, 0, 0, 5, 0};
  AgentState nx = step_bicycle(s, {2.0, 0.1}, f);
  BicycleAction back = infer_bicycle_action(s, nx, f);
  CHECK(back.acc == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(back.steer == doctest::Approx(0.1).epsilon(1e-12));
}

#include <algorithm>
#include <cmath>
#include <random>

#include "chauffeur/dynamics.hpp"
#include "chauffeur/errors.hpp"
#include "chauffeur/geometry.hpp"
#include "chauffeur/rng.hpp"
#include "chauffeur/scenario.hpp"
#include "chauffeur/simulator.hpp"

namespace chauffeur {

namespace {

constexpr int kHorizon = 80;
constexpr double kFreq = 10.0;
constexpr double kEgoWidth = 2.0;
constexpr double kEgoLength = 4.5;
constexpr double kLaneOffset = 2.5;
constexpr double kRoadHalfWidth = 5.0;
constexpr double kLookahead = 6.0;
constexpr double kMinSpacing = 20.0;

struct LaneAgentSpec {
  Polyline path;       // direction of travel
  double start_arc;    // initial arclength along path
  double desired;      // IDM v0
  double stop_at_end;  // treat path end as a standing obstacle
};

Polyline line_between(Vec2 a, Vec2 b, double step) {
  Polyline out;
  double len = std::hypot(b.x - a.x, b.y - a.y);
  int n = std::max(1, static_cast<int>(len / step));
  for (int i = 0; i <= n; ++i) {
    double t = static_cast<double>(i) / n;
    out.points.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

Polyline offset_polyline(const Polyline& center, double offset) {
  Polyline out;
  const auto& p = center.points;
  for (size_t i = 0; i < p.size(); ++i) {
    size_t j0 = i == 0 ? 0 : i - 1;
    size_t j1 = i + 1 < p.size() ? i + 1 : i;
    double dx = p[j1].x - p[j0].x, dy = p[j1].y - p[j0].y;
    double len = std::hypot(dx, dy);
    if (len == 0.0) len = 1.0;
    out.points.push_back({p[i].x - offset * dy / len, p[i].y + offset * dx / len});
  }
  return out;
}

Polyline reversed(Polyline line) {
  std::reverse(line.points.begin(), line.points.end());
  return line;
}

struct WorldBuild {
  std::vector<Polyline> edges;
  Polyline ego_path;
  double ego_start_arc = 12.0;
  double speed_limit = 10.0;
  std::vector<LaneAgentSpec> traffic;
  std::vector<AgentLog> fixed;  // parked cars, pedestrians (constant states)
};

AgentLog constant_agent(AgentKind kind, double width, double length, Pose pose) {
  AgentLog a;
  a.kind = kind;
  a.width = width;
  a.length = length;
  AgentState st{pose.x, pose.y, pose.yaw, 0.0, 0.0};
  a.states.assign(kHorizon, st);
  return a;
}

// Splits density into per-role counts; throws the attempt away (returns false)
// when a family cannot hold that many agents.
bool plan_straightish(WorldBuild& w, const Polyline& center, double limit, int density,
                      std::mt19937_64& rng) {
  w.speed_limit = limit;
  w.ego_path = offset_polyline(center, -kLaneOffset);
  Polyline oncoming = reversed(offset_polyline(center, kLaneOffset));
  w.edges.push_back(offset_polyline(center, -kRoadHalfWidth));
  w.edges.push_back(offset_polyline(center, kRoadHalfWidth));

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double ego_len = polyline_length(w.ego_path);
  int lead_cap = static_cast<int>((ego_len - w.ego_start_arc - 24.0) / kMinSpacing);
  int onc_cap = static_cast<int>((polyline_length(oncoming) - 16.0) / kMinSpacing);
  int n_lead = std::min(density / 2, lead_cap);
  int n_onc = density - n_lead;
  if (n_onc > onc_cap) return false;

  double arc = w.ego_start_arc + 22.0 + 6.0 * u01(rng);
  for (int i = 0; i < n_lead; ++i) {
    w.traffic.push_back({w.ego_path, arc, limit * (0.5 + 0.35 * u01(rng)), false});
    arc += kMinSpacing + 6.0 * u01(rng);
  }
  arc = 8.0 + 8.0 * u01(rng);
  for (int i = 0; i < n_onc; ++i) {
    w.traffic.push_back({oncoming, arc, limit * (0.5 + 0.35 * u01(rng)), false});
    arc += kMinSpacing + 6.0 * u01(rng);
  }
  return true;
}

bool build_family(WorldBuild& w, const ScenarioFamilySpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  switch (spec.family) {
    case Family::straight: {
      Polyline center = line_between({-75, 0}, {75, 0}, 2.5);
      return plan_straightish(w, center, 10.0, spec.traffic_density, rng);
    }
    case Family::curve: {
      double kappa = spec.curvature > 0.0 ? spec.curvature : 0.02 + 0.02 * u01(rng);
      kappa = std::min(kappa, 0.05);
      double sign = u01(rng) < 0.5 ? 1.0 : -1.0;
      double radius = 1.0 / kappa;
      double arc_span = std::min(M_PI / 2, 80.0 * kappa);
      Polyline center;
      for (double s = 0.0; s <= 30.0; s += 2.5) center.points.push_back({s - 75.0, 0.0});
      double arc_len = arc_span * radius;
      Vec2 c0 = center.points.back();
      for (double s = 2.5; s <= arc_len + 1e-9; s += 2.5) {
        double th = s / radius;
        center.points.push_back(
            {c0.x + radius * std::sin(th), c0.y + sign * radius * (1.0 - std::cos(th))});
      }
      double exit_yaw = sign * arc_span;
      Vec2 c1 = center.points.back();
      for (double s = 2.5; s <= 60.0; s += 2.5)
        center.points.push_back({c1.x + s * std::cos(exit_yaw), c1.y + s * std::sin(exit_yaw)});
      return plan_straightish(w, center, 8.0, spec.traffic_density, rng);
    }
    case Family::intersection: {
      Polyline center = line_between({-75, 0}, {75, 0}, 2.5);
      // Main-road population reuses the straight planner, then cross traffic is
      // swapped in for roughly a third of the demand.
      int cross_n = spec.traffic_density / 3;
      if (!plan_straightish(w, center, 9.0, spec.traffic_density - cross_n, rng)) return false;
      w.edges.clear();
      auto edge_pair = [&](Vec2 a, Vec2 b) { w.edges.push_back(line_between(a, b, 10.0)); };
      // Main road edges stop at the junction box |x| < 7.
      edge_pair({-75, -kRoadHalfWidth}, {-7, -kRoadHalfWidth});
      edge_pair({7, -kRoadHalfWidth}, {75, -kRoadHalfWidth});
      edge_pair({-75, kRoadHalfWidth}, {-7, kRoadHalfWidth});
      edge_pair({7, kRoadHalfWidth}, {75, kRoadHalfWidth});
      edge_pair({-kRoadHalfWidth, -75}, {-kRoadHalfWidth, -7});
      edge_pair({-kRoadHalfWidth, 7}, {-kRoadHalfWidth, 75});
      edge_pair({kRoadHalfWidth, -75}, {kRoadHalfWidth, -7});
      edge_pair({kRoadHalfWidth, 7}, {kRoadHalfWidth, 75});
      if (cross_n > 8) return false;
      for (int i = 0; i < cross_n; ++i) {
        // Approach the junction and stop at the stop line (path ends there).
        bool south = (i % 2) == 0;
        Polyline path = south ? line_between({kLaneOffset, -70}, {kLaneOffset, -9}, 2.5)
                              : line_between({-kLaneOffset, 70}, {-kLaneOffset, 9}, 2.5);
        double arc = 4.0 + (i / 2) * kMinSpacing + 5.0 * u01(rng);
        w.traffic.push_back({path, arc, 7.0 * (0.6 + 0.3 * u01(rng)), true});
      }
      return true;
    }
    case Family::parking: {
      Polyline center = line_between({-35, 0}, {35, 0}, 2.5);
      w.speed_limit = 4.0;
      w.ego_start_arc = 6.0;
      w.ego_path = center;
      w.edges.push_back(offset_polyline(center, -4.5));
      w.edges.push_back(offset_polyline(center, 4.5));
      int placed = 0;
      std::vector<Pose> slots;
      for (int k = 0; k < 8; ++k) {
        double x = -28.0 + 8.5 * k;
        slots.push_back({x, -2.8, 0.12 * (u01(rng) - 0.5)});
        slots.push_back({x + 4.0 * u01(rng) - 2.0, 2.8, 0.12 * (u01(rng) - 0.5)});
      }
      for (const auto& slot : slots) {
        if (placed >= spec.traffic_density) break;
        w.fixed.push_back(constant_agent(AgentKind::vehicle, 2.0, 4.5, slot));
        ++placed;
      }
      for (int k = 0; placed < spec.traffic_density && k < 6; ++k, ++placed) {
        double side = (k % 2) ? 3.9 : -3.9;
        w.fixed.push_back(
            constant_agent(AgentKind::pedestrian, 0.6, 0.6, {-30.0 + 11.0 * k, side, M_PI_2}));
      }
      return placed >= spec.traffic_density;
    }
  }
  return false;
}

// IDM integration of all lane agents, synchronous per step, chained per lane path.
std::vector<AgentLog> roll_traffic(const std::vector<LaneAgentSpec>& specs) {
  struct Mover {
    const LaneAgentSpec* spec;
    double arc, speed, length;
  };
  std::vector<Mover> movers;
  for (const auto& sp : specs) movers.push_back({&sp, sp.start_arc, sp.desired, 4.5});
  std::vector<AgentLog> logs(specs.size());
  for (auto& l : logs) {
    l.kind = AgentKind::vehicle;
    l.width = 2.0;
    l.length = 4.5;
  }
  ControlFrequency f{kFreq};
  for (int t = 0; t < kHorizon; ++t) {
    for (size_t i = 0; i < movers.size(); ++i) {
      Pose p = polyline_sample(movers[i].spec->path, movers[i].arc);
      logs[i].states.push_back({p.x, p.y, p.yaw, movers[i].speed * std::cos(p.yaw),
                                movers[i].speed * std::sin(p.yaw)});
    }
    if (t + 1 == kHorizon) break;
    std::vector<double> accel(movers.size());
    for (size_t i = 0; i < movers.size(); ++i) {
      const Mover& m = movers[i];
      double gap = 1e18, v_lead = 0.0;
      for (size_t j = 0; j < movers.size(); ++j) {
        if (j == i || movers[j].spec->path.points != m.spec->path.points) continue;
        double ahead = movers[j].arc - m.arc;
        if (ahead > 0.01 && ahead - 0.5 * (m.length + movers[j].length) < gap) {
          gap = ahead - 0.5 * (m.length + movers[j].length);
          v_lead = movers[j].speed;
        }
      }
      if (m.spec->stop_at_end) {
        double end_gap = polyline_length(m.spec->path) - m.arc + 0.5;
        if (end_gap < gap) {
          gap = end_gap;
          v_lead = 0.0;
        }
      }
      IdmParams idm;
      idm.desired_speed = m.spec->desired;
      accel[i] = idm_accel(m.speed, v_lead, gap, idm);
    }
    for (size_t i = 0; i < movers.size(); ++i) {
      double a = std::max(accel[i], -movers[i].speed * kFreq);
      movers[i].arc += movers[i].speed / kFreq + a / (2.0 * kFreq * kFreq);
      movers[i].speed = std::max(0.0, movers[i].speed + a / kFreq);
    }
  }
  return logs;
}

// Scripted expert: IDM speed along the lane, pure-pursuit steering, integrated
// through the bicycle model so the log is feasible by construction.
AgentLog roll_ego(const WorldBuild& w, const std::vector<AgentLog>& traffic,
                  std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AgentLog ego;
  ego.kind = AgentKind::vehicle;
  ego.width = kEgoWidth;
  ego.length = kEgoLength;

  Pose start = polyline_sample(w.ego_path, w.ego_start_arc);
  double v0 = w.speed_limit * (0.35 + 0.3 * u01(rng));
  AgentState s{start.x, start.y, start.yaw, v0 * std::cos(start.yaw), v0 * std::sin(start.yaw)};
  ControlFrequency f{kFreq};
  const double path_len = polyline_length(w.ego_path);

  for (int t = 0; t < kHorizon; ++t) {
    ego.states.push_back(s);
    if (t + 1 == kHorizon) break;
    double speed = std::hypot(s.vx, s.vy);
    double arc = polyline_nearest({s.x, s.y}, w.ego_path).arclength;

    double gap = 1e18, v_lead = 0.0;
    for (const auto& other : traffic) {
      const AgentState& o = other.states[t];
      auto np = polyline_nearest({o.x, o.y}, w.ego_path);
      if (np.distance > 2.0) continue;
      double ahead = np.arclength - arc;
      double g = ahead - 0.5 * (kEgoLength + other.length);
      if (ahead > 0.01 && g < gap) {
        gap = g;
        v_lead = std::hypot(o.vx, o.vy);
      }
    }
    IdmParams idm;
    idm.desired_speed = w.speed_limit;
    double acc = idm_accel(speed, v_lead, gap, idm);
    acc = std::max(acc, -speed * kFreq);

    Pose target = polyline_sample(w.ego_path, std::min(arc + kLookahead, path_len));
    double alpha = wrap_angle(std::atan2(target.y - s.y, target.x - s.x) - s.yaw);
    double dist_to_target = std::hypot(target.x - s.x, target.y - s.y);
    double steer = dist_to_target > 0.5 ? 2.0 * std::sin(alpha) / kLookahead : 0.0;
    steer = std::clamp(steer, -0.295, 0.295);
    double travel = speed / kFreq + acc / (2.0 * kFreq * kFreq);
    if (std::abs(travel) < 1e-6) steer = 0.0;  // matches the inverse-dynamics convention

    s = step_bicycle(s, {acc, steer}, f);
  }
  return ego;
}

void rigid_transform(Scenario& s, double theta, Vec2 t) {
  double c, sn;
  rot2(theta, c, sn);
  auto xf = [&](Vec2 p) { return Vec2{c * p.x - sn * p.y + t.x, sn * p.x + c * p.y + t.y}; };
  for (auto& pl : s.map_polylines)
    for (auto& p : pl.points) p = xf(p);
  for (auto& a : s.agents)
    for (auto& st : a.states) {
      Vec2 p = xf({st.x, st.y});
      double vx = c * st.vx - sn * st.vy, vy = sn * st.vx + c * st.vy;
      st = {p.x, p.y, wrap_angle(st.yaw + theta), vx, vy};
    }
}

OrientedRect agent_rect(const AgentLog& a, const AgentState& st) {
  return {st.x, st.y, a.length, a.width, st.yaw, 0};
}

bool scenario_clean(const Scenario& s) {
  std::vector<std::pair<Vec2, Vec2>> segments;
  for (const auto& pl : s.map_polylines)
    for (size_t i = 0; i + 1 < pl.points.size(); ++i)
      segments.emplace_back(pl.points[i], pl.points[i + 1]);

  for (size_t i = 0; i < s.agents.size(); ++i)
    for (size_t j = i + 1; j < s.agents.size(); ++j)
      if (obb_overlap(agent_rect(s.agents[i], s.agents[i].states[0]),
                      agent_rect(s.agents[j], s.agents[j].states[0])))
        return false;

  const AgentLog& ego = s.agents[s.ego_index];
  ControlFrequency f{s.frequency_hz};
  for (int t = 0; t < s.horizon_steps; ++t) {
    OrientedRect er = agent_rect(ego, ego.states[t]);
    for (const auto& seg : segments)
      if (obb_segment_overlap(er, seg.first, seg.second)) return false;
    for (size_t j = 0; j < s.agents.size(); ++j)
      if (static_cast<int>(j) != s.ego_index &&
          obb_overlap(er, agent_rect(s.agents[j], s.agents[j].states[t])))
        return false;
  }
  for (int t = 0; t + 1 < s.horizon_steps; ++t) {
    BicycleAction a = infer_bicycle_action(ego.states[t], ego.states[t + 1], f);
    AgentState replay = step_bicycle(ego.states[t], a, f);
    if (std::hypot(replay.x - ego.states[t + 1].x, replay.y - ego.states[t + 1].y) >= 1e-6)
      return false;
  }
  return true;
}

}  // namespace

Scenario generate_scenario(const ScenarioFamilySpec& spec) {
  if (spec.traffic_density < 0 || spec.traffic_density > 127)
    throw ValidationError("traffic_density must be in [0, 127]");
  if (spec.curvature < 0.0) throw ValidationError("curvature must be >= 0");

  for (int attempt = 0; attempt < 100; ++attempt) {
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(attempt),
                                 static_cast<uint64_t>(spec.family)));
    WorldBuild w;
    if (!build_family(w, spec, rng)) continue;
    std::vector<AgentLog> traffic = roll_traffic(w.traffic);
    for (auto& fx : w.fixed) traffic.push_back(fx);
    AgentLog ego = roll_ego(w, traffic, rng);

    Scenario s;
    s.id = std::string(family_name(spec.family)) + "-d" + std::to_string(spec.traffic_density) +
           "-s" + std::to_string(spec.seed);
    s.frequency_hz = kFreq;
    s.horizon_steps = kHorizon;
    s.ego_index = 0;
    s.map_polylines = w.edges;
    s.agents.push_back(std::move(ego));
    for (auto& a : traffic) s.agents.push_back(std::move(a));

    std::uniform_real_distribution<double> uang(-M_PI, M_PI), uoff(-20.0, 20.0);
    rigid_transform(s, uang(rng), {uoff(rng), uoff(rng)});
    quantize_scenario(s);
    if (!scenario_clean(s)) continue;
    validate_scenario(s);
    return s;
  }
  throw GenerationFailed("no valid scenario in 100 attempts for spec family=" +
                         std::string(family_name(spec.family)) +
                         " density=" + std::to_string(spec.traffic_density));
}

}  // namespace chauffeur

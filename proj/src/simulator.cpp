#include "chauffeur/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "chauffeur/errors.hpp"

namespace chauffeur {

double idm_accel(double v, double v_lead, double gap, const IdmParams& p) {
  if (p.desired_speed <= 1e-9) return 0.0;  // stationary agent, nothing desired
  double a = p.max_accel * (1.0 - std::pow(v / p.desired_speed, p.exponent));
  if (std::isfinite(gap) && gap < 1e17) {
    double g = std::max(gap, 0.01);
    double s_star = p.min_gap +
                    std::max(0.0, v * p.time_headway +
                                      v * (v - v_lead) /
                                          (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
    a -= p.max_accel * (s_star / g) * (s_star / g);
  }
  return std::clamp(a, -p.max_decel, p.max_accel);
}

RewardBreakdown compute_reward(double ego_speed, double log_speed, const ViolationFlags& f,
                               const RewardConfig& cfg) {
  RewardBreakdown r;
  r.r_speed = -std::abs(log_speed - ego_speed);
  r.r_offroad = f.offroad ? 1.0 : 0.0;
  r.r_collision = f.collision ? 1.0 : 0.0;
  r.r_wrongway = f.wrongway ? 1.0 : 0.0;
  r.total = cfg.w_speed * r.r_speed + cfg.w_offroad * r.r_offroad +
            cfg.w_collision * r.r_collision + cfg.w_wrongway * r.r_wrongway;
  return r;
}

namespace {

OrientedRect agent_rect(const AgentLog& log, const AgentState& st) {
  return {st.x, st.y, log.length, log.width, st.yaw, 0};
}

Polyline dedup_log_path(const std::vector<AgentState>& states) {
  Polyline p;
  for (const auto& st : states) {
    Vec2 v{st.x, st.y};
    if (p.points.empty() || std::hypot(v.x - p.points.back().x, v.y - p.points.back().y) > 1e-9)
      p.points.push_back(v);
  }
  return p;
}

}  // namespace

Simulator::Simulator(const Scenario& s, AgentControl control, std::optional<Pose> ego_override,
                     RewardConfig reward)
    : scenario_(&s), control_(control), reward_(reward) {
  validate_scenario(s);
  for (const auto& a : s.agents) state_.agents.push_back(a.states[0]);
  if (ego_override) {
    AgentState& ego = state_.agents[s.ego_index];
    double speed = std::hypot(ego.vx, ego.vy);
    ego.x = ego_override->x;
    ego.y = ego_override->y;
    ego.yaw = ego_override->yaw;
    ego.vx = speed * std::cos(ego.yaw);
    ego.vy = speed * std::sin(ego.yaw);
  }
  for (const auto& pl : s.map_polylines)
    for (size_t i = 0; i + 1 < pl.points.size(); ++i)
      edge_segments_.emplace_back(pl.points[i], pl.points[i + 1]);
  routing_length_ = polyline_length(s.routing);

  if (control_ == AgentControl::reactive) {
    followers_.resize(s.agents.size());
    for (size_t i = 0; i < s.agents.size(); ++i) {
      if (static_cast<int>(i) == s.ego_index) continue;
      PathFollower& pf = followers_[i];
      pf.path = dedup_log_path(s.agents[i].states);
      double vmax = 0.0;
      for (const auto& st : s.agents[i].states) vmax = std::max(vmax, std::hypot(st.vx, st.vy));
      pf.idm.desired_speed = vmax;
      pf.moving = pf.path.points.size() >= 2 && vmax > 1e-9;
      if (pf.moving) {
        pf.length = polyline_length(pf.path);
        pf.arc = polyline_nearest({state_.agents[i].x, state_.agents[i].y}, pf.path).arclength;
        pf.speed = std::hypot(state_.agents[i].vx, state_.agents[i].vy);
      }
    }
  }
  refresh_flags();
  state_.max_arclength =
      polyline_nearest({state_.agents[s.ego_index].x, state_.agents[s.ego_index].y}, s.routing)
          .arclength;
  if (state_.step >= scenario_->horizon_steps - 1) state_.done = true;
}

double Simulator::progress_ratio() const {
  if (routing_length_ <= 1e-9) return 100.0;
  return std::min(100.0, 100.0 * state_.max_arclength / routing_length_);
}

double Simulator::log_speed(int step) const {
  const auto& states = scenario_->agents[scenario_->ego_index].states;
  int t = std::clamp(step, 0, static_cast<int>(states.size()) - 1);
  return std::hypot(states[t].vx, states[t].vy);
}

ViolationFlags Simulator::detect_violations(const AgentState& ego,
                                            const std::vector<AgentState>& others) const {
  const Scenario& s = *scenario_;
  ViolationFlags f;
  OrientedRect er = agent_rect(s.agents[s.ego_index], ego);
  for (const auto& seg : edge_segments_)
    if (obb_segment_overlap(er, seg.first, seg.second)) {
      f.offroad = true;
      break;
    }
  for (size_t i = 0; i < others.size() && !f.collision; ++i)
    if (static_cast<int>(i) != s.ego_index &&
        obb_overlap(er, agent_rect(s.agents[i], others[i])))
      f.collision = true;
  NearestPoint np = polyline_nearest({ego.x, ego.y}, s.routing);
  bool yaw_off = std::abs(wrap_angle(ego.yaw - np.heading)) > reward_.delta_yaw;
  bool dis_off = np.distance > reward_.delta_dis;
  f.wrongway = reward_.wrongway_requires_both ? (yaw_off && dis_off) : (yaw_off || dis_off);
  return f;
}

void Simulator::refresh_flags() {
  state_.flags = detect_violations(state_.agents[scenario_->ego_index], state_.agents);
  state_.offroad_ever |= state_.flags.offroad;
  state_.collision_ever |= state_.flags.collision;
  state_.wrongway_ever |= state_.flags.wrongway;
}

RewardBreakdown Simulator::advance(const AgentState& ego_next) {
  if (state_.done) throw SteppedAfterDone("step() after done");
  const Scenario& s = *scenario_;
  int next = state_.step + 1;

  if (control_ == AgentControl::non_reactive) {
    for (size_t i = 0; i < state_.agents.size(); ++i)
      if (static_cast<int>(i) != s.ego_index) state_.agents[i] = s.agents[i].states[next];
  } else {
    // Synchronous IDM update along each logged path; the path end is a stop line.
    std::vector<double> accel(state_.agents.size(), 0.0);
    for (size_t i = 0; i < state_.agents.size(); ++i) {
      if (static_cast<int>(i) == s.ego_index || !followers_[i].moving) continue;
      const PathFollower& pf = followers_[i];
      double gap = 1e18, v_lead = 0.0;
      for (size_t j = 0; j < state_.agents.size(); ++j) {
        if (j == i) continue;
        auto np = polyline_nearest({state_.agents[j].x, state_.agents[j].y}, pf.path);
        if (np.distance > 2.0) continue;
        double ahead = np.arclength - pf.arc;
        double g = ahead - 0.5 * (s.agents[i].length + s.agents[j].length);
        if (ahead > 0.01 && g < gap) {
          gap = g;
          v_lead = std::hypot(state_.agents[j].vx, state_.agents[j].vy);
        }
      }
      double end_gap = pf.length - pf.arc + 0.5;
      if (end_gap < gap) {
        gap = end_gap;
        v_lead = 0.0;
      }
      accel[i] = idm_accel(pf.speed, v_lead, gap, pf.idm);
    }
    double f = s.frequency_hz;
    for (size_t i = 0; i < state_.agents.size(); ++i) {
      if (static_cast<int>(i) == s.ego_index || !followers_[i].moving) continue;
      PathFollower& pf = followers_[i];
      double a = std::max(accel[i], -pf.speed * f);
      pf.arc = std::clamp(pf.arc + pf.speed / f + a / (2.0 * f * f), 0.0, pf.length);
      pf.speed = std::max(0.0, pf.speed + a / f);
      Pose p = polyline_sample(pf.path, pf.arc);
      state_.agents[i] = {p.x, p.y, p.yaw, pf.speed * std::cos(p.yaw),
                          pf.speed * std::sin(p.yaw)};
    }
  }

  state_.agents[s.ego_index] = ego_next;
  state_.step = next;
  refresh_flags();
  state_.max_arclength = std::max(
      state_.max_arclength, polyline_nearest({ego_next.x, ego_next.y}, s.routing).arclength);

  RewardBreakdown r = compute_reward(std::hypot(ego_next.vx, ego_next.vy), log_speed(next),
                                     state_.flags, reward_);
  if (progress_ratio() > 90.0 && !state_.collision_ever && !state_.offroad_ever) {
    state_.arrived = true;
    state_.done = true;
  }
  if (state_.step >= s.horizon_steps - 1) state_.done = true;
  return r;
}

RewardBreakdown Simulator::step(BicycleAction a) {
  if (state_.done) throw SteppedAfterDone("step() after done");
  AgentState ego = state_.agents[scenario_->ego_index];
  return advance(step_bicycle(ego, a, ControlFrequency{scenario_->frequency_hz}));
}

RewardBreakdown Simulator::step(const WaypointAction& a) {
  if (state_.done) throw SteppedAfterDone("step() after done");
  AgentState ego = state_.agents[scenario_->ego_index];
  return advance(step_delta(ego, a, ControlFrequency{scenario_->frequency_hz}));
}

EpisodeMetrics episode_metrics(const Simulator& sim) {
  const SimState& st = sim.state();
  EpisodeMetrics m;
  m.collision = st.collision_ever;
  m.offroad = st.offroad_ever;
  m.wrongway = st.wrongway_ever;
  m.progress_ratio = sim.progress_ratio();
  m.arrived = st.arrived;
  return m;
}

BenchmarkReport aggregate(const std::vector<EpisodeMetrics>& episodes) {
  if (episodes.empty()) throw EmptyDataset("aggregate over zero episodes");
  BenchmarkReport r;
  r.n_episodes = static_cast<int>(episodes.size());
  for (const auto& e : episodes) {
    r.arrival_rate += e.arrived ? 1.0 : 0.0;
    r.offroad_rate += e.offroad ? 1.0 : 0.0;
    r.collision_rate += e.collision ? 1.0 : 0.0;
    r.mean_progress += e.progress_ratio;
  }
  double n = static_cast<double>(r.n_episodes);
  r.arrival_rate *= 100.0 / n;
  r.offroad_rate *= 100.0 / n;
  r.collision_rate *= 100.0 / n;
  r.mean_progress /= n;
  return r;
}

}  // namespace chauffeur

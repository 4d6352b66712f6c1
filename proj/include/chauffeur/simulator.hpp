#pragma once

#include <optional>
#include <vector>

#include "chauffeur/dynamics.hpp"
#include "chauffeur/geometry.hpp"
#include "chauffeur/scenario.hpp"

namespace chauffeur {

// Non-ego behavior: replay the log verbatim, or follow the logged path with IDM.
enum class AgentControl { non_reactive, reactive };

enum class TransitionKind { bicycle, waypoint };

struct IdmParams {
  double desired_speed = 10.0;  // v0, per agent set to its max logged speed
  double time_headway = 1.5;    // T
  double min_gap = 2.0;         // s0
  double max_accel = 1.5;
  double comfort_decel = 2.5;   // b
  double exponent = 4.0;        // delta
  double max_decel = 4.0;       // output clamped to [-max_decel, max_accel]
};

// Acceleration for current speed v against a leader at distance gap moving at
// v_lead. Pass gap = +inf for a free road.
double idm_accel(double v, double v_lead, double gap, const IdmParams& p);

struct ViolationFlags {
  bool offroad = false;
  bool collision = false;
  bool wrongway = false;
};

struct RewardConfig {
  double w_speed = 1.0;
  double w_offroad = -1.0;
  double w_collision = -1.0;
  double w_wrongway = -1.0;
  double delta_yaw = 1.0;  // rad, wrong-way heading threshold
  double delta_dis = 3.5;  // m, wrong-way lateral threshold
  bool wrongway_requires_both = false;  // default: either condition flags
};

struct RewardBreakdown {
  double r_speed = 0.0;     // -|log speed - ego speed|
  double r_offroad = 0.0;   // binary
  double r_collision = 0.0; // binary
  double r_wrongway = 0.0;  // binary
  double total = 0.0;
};

RewardBreakdown compute_reward(double ego_speed, double log_speed, const ViolationFlags& f,
                               const RewardConfig& cfg);

struct SimState {
  int step = 0;
  std::vector<AgentState> agents;
  ViolationFlags flags;  // at the current step
  bool offroad_ever = false;
  bool collision_ever = false;
  bool wrongway_ever = false;
  double max_arclength = 0.0;  // farthest routing progress so far
  bool done = false;
  bool arrived = false;
};

// Ego-centric closed-loop episode over one scenario. Violations never terminate;
// they latch. Done on arrival (progress > 90%, clean so far) or at the horizon.
class Simulator {
 public:
  Simulator(const Scenario& s, AgentControl control,
            std::optional<Pose> ego_override = std::nullopt,
            RewardConfig reward = RewardConfig{});

  const SimState& state() const { return state_; }
  const Scenario& scenario() const { return *scenario_; }
  const RewardConfig& reward_config() const { return reward_; }

  double progress_ratio() const;  // percent of the route, capped at 100
  double log_speed(int step) const;

  RewardBreakdown step(BicycleAction a);
  RewardBreakdown step(const WaypointAction& a);

  // Flags for a hypothetical ego state against the given agent states.
  ViolationFlags detect_violations(const AgentState& ego,
                                   const std::vector<AgentState>& others) const;

 private:
  RewardBreakdown advance(const AgentState& ego_next);
  void refresh_flags();

  const Scenario* scenario_;
  AgentControl control_;
  RewardConfig reward_;
  SimState state_;
  std::vector<std::pair<Vec2, Vec2>> edge_segments_;
  double routing_length_ = 0.0;
  // reactive bookkeeping
  struct PathFollower {
    Polyline path;
    double length = 0.0;
    double arc = 0.0;
    double speed = 0.0;
    IdmParams idm;
    bool moving = false;
  };
  std::vector<PathFollower> followers_;
};

struct EpisodeMetrics {
  bool collision = false;
  bool offroad = false;
  bool wrongway = false;
  double progress_ratio = 0.0;  // percent
  bool arrived = false;
};

EpisodeMetrics episode_metrics(const Simulator& sim);

struct BenchmarkReport {
  int n_episodes = 0;
  double arrival_rate = 0.0;    // percent of episodes
  double offroad_rate = 0.0;
  double collision_rate = 0.0;
  double mean_progress = 0.0;   // mean progress_ratio, percent
};

// Throws EmptyDataset on an empty input.
BenchmarkReport aggregate(const std::vector<EpisodeMetrics>& episodes);

}  // namespace chauffeur

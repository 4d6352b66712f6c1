#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chauffeur/observation.hpp"
#include "chauffeur/simulator.hpp"

namespace chauffeur {

// Both action representations; Policy::kind() says which member is read.
struct PolicyDecision {
  BicycleAction bicycle;
  WaypointAction waypoint;
};

// Closed-loop planner interface. reset() runs once per episode before the first
// act(); act() sees the simulator read-only plus the current observation.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual TransitionKind kind() const = 0;
  virtual TokenizerConfig tokenizer() const { return TokenizerConfig{}; }
  virtual void reset(const Scenario&) {}
  virtual PolicyDecision act(const Simulator& sim, const Observation& obs) = 0;
};

// Replays the logged expert by re-aiming the live ego state at the next logged
// state every tick, so quantization drift does not compound.
class ExpertPolicy : public Policy {
 public:
  explicit ExpertPolicy(TransitionKind kind = TransitionKind::bicycle) : kind_(kind) {}
  TransitionKind kind() const override { return kind_; }
  TokenizerConfig tokenizer() const override;
  PolicyDecision act(const Simulator& sim, const Observation& obs) override;

 private:
  TransitionKind kind_;
};

struct RunConfig {
  AgentControl control = AgentControl::non_reactive;
  RewardConfig reward;
  std::optional<Pose> ego_override;
};

struct EpisodeRecord {
  std::string scenario_id;
  int episode = 0;
  EpisodeMetrics metrics;
  double total_reward = 0.0;
  int steps = 0;
};

EpisodeRecord run_episode(const Scenario& s, Policy& policy, const RunConfig& cfg = {});

// Full-horizon expert replay for sanity checks: re-infers the logged action each
// tick and never stops early, so a faithful log scores progress near 100 instead
// of being cut off by the closed-loop arrival rule.
EpisodeMetrics replay_expert_metrics(const Scenario& s,
                                     TransitionKind kind = TransitionKind::bicycle);

struct EvalResult {
  BenchmarkReport report;
  std::vector<EpisodeRecord> episodes;
};

// episodes_per_scenario repeated runs per scenario; a deterministic policy
// repeats bitwise, which is what sweep baselines are compared against.
EvalResult evaluate_policy(const std::vector<Scenario>& scenarios, Policy& policy,
                           int episodes_per_scenario = 1, const RunConfig& cfg = {});

void write_episode_csv(const std::vector<EpisodeRecord>& records,
                       const std::filesystem::path& path);

}  // namespace chauffeur

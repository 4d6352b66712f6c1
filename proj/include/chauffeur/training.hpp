#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chauffeur/network.hpp"
#include "chauffeur/observation.hpp"
#include "chauffeur/runner.hpp"
#include "chauffeur/scenario.hpp"
#include "chauffeur/simulator.hpp"

namespace chauffeur {

struct ILConfig {
  double lr = 1e-4;
  int epochs = 5;
  int scenarios_per_batch = 500;  // dataset-generation granularity (CLI)
  int batch_size = 6;
  double w_acc = 1.0;
  double w_steer = 5.0;
  double w_x = 1.0;
  double w_y = 50.0;
  double w_yaw = 50.0;
  uint64_t seed = 1;
};

// Weighted L1 over the action dims, averaged over the batch. per_term holds
// the unweighted mean absolute error of each dim (acc/steer or x/y/yaw).
struct ILLoss {
  double total = 0.0;
  std::vector<double> per_term;
};

std::vector<double> il_weights(const ILConfig& cfg, const std::string& mode);
ILLoss il_loss(const Mat& pred, const Mat& gt, const ILConfig& cfg, const std::string& mode);
Var il_loss_graph(Tape& t, Var pred, const Mat& gt, const ILConfig& cfg, const std::string& mode);

struct ILResult {
  Network net;
  std::vector<double> update_losses;  // one entry per minibatch update
  std::vector<double> epoch_means;    // one entry per epoch
};

// Minibatch Adam over a dumped dataset; epoch order reshuffles from cfg.seed.
// Bit-reproducible for a fixed seed. Throws EmptyDataset.
ILResult train_il(const ObsDataset& data, const ILConfig& cfg, Network init);

// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t, accumulated backwards with
// gamma*lambda; returns = advantages + values. bootstrap stands in for the
// value past the end of the slice.
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns);

struct PPOConfig {
  double lr = 3e-4;
  double gamma = 0.99;
  double lambda = 0.9;
  double clip = 0.2;
  double w_ent = 1.0;
  double w_value = 0.01;
  int batch_size = 2500;  // rollout steps per wave, split across scenarios
  int epochs_per_wave = 1;
  double max_grad_norm = 0.5;
  long total_timesteps = 0;
  int minibatch_size = 64;  // per-update graph size (memory knob)
  uint64_t seed = 1;
  RewardConfig reward;
  AgentControl control = AgentControl::non_reactive;
};

struct RolloutStep {
  Observation obs;
  Eigen::Vector2d u;  // pre-map action in [0,1]^2, clamped off the boundary
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  uint8_t done = 0;
};

// One scenario's contiguous slice of a wave plus the value bootstrap for its
// final state (0 when that state is terminal).
struct ScenarioStream {
  std::vector<RolloutStep> steps;
  double bootstrap_value = 0.0;
};

struct RolloutBuffer {
  std::vector<ScenarioStream> streams;            // scenario-index order
  std::vector<double> completed_episode_rewards;  // episodes finished this wave
  int total_steps() const;
};

// Persistent rollout streams: one simulator per scenario whose episodes run
// across wave boundaries, resetting on done. Deterministic for a fixed seed.
class RolloutWorkers {
 public:
  RolloutWorkers(std::vector<Scenario> scenarios, const PPOConfig& cfg,
                 const TokenizerConfig& tok);
  RolloutBuffer collect(const Network& net, int steps_per_wave);
  int n_scenarios() const { return static_cast<int>(workers_.size()); }

 private:
  struct Worker {
    Scenario scenario;
    std::optional<Simulator> sim;
    StaticTokenCache cache;
    Observation obs;
    Rng rng{0};
    double episode_reward = 0.0;
  };
  void reset_worker(Worker& w);
  std::vector<Worker> workers_;
  RewardConfig reward_;
  AgentControl control_;
  TokenizerConfig tok_;
};

struct PpoLossParts {
  double total = 0.0, policy = 0.0, value = 0.0, entropy = 0.0;
};

// Clipped-surrogate total: policy + w_value*mse + w_ent*(-mean entropy).
// Advantages must already be normalized by the caller.
Var ppo_loss_graph(Tape& t, Var alpha, Var beta, Var value, const Mat& actions_u,
                   const Eigen::VectorXd& old_log_prob, const Eigen::VectorXd& advantages,
                   const Eigen::VectorXd& returns, const PPOConfig& cfg, PpoLossParts* parts);

// Plain-scalar policy term for oracle checks: -mean(min(rho*A, clip(rho)*A)).
double ppo_policy_term(const std::vector<double>& ratio, const std::vector<double>& adv,
                       double clip);

struct PPOLogRow {
  int wave = 0;
  double mean_reward = 0.0;
  double policy = 0.0, value = 0.0, entropy = 0.0;
  double grad_norm = 0.0;
};

struct PPOResult {
  Network net;
  std::vector<double> reward_curve;  // mean completed-episode reward per wave
  std::vector<PPOLogRow> log;
};

// Waves of rollout collection + minibatch PPO updates. warm_start, when given,
// donates every parameter whose name and shape match (IL encoder reuse).
PPOResult train_ppo(const std::vector<Scenario>& scenarios, const PPOConfig& cfg,
                    const Network* warm_start = nullptr);

void write_ppo_log_csv(const std::filesystem::path& path, const std::vector<PPOLogRow>& rows);

// Closed-loop adapter: il_* heads emit actions directly, the rl head drives
// with the Beta mean (deterministic evaluation).
class NetworkPolicy : public Policy {
 public:
  explicit NetworkPolicy(const Network& net) : net_(&net) {}
  TransitionKind kind() const override {
    return net_->cfg.mode == "il_waypoint" ? TransitionKind::waypoint : TransitionKind::bicycle;
  }
  TokenizerConfig tokenizer() const override { return net_->cfg.tok; }
  PolicyDecision act(const Simulator& sim, const Observation& obs) override;

 private:
  const Network* net_;
};

}  // namespace chauffeur

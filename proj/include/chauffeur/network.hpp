#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "chauffeur/dynamics.hpp"
#include "chauffeur/observation.hpp"
#include "chauffeur/rng.hpp"
#include "chauffeur/tensor.hpp"

namespace chauffeur {

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 128;
  int token_dim = kTokenDim;
};

// Output mode decides the head stack: il_* heads emit raw actions, rl emits
// Beta concentration pairs plus a value scalar.
struct NetConfig {
  EncoderConfig enc;
  TokenizerConfig tok;
  std::string mode = "il_bicycle";  // il_bicycle | il_waypoint | rl
  uint64_t init_seed = 1;

  int action_dim() const;  // 2 (bicycle/rl) or 3 (waypoint)
};

struct ParamSpec {
  std::string name;
  int rows = 0, cols = 0;
  enum Kind { kWeight, kZero, kOne } kind = kWeight;
};

// Parameter inventory in creation order; initialization and checkpoint shape
// validation both walk this list.
std::vector<ParamSpec> param_specs(const NetConfig& cfg);

std::map<std::string, Mat> init_params(const NetConfig& cfg);

// Scene encoder + heads over rectangle-token observations. Invalid token rows
// are dropped before any arithmetic, so padding can never leak into a latent
// and permutation invariance holds up to FP reduction order. The learnable
// fusion embedding rides as row 0; the latent is its final-layer state.
class Network {
 public:
  Network() = default;
  explicit Network(const NetConfig& c) : cfg(c), params(init_params(c)) {}

  NetConfig cfg;
  std::map<std::string, Mat> params;

  // Graph builders. `bound` caches parameter leaves per tape so that repeated
  // calls share Vars; after backward, read gradients back through it.
  Var encode(Tape& t, const std::vector<const Observation*>& batch,
             std::map<std::string, Var>& bound) const;  // N x model_dim
  Var il_head(Tape& t, std::map<std::string, Var>& bound, Var latents) const;

  struct RlVars {
    Var alpha, beta;  // N x 2, each entry > 1
    Var value;        // N x 1
  };
  RlVars rl_heads(Tape& t, std::map<std::string, Var>& bound, Var latents) const;

  // Non-recording conveniences (bit-identical to the recorded forward).
  Eigen::VectorXd il_action(const Observation& obs) const;

  struct RlOut {
    Eigen::Vector2d alpha, beta;
    double value = 0.0;
  };
  RlOut rl_forward(const Observation& obs) const;

  Mat features(const std::vector<const Observation*>& batch) const;  // N x model_dim

 private:
  Var pvar(Tape& t, std::map<std::string, Var>& bound, const std::string& name) const;
  Var encode_one(Tape& t, std::map<std::string, Var>& bound, const Observation& obs) const;
  Var mlp(Tape& t, std::map<std::string, Var>& bound, Var x, const std::string& prefix,
          int n_hidden) const;
};

// Beta(α,β) with α,β > 1: closed-form stats and a graph form for PPO losses.
double beta_mean(double alpha, double beta);
double beta_log_prob(double alpha, double beta, double x);  // DomainError off (0,1)
double beta_entropy(double alpha, double beta);
double beta_sample(double alpha, double beta, Rng& rng);

// Per-sample log density / entropy summed over action dims; actions is a
// constant N x D matrix with entries strictly inside (0,1).
Var beta_log_prob_graph(Tape& t, Var alpha, Var beta, const Mat& actions);  // N x 1
Var beta_entropy_graph(Tape& t, Var alpha, Var beta);                       // N x 1

// Affine [0,1]^2 <-> [kAccMin,kAccMax] x [kSteerMin,kSteerMax].
BicycleAction map_action(const Eigen::Vector2d& u);
Eigen::Vector2d unmap_action(const BicycleAction& a);

// Checkpoints: text header (version, config echo, tensor name/shape/offset)
// followed by a little-endian float64 payload in sorted-name order.
void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg,
                     const std::map<std::string, Mat>& params);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace chauffeur

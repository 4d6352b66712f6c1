#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chauffeur/geometry.hpp"
#include "chauffeur/scenario.hpp"

namespace chauffeur {

inline constexpr int kTokenDim = 7;

// Values of the segment-indicator attribute (token column 6).
inline constexpr double kTokRouting = 0.0;
inline constexpr double kTokRoadEdge = 1.0;
inline constexpr double kTokNonEgo = 2.0;
inline constexpr double kTokEgo = 3.0;

struct TokenizerConfig {
  int n_rt = 32;   // routing token capacity
  int n_rd = 64;   // road-edge token capacity
  int n_nego = 32; // non-ego token capacity
  double fov_w = 80.0;  // ego-frame field of view, forward extent
  double fov_h = 20.0;  // lateral extent
  double road_edge_width = 0.5;
  double rdp_eps_road = 0.5;
  double rdp_eps_routing = 0.1;
  bool include_ego_token = true;  // off for the waypoint action space

  int rows() const { return n_rt + n_rd + n_nego + 1; }
};

// Fixed-shape token matrix with a validity mask. Padding rows are all zero.
// Row layout: [routing | road edges | non-ego | ego].
struct Observation {
  int rows = 0;
  std::vector<double> tokens;  // rows x kTokenDim, row-major
  std::vector<uint8_t> mask;   // 1 = valid

  double at(int r, int c) const { return tokens[static_cast<size_t>(r) * kTokenDim + c]; }
};

bool operator==(const Observation& a, const Observation& b);

// Simplified map geometry rendered to oriented rects once per scenario.
struct StaticTokenCache {
  std::vector<OrientedRect> routing_rects;
  std::vector<OrientedRect> road_rects;
};

StaticTokenCache preprocess_static(const Scenario& s, const TokenizerConfig& cfg);

struct TruncationStats {
  int routing = 0;
  int road = 0;
  int non_ego = 0;
};

// Ego-frame tokenization of the current agent states against the static cache.
// Road-edge and non-ego tokens outside the FOV are dropped (routing is exempt);
// over-capacity classes keep the closest tokens (ties by id) in id order.
Observation tokenize(const Scenario& s, const std::vector<AgentState>& agents,
                     const StaticTokenCache& cache, const TokenizerConfig& cfg,
                     TruncationStats* stats = nullptr);

// Appendable binary observation dataset with a text header; one record per
// (scenario, step): tokens, mask, ground-truth action.
class ObsDatasetWriter {
 public:
  ObsDatasetWriter(const std::filesystem::path& path, int rows, int action_dim,
                   const std::string& mode);
  void append(const Observation& obs, std::span<const double> action);
  int rows() const { return rows_; }
  int action_dim() const { return action_dim_; }

 private:
  std::filesystem::path path_;
  int rows_ = 0;
  int action_dim_ = 0;
};

struct ObsDataset {
  int rows = 0;
  int action_dim = 0;
  std::string mode;  // "bicycle" or "waypoint"
  int count = 0;
  std::vector<double> tokens;   // count x rows x kTokenDim
  std::vector<uint8_t> masks;   // count x rows
  std::vector<double> actions;  // count x action_dim

  Observation observation(int i) const;
  std::span<const double> action(int i) const;
};

ObsDataset load_obs_dataset(const std::filesystem::path& path);

}  // namespace chauffeur

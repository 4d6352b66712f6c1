#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "chauffeur/network.hpp"
#include "chauffeur/scenario.hpp"

namespace chauffeur {

struct FeatureSet {
  Mat features;  // N x model_dim
  std::vector<std::string> scenario_ids;
};

struct Embedding2D {
  Mat points;  // N x 2
  double final_kl = 0.0;
};

struct SneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_until = 250;  // also the momentum switch point (0.5 -> 0.8)
  int pre_subset_size = 0;       // 0 derives min(N, max(20*K, 500))
  int K = 4;
  int kmeans_restarts = 8;
  uint64_t seed = 1;
  std::string feature_agg = "t0";  // "t0" or "mean" over the logged horizon
};

// One row per scenario: the encoder's fusion latent of the t=0 observation
// ("mean" averages the latents across every logged step instead).
FeatureSet extract_features(const std::vector<Scenario>& scenarios, const Network& net,
                            const std::string& agg = "t0");

// Exact O(N^2) t-SNE to 2D. Per-row bandwidths are solved by binary search to
// the target perplexity (tol 1e-5 in log space, <= 50 halvings) and verified to
// 1e-3; gradient descent uses momentum 0.5 switching to 0.8 and drops the
// early-exaggeration factor at cfg.exaggeration_until. Deterministic per seed.
Embedding2D tsne(const Mat& features, const SneConfig& cfg);

struct KmeansResult {
  Mat centers;  // K x dim
  std::vector<int> assignment;
  double sse = 0.0;
};

// k-means++ seeding, Lloyd until assignments fix (<= 300 iters), best SSE over
// restarts. Empty clusters re-seed to the farthest point; ties to lowest index.
KmeansResult kmeans(const Mat& points, int K, int restarts, uint64_t seed);

struct SneSelection {
  std::vector<int> chosen;  // K distinct row indices, one per centroid
  Embedding2D embedding;
  KmeansResult clusters;
};

// Embedding + clustering + per-centroid nearest point. A point wanted by two
// centroids goes to the nearer one and the loser takes its next-nearest
// unclaimed point, so exactly K distinct rows come back.
SneSelection sne_select(const Mat& features, const SneConfig& cfg);

struct SneSampleResult {
  std::vector<std::string> ids;  // selected scenario ids, centroid order
  std::vector<int> pre_indices;  // pre-subset rows into the scenario list
  Embedding2D embedding;         // of the pre-subset
};

// Full pipeline: seeded pre-subset without replacement, then sne_select.
// Throws InsufficientScenarios when the counts cannot work.
SneSampleResult sne_sample(const std::vector<Scenario>& scenarios, const Network& net,
                           const SneConfig& cfg);

void write_subset_json(const std::filesystem::path& path, uint64_t seed, int K,
                       const std::vector<std::string>& ids, const std::string& embedding_file);

void write_embedding_csv(const std::filesystem::path& path, const Embedding2D& emb,
                         const std::vector<std::string>& ids);

struct NamedPoints {
  std::vector<std::string> ids;
  Mat points;  // n x 2
};

// Inverse of write_embedding_csv; throws ParseError on a malformed file.
NamedPoints read_embedding_csv(const std::filesystem::path& path);

}  // namespace chauffeur

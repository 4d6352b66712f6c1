#include "chauffeur/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <set>

#include "chauffeur/errors.hpp"
#include "chauffeur/observation.hpp"
#include "chauffeur/rng.hpp"

namespace chauffeur {

FeatureSet extract_features(const std::vector<Scenario>& scenarios, const Network& net,
                            const std::string& agg) {
  if (agg != "t0" && agg != "mean") throw ValidationError("feature_agg must be t0 or mean");
  FeatureSet out;
  out.features.resize(static_cast<Eigen::Index>(scenarios.size()), net.cfg.enc.model_dim);
  std::set<std::string> seen;
  for (size_t i = 0; i < scenarios.size(); ++i) {
    const Scenario& s = scenarios[i];
    if (!seen.insert(s.id).second)
      throw ValidationError("extract_features: duplicate scenario id " + s.id);
    out.scenario_ids.push_back(s.id);
    StaticTokenCache cache = preprocess_static(s, net.cfg.tok);
    auto states_at = [&](int t) {
      std::vector<AgentState> states;
      states.reserve(s.agents.size());
      for (const AgentLog& a : s.agents) states.push_back(a.states[static_cast<size_t>(t)]);
      return states;
    };
    if (agg == "t0") {
      Observation obs = tokenize(s, states_at(0), cache, net.cfg.tok);
      out.features.row(static_cast<Eigen::Index>(i)) = net.features({&obs}).row(0);
    } else {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(net.cfg.enc.model_dim);
      for (int t = 0; t < s.horizon_steps; ++t) {
        Observation obs = tokenize(s, states_at(t), cache, net.cfg.tok);
        acc += net.features({&obs}).row(0);
      }
      out.features.row(static_cast<Eigen::Index>(i)) = acc / double(s.horizon_steps);
    }
  }
  if (!out.features.allFinite()) throw ValidationError("extract_features: non-finite feature");
  return out;
}

namespace {

// Conditional affinities for one row given precision beta; returns entropy (nats).
double row_affinities(const Eigen::VectorXd& d2, Eigen::Index self, double beta,
                      Eigen::VectorXd& p) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < d2.size(); ++j)
    p(j) = (j == self) ? 0.0 : std::exp(-beta * d2(j));
  sum = p.sum();
  double h = 0.0;
  if (sum > 0.0) {
    for (Eigen::Index j = 0; j < d2.size(); ++j)
      if (p(j) > 0.0) {
        p(j) /= sum;
        h -= p(j) * std::log(p(j));
      }
  }
  return h;
}

}  // namespace

Embedding2D tsne(const Mat& features, const SneConfig& cfg) {
  const Eigen::Index n = features.rows();
  if (static_cast<double>(n) <= 3.0 * cfg.perplexity)
    throw PerplexityTooHigh("t-SNE needs more than 3*perplexity rows, got " +
                            std::to_string(n));

  // Pairwise squared distances in feature space.
  Mat d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      d2(i, j) = (features.row(i) - features.row(j)).squaredNorm();

  const double target_h = std::log(cfg.perplexity);
  Mat p_cond = Mat::Zero(n, n);
  Eigen::VectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = 0.0;
    for (int it = 0; it < 50; ++it) {
      h = row_affinities(d2.col(i), i, beta, row);
      double diff = h - target_h;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {  // too flat: raise beta
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    check(std::abs(std::exp(h) - cfg.perplexity) < 1e-3,
          "t-SNE row perplexity failed to converge");
    p_cond.row(i) = row.transpose();
  }

  // Symmetrize and floor.
  Mat p = (p_cond + p_cond.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();

  Rng rng(cfg.seed);
  Mat y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = rng.normal() * 1e-4;

  Mat vel = Mat::Zero(n, 2);
  Mat gains = Mat::Ones(n, 2);  // standard per-coordinate adaptive gains
  Mat q(n, n), num(n, n);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    double exag = iter < cfg.exaggeration_until ? cfg.early_exaggeration : 1.0;
    double momentum = iter < cfg.exaggeration_until ? 0.5 : 0.8;

    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        double t = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = t;
        num(j, i) = t;
      }
    }
    double z = num.sum();
    q = (num / z).cwiseMax(1e-12);

    Mat grad = Mat::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        double coeff = 4.0 * (exag * p(i, j) - q(i, j)) * num(i, j);
        grad.row(i) += coeff * (y.row(i) - y.row(j));
      }

    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        bool same_dir = (grad(i, c) > 0.0) == (vel(i, c) > 0.0);
        gains(i, c) = same_dir ? std::max(0.01, gains(i, c) * 0.8) : gains(i, c) + 0.2;
      }
    vel = momentum * vel - cfg.learning_rate * (gains.array() * grad.array()).matrix();
    y += vel;
    y.rowwise() -= y.colwise().mean();  // keep the embedding centered
  }

  Embedding2D out;
  out.points = y;
  // Recompute Q at the final positions for the reported divergence.
  for (Eigen::Index i = 0; i < n; ++i) {
    num(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double t = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      num(i, j) = t;
      num(j, i) = t;
    }
  }
  q = (num / num.sum()).cwiseMax(1e-12);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      kl += p(i, j) * std::log(p(i, j) / q(i, j));
    }
  out.final_kl = kl;
  check(std::isfinite(out.final_kl), "t-SNE KL diverged");
  return out;
}

namespace {

double nearest_center(const Mat& centers, int k_used, const Eigen::RowVectorXd& pt, int* which) {
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int k = 0; k < k_used; ++k) {
    double d = (centers.row(k) - pt).squaredNorm();
    if (d < best) {  // strict: ties keep the lowest index
      best = d;
      arg = k;
    }
  }
  if (which) *which = arg;
  return best;
}

KmeansResult lloyd_once(const Mat& points, int K, Rng& rng) {
  const Eigen::Index n = points.rows();
  Mat centers(K, points.cols());

  // k-means++ seeding.
  Eigen::Index first = static_cast<Eigen::Index>(rng.next() % static_cast<uint64_t>(n));
  centers.row(0) = points.row(first);
  Eigen::VectorXd dist2(n);
  for (int k = 1; k < K; ++k) {
    for (Eigen::Index i = 0; i < n; ++i)
      dist2(i) = nearest_center(centers, k, points.row(i), nullptr);
    double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(k % n);  // all mass zero: degenerate duplicates
    }
    centers.row(k) = points.row(pick);
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  double prev_sse = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int which = 0;
      sse += nearest_center(centers, K, points.row(i), &which);
      if (assign[static_cast<size_t>(i)] != which) {
        assign[static_cast<size_t>(i)] = which;
        changed = true;
      }
    }
    check(sse <= prev_sse + 1e-9 * (1.0 + prev_sse), "k-means SSE increased");
    prev_sse = sse;
    if (!changed && iter > 0) break;

    Mat sums = Mat::Zero(K, points.cols());
    std::vector<int> counts(static_cast<size_t>(K), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += points.row(i);
      counts[static_cast<size_t>(assign[static_cast<size_t>(i)])]++;
    }
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<size_t>(k)] > 0) {
        centers.row(k) = sums.row(k) / counts[static_cast<size_t>(k)];
      } else {
        // Re-seed an empty cluster with the point farthest from its center.
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          double d = (points.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers.row(k) = points.row(far);
        changed = true;
      }
    }
  }

  KmeansResult out;
  out.centers = centers;
  out.assignment = std::move(assign);
  out.sse = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    out.sse += (points.row(i) - centers.row(out.assignment[static_cast<size_t>(i)])).squaredNorm();
  return out;
}

}  // namespace

KmeansResult kmeans(const Mat& points, int K, int restarts, uint64_t seed) {
  if (K <= 0 || K > points.rows())
    throw ValidationError("kmeans: K must be in [1, N]");
  KmeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(r)));
    KmeansResult cur = lloyd_once(points, K, rng);
    if (cur.sse < best.sse) best = std::move(cur);
  }
  return best;
}

SneSelection sne_select(const Mat& features, const SneConfig& cfg) {
  SneSelection out;
  out.embedding = tsne(features, cfg);
  out.clusters = kmeans(out.embedding.points, cfg.K, cfg.kmeans_restarts,
                        mix_seed(cfg.seed, 0x6b6d));

  const Eigen::Index n = out.embedding.points.rows();
  const int K = cfg.K;
  // Per-centroid preference lists: indices sorted by distance, ties by index.
  std::vector<std::vector<int>> pref(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    std::vector<std::pair<double, int>> order;
    order.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      order.emplace_back(
          (out.embedding.points.row(i) - out.clusters.centers.row(k)).squaredNorm(),
          static_cast<int>(i));
    std::sort(order.begin(), order.end());
    for (auto& [d, i] : order) pref[static_cast<size_t>(k)].push_back(i);
  }

  // Conflicts resolve toward the nearer centroid; the displaced centroid moves
  // on to its next-nearest unclaimed point (stable proposal rounds).
  std::vector<int> next_try(static_cast<size_t>(K), 0);
  std::vector<int> holder(static_cast<size_t>(n), -1);
  std::deque<int> open;
  for (int k = 0; k < K; ++k) open.push_back(k);
  while (!open.empty()) {
    int k = open.front();
    open.pop_front();
    while (true) {
      check(next_try[static_cast<size_t>(k)] < static_cast<int>(n),
            "sne_select ran out of candidates");
      int cand = pref[static_cast<size_t>(k)][static_cast<size_t>(next_try[static_cast<size_t>(k)])];
      ++next_try[static_cast<size_t>(k)];
      int other = holder[static_cast<size_t>(cand)];
      if (other < 0) {
        holder[static_cast<size_t>(cand)] = k;
        break;
      }
      double d_mine = (out.embedding.points.row(cand) - out.clusters.centers.row(k)).squaredNorm();
      double d_held = (out.embedding.points.row(cand) - out.clusters.centers.row(other)).squaredNorm();
      if (d_mine < d_held) {  // steal; the other centroid re-enters the queue
        holder[static_cast<size_t>(cand)] = k;
        open.push_back(other);
        break;
      }
    }
  }

  out.chosen.assign(static_cast<size_t>(K), -1);
  for (Eigen::Index i = 0; i < n; ++i)
    if (holder[static_cast<size_t>(i)] >= 0)
      out.chosen[static_cast<size_t>(holder[static_cast<size_t>(i)])] = static_cast<int>(i);
  for (int k = 0; k < K; ++k) check(out.chosen[static_cast<size_t>(k)] >= 0, "centroid unmatched");
  return out;
}

SneSampleResult sne_sample(const std::vector<Scenario>& scenarios, const Network& net,
                           const SneConfig& cfg) {
  const int n = static_cast<int>(scenarios.size());
  int pre = cfg.pre_subset_size > 0 ? cfg.pre_subset_size
                                    : std::min(n, std::max(20 * cfg.K, 500));
  if (pre > n)
    throw InsufficientScenarios("pre-subset of " + std::to_string(pre) + " from " +
                                std::to_string(n) + " scenarios");
  if (cfg.K > pre)
    throw InsufficientScenarios("K=" + std::to_string(cfg.K) + " exceeds pre-subset " +
                                std::to_string(pre));

  // Seeded sample without replacement, reported in ascending scenario order.
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(mix_seed(cfg.seed, 0x7073));
  for (int i = 0; i < pre; ++i) {
    int j = i + static_cast<int>(rng.next() % static_cast<uint64_t>(n - i));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(pre));
  std::sort(idx.begin(), idx.end());

  std::vector<Scenario> subset;
  subset.reserve(idx.size());
  for (int i : idx) subset.push_back(scenarios[static_cast<size_t>(i)]);
  FeatureSet feats = extract_features(subset, net, cfg.feature_agg);
  SneSelection sel = sne_select(feats.features, cfg);

  SneSampleResult out;
  out.pre_indices = idx;
  out.embedding = sel.embedding;
  for (int row : sel.chosen)
    out.ids.push_back(feats.scenario_ids[static_cast<size_t>(row)]);
  return out;
}

void write_subset_json(const std::filesystem::path& path, uint64_t seed, int K,
                       const std::vector<std::string>& ids, const std::string& embedding_file) {
  nlohmann::json j;
  j["seed"] = seed;
  j["K"] = K;
  j["ids"] = ids;
  j["embedding_file"] = embedding_file;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInput("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

void write_embedding_csv(const std::filesystem::path& path, const Embedding2D& emb,
                         const std::vector<std::string>& ids) {
  if (static_cast<Eigen::Index>(ids.size()) != emb.points.rows())
    throw ShapeMismatch("embedding csv: id count does not match points");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInput("cannot open for writing: " + path.string());
  out << "id,x,y\n";
  for (Eigen::Index i = 0; i < emb.points.rows(); ++i)
    out << ids[static_cast<size_t>(i)] << "," << format9(emb.points(i, 0)) << ","
        << format9(emb.points(i, 1)) << "\n";
}

NamedPoints read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInput("cannot open: " + path.string());
  std::string ctx = path.string();
  std::string line;
  if (!std::getline(f, line)) throw ParseError(ctx + ": empty file");
  if (line != "id,x,y") throw ParseError(ctx + ": unexpected header '" + line + "'");
  std::vector<std::string> ids;
  std::vector<double> xs, ys;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t c1 = line.find(',');
    size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw ParseError(ctx + ": expected 'id,x,y' row, got '" + line + "'");
    ids.push_back(line.substr(0, c1));
    for (auto [from, to, dst] : {std::tuple{c1 + 1, c2, &xs}, std::tuple{c2 + 1, line.size(), &ys}}) {
      std::string field = line.substr(from, to - from);
      size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &pos);
      } catch (const std::exception&) {
        throw ParseError(ctx + ": bad number '" + field + "'");
      }
      if (pos != field.size()) throw ParseError(ctx + ": bad number '" + field + "'");
      dst->push_back(v);
    }
  }
  NamedPoints out;
  out.ids = std::move(ids);
  out.points.resize(static_cast<Eigen::Index>(out.ids.size()), 2);
  for (size_t i = 0; i < out.ids.size(); ++i) {
    out.points(static_cast<Eigen::Index>(i), 0) = xs[i];
    out.points(static_cast<Eigen::Index>(i), 1) = ys[i];
  }
  return out;
}

}  // namespace chauffeur

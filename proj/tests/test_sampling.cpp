#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "chauffeur/errors.hpp"
#include "chauffeur/rng.hpp"
#include "chauffeur/sampling.hpp"

using namespace chauffeur;

namespace {

Mat blob(int n, double cx, double cy, double sigma, Rng& rng) {
  Mat m(n, 2);
  for (int i = 0; i < n; ++i) {
    m(i, 0) = cx + sigma * rng.normal();
    m(i, 1) = cy + sigma * rng.normal();
  }
  return m;
}

Mat vcat(const Mat& a, const Mat& b) {
  Mat m(a.rows() + b.rows(), a.cols());
  m << a, b;
  return m;
}

std::vector<Scenario> gen_scenarios(Family fam, int count, uint64_t seed0, int density = 1) {
  std::vector<Scenario> out;
  for (int i = 0; i < count; ++i) {
    ScenarioFamilySpec spec;
    spec.family = fam;
    spec.traffic_density = density;
    spec.seed = seed0 + static_cast<uint64_t>(i);
    out.push_back(generate_scenario(spec));
  }
  return out;
}

NetConfig tiny_net_cfg() {
  NetConfig cfg;
  cfg.mode = "il_bicycle";
  cfg.init_seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("extract_features: one row per scenario, duplicates rejected, translation-invariant") {
  std::vector<Scenario> scenarios = gen_scenarios(Family::straight, 3, 100);
  Network net(tiny_net_cfg());
  FeatureSet f = extract_features(scenarios, net);
  CHECK(f.features.rows() == 3);
  CHECK(f.features.cols() == 64);
  CHECK(f.scenario_ids.size() == 3);

  // Same scenario content twice under different ids -> identical rows.
  std::vector<Scenario> twice{scenarios[0], scenarios[0]};
  twice[1].id = "copy";
  FeatureSet f2 = extract_features(twice, net);
  CHECK(f2.features.row(0) == f2.features.row(1));  // column-major rows: compare by value

  std::vector<Scenario> dup{scenarios[0], scenarios[0]};
  CHECK_THROWS_AS(extract_features(dup, net), ValidationError);

  // Rigid translation by powers of two preserves every ego-frame token bit,
  // provided coordinates have free low-order bits so the +16/+8 additions are
  // exact.  Snap everything to multiples of 2^-20 (~1e-6 m) first; then all
  // sums/differences downstream stay exactly representable.
  auto snap = [](double v) { return std::ldexp(std::round(std::ldexp(v, 20)), -20); };
  Scenario base = scenarios[0];
  for (auto& pl : base.map_polylines)
    for (auto& pt : pl.points) {
      pt.x = snap(pt.x);
      pt.y = snap(pt.y);
    }
  for (auto& pt : base.routing.points) {
    pt.x = snap(pt.x);
    pt.y = snap(pt.y);
  }
  for (auto& a : base.agents)
    for (auto& st : a.states) {
      st.x = snap(st.x);
      st.y = snap(st.y);
    }
  Scenario moved = base;
  moved.id = "moved";
  for (auto& pl : moved.map_polylines)
    for (auto& pt : pl.points) {
      pt.x += 16.0;
      pt.y += 8.0;
    }
  for (auto& pt : moved.routing.points) {
    pt.x += 16.0;
    pt.y += 8.0;
  }
  for (auto& a : moved.agents)
    for (auto& st : a.states) {
      st.x += 16.0;
      st.y += 8.0;
    }
  FeatureSet fm = extract_features({base, moved}, net);
  CHECK(fm.features.row(0) == fm.features.row(1));

  // Mean aggregation differs from t0 but stays finite and deterministic.
  FeatureSet fmean = extract_features(scenarios, net, "mean");
  CHECK(fmean.features.allFinite());
  CHECK_THROWS_AS(extract_features(scenarios, net, "median"), ValidationError);
}

TEST_CASE("tsne separates two far blobs with perfect 1-NN purity") {
  Rng rng(1);
  int half = 30;
  Mat pts = vcat(blob(half, 0.0, 0.0, 1.0, rng), blob(half, 100.0, 0.0, 1.0, rng));
  SneConfig cfg;
  cfg.perplexity = 10.0;
  cfg.seed = 2;
  Embedding2D emb = tsne(pts, cfg);
  CHECK(emb.points.rows() == 2 * half);
  CHECK(std::isfinite(emb.final_kl));

  int pure = 0;
  for (int i = 0; i < 2 * half; ++i) {
    double best = 1e300;
    int arg = -1;
    for (int j = 0; j < 2 * half; ++j) {
      if (j == i) continue;
      double d = (emb.points.row(i) - emb.points.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    pure += ((arg < half) == (i < half)) ? 1 : 0;
  }
  CHECK(pure == 2 * half);
}

TEST_CASE("tsne keeps duplicate rows among the very closest pairs") {
  Rng rng(3);
  Mat pts = blob(100, 0.0, 0.0, 5.0, rng);
  pts.row(57) = pts.row(13);  // exact duplicate
  SneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.seed = 4;
  cfg.iterations = 2000;  // run to convergence; this probes the equilibrium layout
  Embedding2D emb = tsne(pts, cfg);

  std::vector<double> pair_d;
  for (int i = 0; i < 100; ++i)
    for (int j = i + 1; j < 100; ++j)
      pair_d.push_back((emb.points.row(i) - emb.points.row(j)).norm());
  std::sort(pair_d.begin(), pair_d.end());
  double dup_d = (emb.points.row(13) - emb.points.row(57)).norm();
  double p5 = pair_d[pair_d.size() / 20];
  CHECK(dup_d <= p5);
}

TEST_CASE("tsne is deterministic and enforces the perplexity bound") {
  Rng rng(5);
  Mat pts = blob(40, 0.0, 0.0, 2.0, rng);
  SneConfig cfg;
  cfg.perplexity = 8.0;
  cfg.seed = 9;
  cfg.iterations = 300;
  Embedding2D a = tsne(pts, cfg), b = tsne(pts, cfg);
  CHECK(std::memcmp(a.points.data(), b.points.data(), sizeof(double) * a.points.size()) == 0);
  CHECK(a.final_kl == b.final_kl);

  SneConfig strict;
  strict.perplexity = 30.0;  // needs > 90 rows
  CHECK_THROWS_AS(tsne(pts, strict), PerplexityTooHigh);
}

TEST_CASE("kmeans: K=N zero SSE, K=1 mean, blob centers recovered") {
  Rng rng(6);
  Mat pts = blob(12, 3.0, -2.0, 1.5, rng);

  KmeansResult each = kmeans(pts, 12, 4, 7);
  CHECK(each.sse == doctest::Approx(0.0).epsilon(1e-15));
  std::set<int> used(each.assignment.begin(), each.assignment.end());
  CHECK(used.size() == 12);

  KmeansResult one = kmeans(pts, 1, 4, 7);
  CHECK((one.centers.row(0) - pts.colwise().mean()).norm() < 1e-12);
  CHECK(one.assignment == std::vector<int>(12, 0));

  Mat two = vcat(blob(40, 0.0, 0.0, 0.05, rng), blob(40, 10.0, 10.0, 0.05, rng));
  KmeansResult split = kmeans(two, 2, 8, 8);
  Eigen::RowVector2d m0 = two.topRows(40).colwise().mean();
  Eigen::RowVector2d m1 = two.bottomRows(40).colwise().mean();
  double d00 = (split.centers.row(0) - m0).norm();
  double d01 = (split.centers.row(0) - m1).norm();
  if (d00 < d01) {
    CHECK(d00 < 0.1);
    CHECK((split.centers.row(1) - m1).norm() < 0.1);
  } else {
    CHECK(d01 < 0.1);
    CHECK((split.centers.row(1) - m0).norm() < 0.1);
  }
  CHECK_THROWS_AS(kmeans(two, 0, 1, 1), ValidationError);
  CHECK_THROWS_AS(kmeans(two, 81, 1, 1), ValidationError);
}

TEST_CASE("sne_select returns K distinct rows and resolves centroid conflicts") {
  Rng rng(10);
  // Four tight blobs; K=4 must take exactly one point from each.
  Mat pts = vcat(vcat(blob(30, 0, 0, 0.2, rng), blob(30, 40, 0, 0.2, rng)),
                 vcat(blob(30, 0, 40, 0.2, rng), blob(30, 40, 40, 0.2, rng)));
  SneConfig cfg;
  cfg.perplexity = 12.0;
  cfg.K = 4;
  cfg.seed = 11;
  SneSelection sel = sne_select(pts, cfg);
  std::set<int> distinct(sel.chosen.begin(), sel.chosen.end());
  CHECK(distinct.size() == 4);
  std::set<int> blocks;
  for (int row : sel.chosen) blocks.insert(row / 30);
  CHECK(blocks.size() == 4);  // one per original blob
}

TEST_CASE("sne_sample: identity at K=pre_subset, K=1 hits the global centroid") {
  std::vector<Scenario> scenarios = gen_scenarios(Family::straight, 24, 500, 0);
  Network net(tiny_net_cfg());

  SneConfig cfg;
  cfg.perplexity = 3.0;
  cfg.pre_subset_size = 12;
  cfg.K = 12;
  cfg.seed = 13;
  SneSampleResult all = sne_sample(scenarios, net, cfg);
  CHECK(all.ids.size() == 12);
  std::set<std::string> got(all.ids.begin(), all.ids.end());
  CHECK(got.size() == 12);
  std::set<std::string> pre;
  for (int i : all.pre_indices) pre.insert(scenarios[static_cast<size_t>(i)].id);
  CHECK(got == pre);  // every pre-subset point is its own cluster

  cfg.K = 1;
  SneSampleResult one = sne_sample(scenarios, net, cfg);
  REQUIRE(one.ids.size() == 1);
  Eigen::RowVector2d mean = one.embedding.points.colwise().mean();
  int nearest = 0;
  double best = 1e300;
  for (Eigen::Index i = 0; i < one.embedding.points.rows(); ++i) {
    double d = (one.embedding.points.row(i) - mean).squaredNorm();
    if (d < best) {
      best = d;
      nearest = static_cast<int>(i);
    }
  }
  CHECK(one.ids[0] == scenarios[static_cast<size_t>(one.pre_indices[static_cast<size_t>(nearest)])].id);

  cfg.pre_subset_size = 50;
  CHECK_THROWS_AS(sne_sample(scenarios, net, cfg), InsufficientScenarios);
  cfg.pre_subset_size = 12;
  cfg.K = 13;
  CHECK_THROWS_AS(sne_sample(scenarios, net, cfg), InsufficientScenarios);
}

TEST_CASE("subset json and embedding csv are byte-stable") {
  auto dir = std::filesystem::temp_directory_path() / "chauffeur_sampling";
  std::filesystem::create_directories(dir);

  write_subset_json(dir / "subset.json", 42, 2, {"a", "b"}, "emb.csv");
  std::ifstream in(dir / "subset.json", std::ios::binary);
  std::string got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(got ==
        "{\n  \"K\": 2,\n  \"embedding_file\": \"emb.csv\",\n  \"ids\": [\n    \"a\",\n    "
        "\"b\"\n  ],\n  \"seed\": 42\n}\n");

  Embedding2D emb;
  emb.points = Mat(2, 2);
  emb.points << 1.5, -2.25, 0.125, 3.0;
  write_embedding_csv(dir / "emb.csv", emb, {"a", "b"});
  std::ifstream ein(dir / "emb.csv", std::ios::binary);
  std::string egot((std::istreambuf_iterator<char>(ein)), std::istreambuf_iterator<char>());
  CHECK(egot == "id,x,y\na,1.5,-2.25\nb,0.125,3\n");

  CHECK_THROWS_AS(write_embedding_csv(dir / "bad.csv", emb, {"a"}), ShapeMismatch);
  std::filesystem::remove_all(dir);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "chauffeur/errors.hpp"
#include "chauffeur/network.hpp"

using namespace chauffeur;
namespace fs = std::filesystem;

namespace {

TokenizerConfig small_tok() {
  TokenizerConfig tok;
  tok.n_rt = 4;
  tok.n_rd = 6;
  tok.n_nego = 3;
  return tok;  // 14 rows; keeps forwards cheap
}

NetConfig small_cfg(const std::string& mode, uint64_t seed = 7) {
  NetConfig cfg;
  cfg.tok = small_tok();
  cfg.mode = mode;
  cfg.init_seed = seed;
  return cfg;
}

Observation random_obs(const TokenizerConfig& tok, int n_valid, Rng& rng) {
  Observation obs;
  obs.rows = tok.rows();
  obs.tokens.assign(static_cast<size_t>(obs.rows) * kTokenDim, 0.0);
  obs.mask.assign(static_cast<size_t>(obs.rows), 0);
  for (int i = 0; i < n_valid; ++i) {
    obs.mask[static_cast<size_t>(i)] = 1;
    for (int c = 0; c < kTokenDim; ++c)
      obs.tokens[static_cast<size_t>(i) * kTokenDim + c] = rng.normal();
  }
  return obs;
}

}  // namespace

TEST_CASE("feature batch has one model_dim row per sample") {
  NetConfig cfg = small_cfg("il_bicycle");
  Network net(cfg);
  Rng rng(3);
  Observation a = random_obs(cfg.tok, 5, rng), b = random_obs(cfg.tok, 9, rng),
              c = random_obs(cfg.tok, 1, rng);
  Mat f = net.features({&a, &b, &c});
  CHECK(f.rows() == 3);
  CHECK(f.cols() == 64);
  CHECK(f.allFinite());
  // All-padding input still has the fusion token to attend over.
  Observation empty = random_obs(cfg.tok, 0, rng);
  CHECK(net.features({&empty}).allFinite());
}

TEST_CASE("head output dims follow the mode") {
  Rng rng(4);
  Observation obs = random_obs(small_tok(), 6, rng);
  CHECK(Network(small_cfg("il_bicycle")).il_action(obs).size() == 2);
  CHECK(Network(small_cfg("il_waypoint")).il_action(obs).size() == 3);
  Network::RlOut out = Network(small_cfg("rl")).rl_forward(obs);
  CHECK(std::isfinite(out.value));
  for (int i = 0; i < 2; ++i) {
    CHECK(out.alpha(i) > 1.0);
    CHECK(out.beta(i) > 1.0);
  }
  CHECK_THROWS_AS(NetConfig(small_cfg("bogus")).action_dim(), ValidationError);
}

TEST_CASE("padding rows cannot influence the latent, bit for bit") {
  NetConfig cfg = small_cfg("il_bicycle");
  Network net(cfg);
  Rng rng(5);
  Observation a = random_obs(cfg.tok, 7, rng);
  Observation b = a;
  for (int r = 0; r < b.rows; ++r) {
    if (b.mask[static_cast<size_t>(r)]) continue;
    for (int c = 0; c < kTokenDim; ++c)
      b.tokens[static_cast<size_t>(r) * kTokenDim + c] = 1e30;  // scribble on padding
  }
  Mat fa = net.features({&a}), fb = net.features({&b});
  CHECK(std::memcmp(fa.data(), fb.data(), sizeof(double) * fa.size()) == 0);
}

TEST_CASE("permuting valid token rows preserves the latent to 1e-10") {
  NetConfig cfg = small_cfg("rl");
  Network net(cfg);
  Rng rng(6);
  Observation a = random_obs(cfg.tok, 10, rng);
  Observation b = a;
  // Reverse the valid block (rows 0..9) carrying mask bits along.
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < kTokenDim; ++c)
      b.tokens[static_cast<size_t>(r) * kTokenDim + c] = a.at(9 - r, c);
  Mat fa = net.features({&a}), fb = net.features({&b});
  CHECK((fa - fb).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("recorded and non-recording forwards agree bitwise") {
  NetConfig cfg = small_cfg("rl");
  Network net(cfg);
  Rng rng(8);
  Observation obs = random_obs(cfg.tok, 6, rng);
  Mat fast = net.features({&obs});
  Tape t(true);
  std::map<std::string, Var> bound;
  Mat rec = t.val(net.encode(t, {&obs}, bound));
  CHECK(std::memcmp(fast.data(), rec.data(), sizeof(double) * fast.size()) == 0);
}

TEST_CASE("full-network gradients match central finite differences") {
  for (const std::string& mode : {std::string("il_bicycle"), std::string("rl")}) {
    NetConfig cfg = small_cfg(mode, 11);
    Network net(cfg);
    Rng rng(9);
    Observation o1 = random_obs(cfg.tok, 5, rng), o2 = random_obs(cfg.tok, 8, rng);
    std::vector<const Observation*> batch{&o1, &o2};

    auto loss_of = [&](const Network& n) {
      Tape t(false);
      std::map<std::string, Var> bound;
      Var lat = n.encode(t, batch, bound);
      Var out;
      if (mode == "rl") {
        Network::RlVars rv = n.rl_heads(t, bound, lat);
        out = t.hcat({rv.alpha, rv.beta, rv.value});
      } else {
        out = n.il_head(t, bound, lat);
      }
      Rng wr(99);
      Mat w(t.val(out).rows(), t.val(out).cols());
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = wr.normal();
      return t.val(t.sum_all(t.mul_constmat(out, w)))(0, 0);
    };

    // Analytic gradients once.
    Tape t(true);
    std::map<std::string, Var> bound;
    Var lat = net.encode(t, batch, bound);
    Var out;
    if (mode == "rl") {
      Network::RlVars rv = net.rl_heads(t, bound, lat);
      out = t.hcat({rv.alpha, rv.beta, rv.value});
    } else {
      out = net.il_head(t, bound, lat);
    }
    Rng wr(99);
    Mat w(t.val(out).rows(), t.val(out).cols());
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = wr.normal();
    t.backward(t.sum_all(t.mul_constmat(out, w)));

    // Sampled entries from every tensor.
    double h = 1e-5;
    Rng pick(13);
    int checked = 0;
    for (const auto& [name, var] : bound) {
      const Mat& p = net.params.at(name);
      for (int k = 0; k < 4; ++k) {
        int r = static_cast<int>(pick.next() % static_cast<uint64_t>(p.rows()));
        int c = static_cast<int>(pick.next() % static_cast<uint64_t>(p.cols()));
        Network pert = net;
        pert.params[name](r, c) += h;
        double up = loss_of(pert);
        pert.params[name](r, c) -= 2 * h;
        double dn = loss_of(pert);
        double fd = (up - dn) / (2 * h);
        double an = t.grad(var)(r, c);
        double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        INFO(mode, " ", name, "(", r, ",", c, ") fd ", fd, " analytic ", an);
        CHECK(err < 1e-4);
        ++checked;
      }
    }
    CHECK(checked >= 100);
  }
}

TEST_CASE("zeroed final policy layer forces alpha=beta=softplus(0)+1") {
  NetConfig cfg = small_cfg("rl");
  Network net(cfg);
  net.params["pi.W3"].setZero();
  net.params["pi.b3"].setZero();
  Rng rng(10);
  Observation obs = random_obs(cfg.tok, 6, rng);
  Network::RlOut out = net.rl_forward(obs);
  double expect = std::log(2.0) + 1.0;
  for (int i = 0; i < 2; ++i) {
    CHECK(out.alpha(i) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(out.beta(i) == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("beta stats: means, domain errors, quadrature entropy") {
  CHECK(beta_mean(2, 2) == 0.5);
  CHECK(beta_mean(3, 1) == 0.75);
  CHECK_THROWS_AS(beta_log_prob(2, 2, 0.0), DomainError);
  CHECK_THROWS_AS(beta_log_prob(2, 2, 1.0), DomainError);
  CHECK_THROWS_AS(beta_log_prob(2, 2, -0.1), DomainError);
  CHECK_THROWS_AS(beta_log_prob(2, 2, 1.5), DomainError);
  CHECK(beta_log_prob(2, 2, 0.5) == doctest::Approx(std::log(1.5)).epsilon(1e-12));

  auto quad_entropy = [](double a, double b) {
    const int n = 1000000;
    double lnB = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = (i + 0.5) / n;  // midpoint rule
      double lp = (a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - lnB;
      acc += std::exp(lp) * lp;
    }
    return -acc / n;
  };
  CHECK(std::abs(beta_entropy(2, 2) - quad_entropy(2, 2)) < 1e-6);
  CHECK(std::abs(beta_entropy(5, 1.5) - quad_entropy(5, 1.5)) < 1e-6);
  CHECK(std::abs(beta_entropy(1.2, 9.0) - quad_entropy(1.2, 9.0)) < 1e-6);

  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    double s = beta_sample(4.0, 2.0, rng);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("graph beta log-prob and entropy match the scalar forms") {
  Tape t;
  Mat am(2, 2), bm(2, 2), x(2, 2);
  am << 2.0, 3.5, 1.2, 6.0;
  bm << 2.0, 1.5, 4.0, 2.2;
  x << 0.5, 0.25, 0.9, 0.6;
  Var alpha = t.leaf(am), beta = t.leaf(bm);
  Mat lp = t.val(beta_log_prob_graph(t, alpha, beta, x));
  Mat ent = t.val(beta_entropy_graph(t, alpha, beta));
  for (int i = 0; i < 2; ++i) {
    double lp_ref = 0.0, ent_ref = 0.0;
    for (int j = 0; j < 2; ++j) {
      lp_ref += beta_log_prob(am(i, j), bm(i, j), x(i, j));
      ent_ref += beta_entropy(am(i, j), bm(i, j));
    }
    CHECK(lp(i, 0) == doctest::Approx(lp_ref).epsilon(1e-12));
    CHECK(ent(i, 0) == doctest::Approx(ent_ref).epsilon(1e-12));
  }
  Mat bad = x;
  bad(0, 0) = 1.0;
  CHECK_THROWS_AS(beta_log_prob_graph(t, alpha, beta, bad), DomainError);

  // Gradients of the graph forms against finite differences of the scalars.
  t.backward(t.sum_all(beta_log_prob_graph(t, alpha, beta, x)));
  double h = 1e-6;
  double fd = (beta_log_prob(am(0, 0) + h, bm(0, 0), x(0, 0)) -
               beta_log_prob(am(0, 0) - h, bm(0, 0), x(0, 0))) / (2 * h);
  CHECK(std::abs(t.grad(alpha)(0, 0) - fd) < 1e-6);
}

TEST_CASE("action mapping hits the documented endpoints and inverts") {
  BicycleAction mid = map_action({0.5, 0.5});
  CHECK(mid.acc == 0.0);
  CHECK(mid.steer == 0.0);
  BicycleAction hi = map_action({1.0, 0.0});
  CHECK(hi.acc == 6.0);
  CHECK(hi.steer == -0.3);
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    Eigen::Vector2d u{rng.uniform(), rng.uniform()};
    Eigen::Vector2d back = unmap_action(map_action(u));
    CHECK(std::abs(back(0) - u(0)) < 1e-12);
    CHECK(std::abs(back(1) - u(1)) < 1e-12);
  }
}

TEST_CASE("initialization is seed-deterministic with documented shapes") {
  NetConfig cfg = small_cfg("il_bicycle", 21);
  Network a(cfg), b(cfg);
  CHECK(a.params.size() == param_specs(cfg).size());
  for (const auto& [name, m] : a.params) {
    CHECK(b.params.at(name) == m);
  }
  CHECK(a.params.at("il.W1").rows() == 64);
  CHECK(a.params.at("il.W1").cols() == 256);
  CHECK(a.params.at("embed.b").isZero());
  CHECK(a.params.at("layer0.ln1.gain") == Mat::Ones(1, 64));
  // Truncated normal: all weight draws inside 2 sigma.
  CHECK(a.params.at("embed.W").cwiseAbs().maxCoeff() <= 0.04);
  NetConfig other = small_cfg("il_bicycle", 22);
  CHECK(Network(other).params.at("embed.W") != a.params.at("embed.W"));
}

TEST_CASE("checkpoint round-trip reproduces forwards bit for bit") {
  fs::path dir = fs::temp_directory_path() / "chauffeur_net_test";
  fs::create_directories(dir);
  NetConfig cfg = small_cfg("rl", 33);
  cfg.tok.fov_w = 77.5;  // non-default values must survive the config echo
  cfg.tok.include_ego_token = false;
  Network net(cfg);
  fs::path file = dir / "net.ckpt";
  save_checkpoint(file, net.cfg, net.params);
  Network back = load_checkpoint(file);
  CHECK(back.cfg.mode == "rl");
  CHECK(back.cfg.tok.fov_w == 77.5);
  CHECK(back.cfg.tok.include_ego_token == false);
  CHECK(back.cfg.init_seed == 33);

  Rng rng(15);
  Observation obs = random_obs(cfg.tok, 7, rng);
  Mat fa = net.features({&obs}), fb = back.features({&obs});
  CHECK(std::memcmp(fa.data(), fb.data(), sizeof(double) * fa.size()) == 0);
  Network::RlOut oa = net.rl_forward(obs), ob = back.rl_forward(obs);
  CHECK(std::memcmp(&oa.value, &ob.value, sizeof(double)) == 0);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects bad files") {
  fs::path dir = fs::temp_directory_path() / "chauffeur_net_bad";
  fs::create_directories(dir);

  CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), MissingInput);

  fs::path junk = dir / "junk.ckpt";
  std::ofstream(junk) << "hello world\nend_header\n";
  CHECK_THROWS_AS(load_checkpoint(junk), ParseError);

  NetConfig cfg = small_cfg("il_bicycle", 1);
  Network net(cfg);
  fs::path good = dir / "good.ckpt";
  save_checkpoint(good, net.cfg, net.params);

  // Future version tag.
  std::ifstream in(good, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::string bumped = buf;
  bumped.replace(bumped.find("v1"), 2, "v9");
  fs::path vpath = dir / "v9.ckpt";
  std::ofstream(vpath, std::ios::binary) << bumped;
  CHECK_THROWS_AS(load_checkpoint(vpath), VersionMismatch);

  // Missing tensor relative to the config inventory.
  auto partial = net.params;
  partial.erase("embed.b");
  fs::path ppath = dir / "partial.ckpt";
  save_checkpoint(ppath, net.cfg, partial);
  CHECK_THROWS_AS(load_checkpoint(ppath), ShapeMismatch);

  // Truncated payload.
  std::string cut = buf.substr(0, buf.size() - 11);
  fs::path tpath = dir / "cut.ckpt";
  std::ofstream(tpath, std::ios::binary) << cut;
  CHECK_THROWS_AS(load_checkpoint(tpath), ParseError);

  fs::remove_all(dir);
}

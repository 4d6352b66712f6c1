#include "chauffeur/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "chauffeur/errors.hpp"

namespace chauffeur {

using nlohmann::json;

int NetConfig::action_dim() const {
  if (mode == "il_bicycle" || mode == "rl") return 2;
  if (mode == "il_waypoint") return 3;
  throw ValidationError("unknown network mode: " + mode);
}

std::vector<ParamSpec> param_specs(const NetConfig& cfg) {
  const int d = cfg.enc.model_dim, ff = cfg.enc.ff_dim, td = cfg.enc.token_dim;
  std::vector<ParamSpec> out;
  auto w = [&](const std::string& n, int r, int c) { out.push_back({n, r, c, ParamSpec::kWeight}); };
  auto z = [&](const std::string& n, int r, int c) { out.push_back({n, r, c, ParamSpec::kZero}); };
  auto one = [&](const std::string& n, int c) { out.push_back({n, 1, c, ParamSpec::kOne}); };

  w("embed.W", td, d);
  z("embed.b", 1, d);
  w("fusion", 1, d);
  for (int l = 0; l < cfg.enc.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    for (const char* part : {"Wq", "Wk", "Wv", "Wo"}) w(p + "attn." + part, d, d);
    for (const char* part : {"bq", "bk", "bv", "bo"}) z(p + "attn." + part, 1, d);
    one(p + "ln1.gain", d);
    z(p + "ln1.bias", 1, d);
    w(p + "ff.W1", d, ff);
    z(p + "ff.b1", 1, ff);
    w(p + "ff.W2", ff, d);
    z(p + "ff.b2", 1, d);
    one(p + "ln2.gain", d);
    z(p + "ln2.bias", 1, d);
  }
  if (cfg.mode == "rl") {
    for (const char* h : {"pi", "vf"}) {
      int dout = std::strcmp(h, "pi") == 0 ? 2 * cfg.action_dim() : 1;
      w(std::string(h) + ".W1", d, 64);
      z(std::string(h) + ".b1", 1, 64);
      w(std::string(h) + ".W2", 64, 64);
      z(std::string(h) + ".b2", 1, 64);
      w(std::string(h) + ".W3", 64, dout);
      z(std::string(h) + ".b3", 1, dout);
    }
  } else {
    w("il.W1", d, 256);
    z("il.b1", 1, 256);
    w("il.W2", 256, cfg.action_dim());
    z("il.b2", 1, cfg.action_dim());
  }
  return out;
}

std::map<std::string, Mat> init_params(const NetConfig& cfg) {
  Rng rng(cfg.init_seed);
  std::map<std::string, Mat> params;
  for (const ParamSpec& s : param_specs(cfg)) {
    Mat m(s.rows, s.cols);
    switch (s.kind) {
      case ParamSpec::kWeight:
        for (int r = 0; r < s.rows; ++r)
          for (int c = 0; c < s.cols; ++c) m(r, c) = rng.trunc_normal(0.02);
        break;
      case ParamSpec::kZero: m.setZero(); break;
      case ParamSpec::kOne: m.setOnes(); break;
    }
    params.emplace(s.name, std::move(m));
  }
  return params;
}

Var Network::pvar(Tape& t, std::map<std::string, Var>& bound, const std::string& name) const {
  auto it = bound.find(name);
  if (it != bound.end()) return it->second;
  auto pit = params.find(name);
  if (pit == params.end()) throw ShapeMismatch("missing parameter: " + name);
  Var v = t.leaf(pit->second);
  bound.emplace(name, v);
  return v;
}

Var Network::encode_one(Tape& t, std::map<std::string, Var>& bound,
                        const Observation& obs) const {
  const int d = cfg.enc.model_dim;
  const int heads = cfg.enc.heads;
  const int dh = d / heads;

  // Compact away padding: masked rows never enter the graph, so their content
  // is structurally irrelevant and set-permutation symmetry is exact.
  int n_valid = 0;
  for (uint8_t m : obs.mask) n_valid += m;
  Var x;
  if (n_valid > 0) {
    Mat tok(n_valid, cfg.enc.token_dim);
    int r = 0;
    for (int i = 0; i < obs.rows; ++i) {
      if (!obs.mask[static_cast<size_t>(i)]) continue;
      for (int c = 0; c < cfg.enc.token_dim; ++c) tok(r, c) = obs.at(i, c);
      ++r;
    }
    Var embedded = t.add_rowvec(t.matmul(t.constant(tok), pvar(t, bound, "embed.W")),
                                pvar(t, bound, "embed.b"));
    x = t.vstack({pvar(t, bound, "fusion"), embedded});
  } else {
    x = pvar(t, bound, "fusion");
  }

  for (int l = 0; l < cfg.enc.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    Var q = t.add_rowvec(t.matmul(x, pvar(t, bound, p + "attn.Wq")), pvar(t, bound, p + "attn.bq"));
    Var k = t.add_rowvec(t.matmul(x, pvar(t, bound, p + "attn.Wk")), pvar(t, bound, p + "attn.bk"));
    Var v = t.add_rowvec(t.matmul(x, pvar(t, bound, p + "attn.Wv")), pvar(t, bound, p + "attn.bv"));
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = t.cols(q, h * dh, dh), kh = t.cols(k, h * dh, dh), vh = t.cols(v, h * dh, dh);
      Var attn = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh))));
      head_outs.push_back(t.matmul(attn, vh));
    }
    Var proj = t.add_rowvec(t.matmul(t.hcat(head_outs), pvar(t, bound, p + "attn.Wo")),
                            pvar(t, bound, p + "attn.bo"));
    x = t.layer_norm(t.add(x, proj), pvar(t, bound, p + "ln1.gain"), pvar(t, bound, p + "ln1.bias"));
    Var hmid = t.tanh_(t.add_rowvec(t.matmul(x, pvar(t, bound, p + "ff.W1")),
                                    pvar(t, bound, p + "ff.b1")));
    Var ffo = t.add_rowvec(t.matmul(hmid, pvar(t, bound, p + "ff.W2")),
                           pvar(t, bound, p + "ff.b2"));
    x = t.layer_norm(t.add(x, ffo), pvar(t, bound, p + "ln2.gain"), pvar(t, bound, p + "ln2.bias"));
  }
  return t.row(x, 0);
}

Var Network::encode(Tape& t, const std::vector<const Observation*>& batch,
                    std::map<std::string, Var>& bound) const {
  if (batch.empty()) throw ShapeMismatch("encode: empty batch");
  std::vector<Var> latents;
  latents.reserve(batch.size());
  for (const Observation* obs : batch) {
    if (obs->rows != cfg.tok.rows())
      throw ShapeMismatch("encode: observation rows do not match tokenizer config");
    latents.push_back(encode_one(t, bound, *obs));
  }
  return latents.size() == 1 ? latents[0] : t.vstack(latents);
}

Var Network::mlp(Tape& t, std::map<std::string, Var>& bound, Var x, const std::string& prefix,
                 int n_hidden) const {
  for (int i = 1; i <= n_hidden + 1; ++i) {
    x = t.add_rowvec(t.matmul(x, pvar(t, bound, prefix + ".W" + std::to_string(i))),
                     pvar(t, bound, prefix + ".b" + std::to_string(i)));
    if (i <= n_hidden) x = t.tanh_(x);
  }
  return x;
}

Var Network::il_head(Tape& t, std::map<std::string, Var>& bound, Var latents) const {
  return mlp(t, bound, latents, "il", 1);
}

Network::RlVars Network::rl_heads(Tape& t, std::map<std::string, Var>& bound, Var latents) const {
  const int ad = cfg.action_dim();
  Var pi_out = mlp(t, bound, latents, "pi", 2);
  RlVars out;
  out.alpha = t.add_scalar(t.softplus_(t.cols(pi_out, 0, ad)), 1.0);
  out.beta = t.add_scalar(t.softplus_(t.cols(pi_out, ad, ad)), 1.0);
  out.value = mlp(t, bound, latents, "vf", 2);
  return out;
}

Eigen::VectorXd Network::il_action(const Observation& obs) const {
  Tape t(false);
  std::map<std::string, Var> bound;
  Var out = il_head(t, bound, encode(t, {&obs}, bound));
  return t.val(out).row(0).transpose();
}

Network::RlOut Network::rl_forward(const Observation& obs) const {
  Tape t(false);
  std::map<std::string, Var> bound;
  RlVars v = rl_heads(t, bound, encode(t, {&obs}, bound));
  RlOut out;
  out.alpha = t.val(v.alpha).row(0).transpose();
  out.beta = t.val(v.beta).row(0).transpose();
  out.value = t.val(v.value)(0, 0);
  return out;
}

Mat Network::features(const std::vector<const Observation*>& batch) const {
  Tape t(false);
  std::map<std::string, Var> bound;
  return t.val(encode(t, batch, bound));
}

double beta_mean(double alpha, double beta) { return alpha / (alpha + beta); }

static double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double beta_log_prob(double alpha, double beta, double x) {
  if (!(x > 0.0 && x < 1.0)) throw DomainError("beta log_prob outside (0,1)");
  return (alpha - 1.0) * std::log(x) + (beta - 1.0) * std::log1p(-x) - log_beta_fn(alpha, beta);
}

double beta_entropy(double alpha, double beta) {
  return log_beta_fn(alpha, beta) - (alpha - 1.0) * digamma(alpha) -
         (beta - 1.0) * digamma(beta) + (alpha + beta - 2.0) * digamma(alpha + beta);
}

double beta_sample(double alpha, double beta, Rng& rng) { return rng.beta(alpha, beta); }

Var beta_log_prob_graph(Tape& t, Var alpha, Var beta, const Mat& actions) {
  if (t.val(alpha).rows() != actions.rows() || t.val(alpha).cols() != actions.cols())
    throw ShapeMismatch("beta_log_prob_graph: actions shape");
  if ((actions.array() <= 0.0).any() || (actions.array() >= 1.0).any())
    throw DomainError("beta log_prob outside (0,1)");
  Mat lnx = actions.array().log().matrix();
  Mat ln1mx = (1.0 - actions.array()).log().matrix();
  Var dens = t.add(t.mul_constmat(t.add_scalar(alpha, -1.0), lnx),
                   t.mul_constmat(t.add_scalar(beta, -1.0), ln1mx));
  Var lnB = t.sub(t.add(t.lgamma_(alpha), t.lgamma_(beta)), t.lgamma_(t.add(alpha, beta)));
  return t.rowsum(t.sub(dens, lnB));
}

Var beta_entropy_graph(Tape& t, Var alpha, Var beta) {
  Var ab = t.add(alpha, beta);
  Var lnB = t.sub(t.add(t.lgamma_(alpha), t.lgamma_(beta)), t.lgamma_(ab));
  Var ent = t.add(t.sub(t.sub(lnB, t.mul(t.add_scalar(alpha, -1.0), t.digamma_(alpha))),
                        t.mul(t.add_scalar(beta, -1.0), t.digamma_(beta))),
                  t.mul(t.add_scalar(ab, -2.0), t.digamma_(ab)));
  return t.rowsum(ent);
}

BicycleAction map_action(const Eigen::Vector2d& u) {
  BicycleAction a;
  a.acc = kAccMin + (kAccMax - kAccMin) * u(0);
  a.steer = kSteerMin + (kSteerMax - kSteerMin) * u(1);
  return a;
}

Eigen::Vector2d unmap_action(const BicycleAction& a) {
  return {(a.acc - kAccMin) / (kAccMax - kAccMin), (a.steer - kSteerMin) / (kSteerMax - kSteerMin)};
}

static json config_to_json(const NetConfig& cfg) {
  json j;
  j["mode"] = cfg.mode;
  j["init_seed"] = cfg.init_seed;
  j["enc"] = {{"layers", cfg.enc.layers},
              {"heads", cfg.enc.heads},
              {"model_dim", cfg.enc.model_dim},
              {"ff_dim", cfg.enc.ff_dim},
              {"token_dim", cfg.enc.token_dim}};
  j["tok"] = {{"n_rt", cfg.tok.n_rt},
              {"n_rd", cfg.tok.n_rd},
              {"n_nego", cfg.tok.n_nego},
              {"fov_w", cfg.tok.fov_w},
              {"fov_h", cfg.tok.fov_h},
              {"road_edge_width", cfg.tok.road_edge_width},
              {"rdp_eps_road", cfg.tok.rdp_eps_road},
              {"rdp_eps_routing", cfg.tok.rdp_eps_routing},
              {"include_ego_token", cfg.tok.include_ego_token}};
  return j;
}

static NetConfig config_from_json(const json& j) {
  NetConfig cfg;
  try {
    cfg.mode = j.at("mode").get<std::string>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    const json& e = j.at("enc");
    cfg.enc.layers = e.at("layers").get<int>();
    cfg.enc.heads = e.at("heads").get<int>();
    cfg.enc.model_dim = e.at("model_dim").get<int>();
    cfg.enc.ff_dim = e.at("ff_dim").get<int>();
    cfg.enc.token_dim = e.at("token_dim").get<int>();
    const json& tk = j.at("tok");
    cfg.tok.n_rt = tk.at("n_rt").get<int>();
    cfg.tok.n_rd = tk.at("n_rd").get<int>();
    cfg.tok.n_nego = tk.at("n_nego").get<int>();
    cfg.tok.fov_w = tk.at("fov_w").get<double>();
    cfg.tok.fov_h = tk.at("fov_h").get<double>();
    cfg.tok.road_edge_width = tk.at("road_edge_width").get<double>();
    cfg.tok.rdp_eps_road = tk.at("rdp_eps_road").get<double>();
    cfg.tok.rdp_eps_routing = tk.at("rdp_eps_routing").get<double>();
    cfg.tok.include_ego_token = tk.at("include_ego_token").get<bool>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  return cfg;
}

static constexpr const char* kCkptMagic = "chauffeur-ckpt v1";

void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg,
                     const std::map<std::string, Mat>& params) {
  std::ostringstream header;
  header << kCkptMagic << "\n";
  header << "config " << config_to_json(cfg).dump() << "\n";
  size_t offset = 0;
  for (const auto& [name, m] : params) {  // std::map: sorted-name order
    header << "tensor " << name << " " << m.rows() << " " << m.cols() << " " << offset << "\n";
    offset += static_cast<size_t>(m.size());
  }
  header << "end_header\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInput("cannot open checkpoint for writing: " + path.string());
  std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, m] : params)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
  if (!out) throw Error("checkpoint write failed: " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("checkpoint not found: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string end_marker = "end_header\n";
  size_t end = buf.find(end_marker);
  if (end == std::string::npos) throw ParseError("checkpoint: missing end_header");
  std::istringstream header(buf.substr(0, end));
  size_t payload_start = end + end_marker.size();
  size_t payload_bytes = buf.size() - payload_start;
  if (payload_bytes % sizeof(double) != 0)
    throw ParseError("checkpoint: payload is not a whole number of float64 values");
  size_t payload_count = payload_bytes / sizeof(double);
  const char* payload = buf.data() + payload_start;

  std::string line;
  if (!std::getline(header, line)) throw ParseError("checkpoint: empty header");
  if (line != kCkptMagic) {
    if (line.rfind("chauffeur-ckpt", 0) == 0)
      throw VersionMismatch("unsupported checkpoint version: " + line);
    throw ParseError("not a checkpoint file: " + path.string());
  }

  bool have_config = false;
  NetConfig cfg;
  struct Entry { std::string name; int rows, cols; size_t offset; };
  std::vector<Entry> entries;
  while (std::getline(header, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "config") {
      std::string rest = line.substr(line.find(' ') + 1);
      json j = json::parse(rest, nullptr, false);
      if (j.is_discarded()) throw ParseError("checkpoint: bad config JSON");
      cfg = config_from_json(j);
      have_config = true;
    } else if (key == "tensor") {
      Entry e;
      if (!(ls >> e.name >> e.rows >> e.cols >> e.offset) || e.rows <= 0 || e.cols <= 0)
        throw ParseError("checkpoint: bad tensor line: " + line);
      entries.push_back(e);
    } else {
      throw ParseError("checkpoint: unknown header key: " + key);
    }
  }
  if (!have_config) throw ParseError("checkpoint: missing config line");

  std::map<std::string, Mat> params;
  for (const Entry& e : entries) {
    size_t n = static_cast<size_t>(e.rows) * static_cast<size_t>(e.cols);
    if (e.offset + n > payload_count)
      throw ParseError("checkpoint: tensor " + e.name + " exceeds payload");
    Mat m(e.rows, e.cols);
    std::memcpy(m.data(), payload + e.offset * sizeof(double), n * sizeof(double));
    if (!params.emplace(e.name, std::move(m)).second)
      throw ParseError("checkpoint: duplicate tensor " + e.name);
  }

  // The stored set must match the config-implied inventory exactly.
  std::vector<ParamSpec> specs = param_specs(cfg);
  if (specs.size() != params.size())
    throw ShapeMismatch("checkpoint: parameter count does not match config");
  for (const ParamSpec& s : specs) {
    auto it = params.find(s.name);
    if (it == params.end()) throw ShapeMismatch("checkpoint: missing tensor " + s.name);
    if (it->second.rows() != s.rows || it->second.cols() != s.cols)
      throw ShapeMismatch("checkpoint: shape mismatch for " + s.name);
  }

  Network net;
  net.cfg = cfg;
  net.params = std::move(params);
  return net;
}

}  // namespace chauffeur

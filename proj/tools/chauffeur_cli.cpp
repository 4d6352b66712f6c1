// chauffeur: batch experiment runner. Subcommands generate scenarios, dump
// observation datasets, train IL/PPO policies, pick SNE subsets, evaluate,
// sweep ego shifts, and render plots. Every command resolves its settings from
// defaults < config file < CHAUFFEUR_SEED < --set < dedicated flags, writes the
// resolved settings next to its outputs, and exits 0 on success, 2 on a
// configuration problem, 1 on a runtime failure. Artifacts are byte-identical
// across reruns with the same settings; wall-clock timestamps only ever land
// in the run.log sidecar.

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chauffeur/dynamics.hpp"
#include "chauffeur/errors.hpp"
#include "chauffeur/network.hpp"
#include "chauffeur/observation.hpp"
#include "chauffeur/robustness.hpp"
#include "chauffeur/runner.hpp"
#include "chauffeur/sampling.hpp"
#include "chauffeur/scenario.hpp"
#include "chauffeur/simulator.hpp"
#include "chauffeur/svg.hpp"
#include "chauffeur/training.hpp"

namespace fs = std::filesystem;
using namespace chauffeur;

namespace {

// Settings problems exit with 2, runtime failures with 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

long parse_long(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    long out = std::stol(v, &pos, 10);
    if (pos != v.size() || v.empty()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

int parse_int(const std::string& v, const std::string& key) {
  long out = parse_long(v, key);
  if (out < std::numeric_limits<int>::min() || out > std::numeric_limits<int>::max())
    throw ConfigError("key '" + key + "': value out of int range: '" + v + "'");
  return static_cast<int>(out);
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  if (v.find('-') != std::string::npos)
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos, 10);
    if (pos != v.size() || v.empty()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size() || v.empty() || !std::isfinite(out)) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a finite number, got '" + v + "'");
  }
}

// Per-command key/value settings with layered overrides. Every key must be
// declared up front; anything else in the config file or a --set is rejected.
class Settings {
 public:
  void declare(const std::string& key, const std::string& def) { defaults_[key] = def; }
  bool declared(const std::string& key) const { return defaults_.count(key) > 0; }

  void resolve(const std::string& config_file, const std::vector<std::string>& sets,
               const std::map<std::string, std::string>& flags) {
    values_ = defaults_;
    if (!config_file.empty()) {
      for (const auto& [k, v] : parse_config_file(config_file)) set_checked(k, v, config_file);
    }
    if (const char* env = std::getenv("CHAUFFEUR_SEED"); env && declared("seed"))
      values_["seed"] = env;
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_checked(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), "--set");
    }
    for (const auto& [k, v] : flags) values_[k] = v;  // keys come from declared options
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }
  std::string req(const std::string& key) const {
    const std::string& v = str(key);
    if (v.empty()) throw ConfigError("key '" + key + "' is required (flag --" + dashed(key) +
                                     " or a config-file entry)");
    return v;
  }
  int i(const std::string& key) const { return parse_int(str(key), key); }
  long i64(const std::string& key) const { return parse_long(str(key), key); }
  uint64_t u64(const std::string& key) const { return parse_u64(str(key), key); }
  double d(const std::string& key) const { return parse_double(str(key), key); }
  std::vector<double> dlist(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), key));
    if (out.empty()) throw ConfigError("key '" + key + "': expected at least one value");
    return out;
  }

  void write_resolved(const fs::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    for (const auto& [k, v] : values_) f << k << " = " << v << "\n";
  }

  nlohmann::json echo() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  static std::string dashed(std::string key) {
    for (char& c : key)
      if (c == '_') c = '-';
    return key;
  }

 private:
  std::map<std::string, std::string> parse_config_file(const std::string& path) const {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int ln = 0;
    while (std::getline(f, line)) {
      ++ln;
      if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(ln) + ": expected 'key = value'");
      std::string k = trim(line.substr(0, eq));
      if (k.empty()) throw ConfigError(path + ":" + std::to_string(ln) + ": empty key");
      if (kv.count(k)) throw ConfigError(path + ":" + std::to_string(ln) + ": duplicate key '" + k + "'");
      kv[k] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  void set_checked(const std::string& k, const std::string& v, const std::string& origin) {
    if (!declared(k)) {
      std::string known;
      for (const auto& [dk, _] : defaults_) known += (known.empty() ? "" : ", ") + dk;
      throw ConfigError(origin + ": unknown key '" + k + "' (known keys: " + known + ")");
    }
    values_[k] = v;
  }

  std::map<std::string, std::string> defaults_;
  std::map<std::string, std::string> values_;
};

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << body;
}

// Timestamps are confined to this sidecar so the result artifacts stay
// byte-reproducible. The log appends across runs.
void append_log(const fs::path& dir, const std::string& line) {
  char stamp[32];
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  std::ofstream f(dir / "run.log", std::ios::binary | std::ios::app);
  if (f) f << stamp << " " << line << "\n";
}

fs::path prepare_out(const Settings& st, const std::string& command) {
  fs::path out(st.req("out"));
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw Error("cannot create output directory: " + out.string());
  if (st.i("jobs") < 1) throw ConfigError("key 'jobs': must be >= 1");
  st.write_resolved(out / "config.resolved.txt");
  append_log(out, "begin " + command);
  return out;
}

std::vector<Scenario> load_scenarios_from_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw MissingInput("not a directory: " + dir);
  std::vector<fs::path> files = list_scenario_files(dir);
  if (files.empty()) throw MissingInput("no *.scn.json files under " + dir);
  std::vector<Scenario> out;
  out.reserve(files.size());
  for (const fs::path& f : files) out.push_back(load_scenario(f));
  return out;
}

AgentControl control_from(const std::string& v) {
  if (v == "non_reactive") return AgentControl::non_reactive;
  if (v == "reactive") return AgentControl::reactive;
  throw ConfigError("key 'mode': expected non_reactive or reactive, got '" + v + "'");
}

// NetworkPolicy keeps a pointer to the network, so the network lives on the
// heap where holder moves cannot relocate it.
struct PolicyHolder {
  std::unique_ptr<Network> net;
  std::unique_ptr<Policy> policy;
};

PolicyHolder make_policy(const std::string& ckpt) {
  PolicyHolder h;
  if (ckpt == "expert") {
    h.policy = std::make_unique<ExpertPolicy>(TransitionKind::bicycle);
  } else if (ckpt == "expert-waypoint") {
    h.policy = std::make_unique<ExpertPolicy>(TransitionKind::waypoint);
  } else {
    h.net = std::make_unique<Network>(load_checkpoint(ckpt));
    h.policy = std::make_unique<NetworkPolicy>(*h.net);
  }
  return h;
}

std::vector<Vec2> drive_positions(const Scenario& s, Policy& pol, AgentControl control) {
  Simulator sim(s, control);
  TokenizerConfig tok = pol.tokenizer();
  StaticTokenCache cache = preprocess_static(s, tok);
  pol.reset(s);
  std::vector<Vec2> out;
  auto ego_pos = [&] {
    const AgentState& e = sim.state().agents[static_cast<size_t>(s.ego_index)];
    return Vec2{e.x, e.y};
  };
  out.push_back(ego_pos());
  while (!sim.state().done) {
    Observation obs = tokenize(s, sim.state().agents, cache, tok);
    PolicyDecision d = pol.act(sim, obs);
    if (pol.kind() == TransitionKind::bicycle)
      sim.step(d.bicycle);
    else
      sim.step(d.waypoint);
    out.push_back(ego_pos());
  }
  return out;
}

std::string family_prefix(const std::string& id) { return id.substr(0, id.find('-')); }

std::vector<ScatterGroup> group_by_family(const std::vector<std::string>& ids, const Mat& pts) {
  std::vector<ScatterGroup> groups;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    std::string fam = family_prefix(ids[static_cast<size_t>(i)]);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const ScatterGroup& g) { return g.label == fam; });
    if (it == groups.end()) {
      groups.push_back({fam, {}});
      it = groups.end() - 1;
    }
    it->points.push_back({pts(i, 0), pts(i, 1)});
  }
  return groups;
}

double deg_of(double rad) { return rad * 180.0 / std::numbers::pi; }

double sweep_metric(const SweepCell& c, const std::string& m) {
  if (m == "arrival_rate") return c.report.arrival_rate;
  if (m == "offroad_rate") return c.report.offroad_rate;
  if (m == "collision_rate") return c.report.collision_rate;
  if (m == "mean_progress") return c.report.mean_progress;
  if (m == "applied_fraction") return c.applied_fraction;
  throw ConfigError("key 'metric': expected arrival_rate, offroad_rate, collision_rate, "
                    "mean_progress, or applied_fraction, got '" + m + "'");
}

std::vector<Series> sweep_series(const std::vector<SweepCell>& cells, const std::string& metric) {
  std::vector<double> yaws;
  for (const SweepCell& c : cells)
    if (std::find(yaws.begin(), yaws.end(), c.max_yaw) == yaws.end()) yaws.push_back(c.max_yaw);
  std::vector<Series> series;
  for (double yaw : yaws) {
    Series se;
    se.label = "max_yaw=" + format9(deg_of(yaw)) + " deg";
    for (const SweepCell& c : cells) {
      if (c.max_yaw != yaw) continue;
      se.x.push_back(c.max_xy);
      se.y.push_back(sweep_metric(c, metric));
    }
    series.push_back(std::move(se));
  }
  return series;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen(const Settings& st) {
  std::string family = st.str("family");
  Family fam;
  try {
    fam = family_from_name(family);
  } catch (const Error&) {
    throw ConfigError("key 'family': expected straight, curve, intersection, or parking, got '" +
                      family + "'");
  }
  int count = st.i("count");
  if (count < 1) throw ConfigError("key 'count': must be >= 1");
  int density = st.i("density");
  if (density < 0 || density > 127) throw ConfigError("key 'density': must be in [0, 127]");
  double curvature = st.d("curvature");
  uint64_t seed = st.u64("seed");
  fs::path out = prepare_out(st, "gen");

  std::vector<std::string> ids, files;
  std::vector<uint64_t> used, skipped;
  uint64_t s = seed;
  while (static_cast<int>(ids.size()) < count) {
    if (skipped.size() > 1000)
      throw GenerationFailed("gen: gave up after 1000 failed seeds starting at " +
                             std::to_string(seed));
    ScenarioFamilySpec spec{fam, density, curvature, s};
    Scenario sc;
    try {
      sc = generate_scenario(spec);
    } catch (const GenerationFailed&) {
      skipped.push_back(s++);
      continue;
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("gen: ") + e.what());
    }
    std::string fname = sc.id + ".scn.json";
    save_scenario(sc, out / fname);
    ids.push_back(sc.id);
    files.push_back(fname);
    used.push_back(s++);
  }

  nlohmann::json m;
  m["command"] = "gen";
  m["count"] = count;
  m["curvature"] = curvature;
  m["density"] = density;
  m["family"] = family;
  m["files"] = files;
  m["ids"] = ids;
  m["seed_start"] = seed;
  m["seeds"] = used;
  m["skipped_seeds"] = skipped;
  write_text(out / "manifest.json", m.dump(2) + "\n");
  append_log(out, "end gen status 0");
  std::cout << "gen: wrote " << ids.size() << " scenarios to " << out.string() << "\n";
  return 0;
}

int cmd_dump_obs(const Settings& st) {
  std::string mode = st.str("mode");
  if (mode != "bicycle" && mode != "waypoint")
    throw ConfigError("key 'mode': expected bicycle or waypoint, got '" + mode + "'");
  TransitionKind kind = mode == "bicycle" ? TransitionKind::bicycle : TransitionKind::waypoint;
  int limit = st.i("limit");
  if (limit < 0) throw ConfigError("key 'limit': must be >= 0");
  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  if (limit > 0 && static_cast<int>(scns.size()) > limit) scns.resize(static_cast<size_t>(limit));
  fs::path out = prepare_out(st, "dump-obs");

  TokenizerConfig tok;
  tok.include_ego_token = kind == TransitionKind::bicycle;
  int action_dim = kind == TransitionKind::bicycle ? 2 : 3;
  ObsDatasetWriter writer(out / "data.obs", tok.rows(), action_dim, mode);
  long records = 0;
  std::vector<AgentState> agents;
  for (const Scenario& s : scns) {
    StaticTokenCache cache = preprocess_static(s, tok);
    ControlFrequency f{s.frequency_hz};
    const std::vector<AgentState>& ego = s.agents[static_cast<size_t>(s.ego_index)].states;
    agents.resize(s.agents.size());
    for (int t = 0; t + 1 < s.horizon_steps; ++t) {
      for (size_t a = 0; a < s.agents.size(); ++a) agents[a] = s.agents[a].states[static_cast<size_t>(t)];
      Observation obs = tokenize(s, agents, cache, tok);
      if (kind == TransitionKind::bicycle) {
        BicycleAction a = clamp_action(infer_bicycle_action(ego[static_cast<size_t>(t)],
                                                            ego[static_cast<size_t>(t) + 1], f));
        const double act[2] = {a.acc, a.steer};
        writer.append(obs, act);
      } else {
        WaypointAction a = infer_waypoint_action(ego[static_cast<size_t>(t)],
                                                 ego[static_cast<size_t>(t) + 1]);
        const double act[3] = {a.dx, a.dy, a.dyaw};
        writer.append(obs, act);
      }
      ++records;
    }
  }

  nlohmann::json m;
  m["command"] = "dump-obs";
  m["action_dim"] = action_dim;
  m["mode"] = mode;
  m["records"] = records;
  m["rows"] = tok.rows();
  m["scenarios"] = scns.size();
  write_text(out / "manifest.json", m.dump(2) + "\n");
  append_log(out, "end dump-obs status 0");
  std::cout << "dump-obs: wrote " << records << " records to " << (out / "data.obs").string()
            << "\n";
  return 0;
}

int cmd_train_il(const Settings& st) {
  ILConfig cfg;
  cfg.lr = st.d("lr");
  cfg.epochs = st.i("epochs");
  cfg.batch_size = st.i("batch_size");
  cfg.w_acc = st.d("w_acc");
  cfg.w_steer = st.d("w_steer");
  cfg.w_x = st.d("w_x");
  cfg.w_y = st.d("w_y");
  cfg.w_yaw = st.d("w_yaw");
  cfg.seed = st.u64("seed");
  if (cfg.lr <= 0) throw ConfigError("key 'lr': must be > 0");
  if (cfg.epochs < 1) throw ConfigError("key 'epochs': must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("key 'batch_size': must be >= 1");

  ObsDataset ds = load_obs_dataset(st.req("data"));
  NetConfig nc;
  if (ds.mode == "bicycle")
    nc.mode = "il_bicycle";
  else if (ds.mode == "waypoint")
    nc.mode = "il_waypoint";
  else
    throw Error("dataset mode '" + ds.mode + "' is not trainable");
  nc.init_seed = st.u64("init_seed");
  nc.tok.include_ego_token = nc.mode == "il_bicycle";
  if (nc.tok.rows() != ds.rows)
    throw Error("dataset row count " + std::to_string(ds.rows) +
                " does not match the tokenizer (" + std::to_string(nc.tok.rows()) + ")");
  if (nc.action_dim() != ds.action_dim)
    throw Error("dataset action_dim " + std::to_string(ds.action_dim) + " does not match mode " +
                nc.mode);
  fs::path out = prepare_out(st, "train-il");

  ILResult res = train_il(ds, cfg, Network(nc));
  save_checkpoint(out / "il.ckpt", res.net.cfg, res.net.params);

  std::ostringstream csv;
  csv << "update,loss\n";
  for (size_t i = 0; i < res.update_losses.size(); ++i)
    csv << i << "," << format9(res.update_losses[i]) << "\n";
  write_text(out / "il_loss.csv", csv.str());

  std::ostringstream ecsv;
  ecsv << "epoch,mean_loss\n";
  for (size_t i = 0; i < res.epoch_means.size(); ++i)
    ecsv << i << "," << format9(res.epoch_means[i]) << "\n";
  write_text(out / "il_epochs.csv", ecsv.str());

  Series curve;
  curve.label = "mean train loss";
  for (size_t i = 0; i < res.epoch_means.size(); ++i) {
    curve.x.push_back(static_cast<double>(i));
    curve.y.push_back(res.epoch_means[i]);
  }
  write_line_chart(out / "il_loss.svg", "imitation loss", "epoch", "weighted L1", {curve});
  append_log(out, "end train-il status 0");
  std::cout << "train-il: " << res.update_losses.size() << " updates, final epoch loss "
            << format9(res.epoch_means.back()) << ", checkpoint " << (out / "il.ckpt").string()
            << "\n";
  return 0;
}

int cmd_train_ppo(const Settings& st) {
  PPOConfig cfg;
  cfg.lr = st.d("lr");
  cfg.gamma = st.d("gamma");
  cfg.lambda = st.d("lambda");
  cfg.clip = st.d("clip");
  cfg.w_ent = st.d("w_ent");
  cfg.w_value = st.d("w_value");
  cfg.batch_size = st.i("batch_size");
  cfg.epochs_per_wave = st.i("epochs_per_wave");
  cfg.max_grad_norm = st.d("max_grad_norm");
  cfg.total_timesteps = st.i64("total_steps");
  cfg.minibatch_size = st.i("minibatch_size");
  cfg.seed = st.u64("seed");
  cfg.control = control_from(st.str("mode"));
  if (cfg.total_timesteps < 1) throw ConfigError("key 'total_steps': must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("key 'batch_size': must be >= 1");
  if (cfg.minibatch_size < 1) throw ConfigError("key 'minibatch_size': must be >= 1");
  if (cfg.epochs_per_wave < 1) throw ConfigError("key 'epochs_per_wave': must be >= 1");

  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  std::optional<Network> warm;
  if (!st.str("warm_start").empty()) warm = load_checkpoint(st.str("warm_start"));
  fs::path out = prepare_out(st, "train-ppo");

  PPOResult res = train_ppo(scns, cfg, warm ? &*warm : nullptr);
  save_checkpoint(out / "ppo.ckpt", res.net.cfg, res.net.params);
  write_ppo_log_csv(out / "ppo_log.csv", res.log);

  std::ostringstream rcsv;
  rcsv << "wave,mean_reward\n";
  for (size_t i = 0; i < res.reward_curve.size(); ++i)
    rcsv << i << "," << format9(res.reward_curve[i]) << "\n";
  write_text(out / "reward_curve.csv", rcsv.str());

  Series curve;
  curve.label = "mean episode reward";
  for (size_t i = 0; i < res.reward_curve.size(); ++i) {
    if (!std::isfinite(res.reward_curve[i])) continue;
    curve.x.push_back(static_cast<double>(i));
    curve.y.push_back(res.reward_curve[i]);
  }
  if (!curve.x.empty())
    write_line_chart(out / "ppo_reward.svg", "ppo reward curve", "wave", "mean episode reward",
                     {curve});
  append_log(out, "end train-ppo status 0");
  std::cout << "train-ppo: " << res.log.size() << " waves, checkpoint "
            << (out / "ppo.ckpt").string() << "\n";
  return 0;
}

int cmd_sne_sample(const Settings& st) {
  SneConfig cfg;
  cfg.K = st.i("k");
  cfg.perplexity = st.d("perplexity");
  cfg.iterations = st.i("iterations");
  cfg.learning_rate = st.d("learning_rate");
  cfg.pre_subset_size = st.i("pre_subset");
  cfg.kmeans_restarts = st.i("kmeans_restarts");
  cfg.seed = st.u64("seed");
  cfg.feature_agg = st.str("feature_agg");
  if (cfg.K < 1) throw ConfigError("key 'k': must be >= 1");
  if (cfg.perplexity <= 0) throw ConfigError("key 'perplexity': must be > 0");
  if (cfg.iterations < 1) throw ConfigError("key 'iterations': must be >= 1");
  if (cfg.kmeans_restarts < 1) throw ConfigError("key 'kmeans_restarts': must be >= 1");
  if (cfg.pre_subset_size < 0) throw ConfigError("key 'pre_subset': must be >= 0");
  if (cfg.feature_agg != "t0" && cfg.feature_agg != "mean")
    throw ConfigError("key 'feature_agg': expected t0 or mean, got '" + cfg.feature_agg + "'");

  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  Network net = load_checkpoint(st.req("ckpt"));
  fs::path out = prepare_out(st, "sne-sample");

  SneSampleResult r = sne_sample(scns, net, cfg);
  std::vector<std::string> pre_ids;
  pre_ids.reserve(r.pre_indices.size());
  for (int i : r.pre_indices) pre_ids.push_back(scns[static_cast<size_t>(i)].id);
  write_embedding_csv(out / "embedding.csv", r.embedding, pre_ids);
  write_subset_json(out / "subset.json", cfg.seed, cfg.K, r.ids, "embedding.csv");
  append_log(out, "end sne-sample status 0");
  std::cout << "sne-sample: chose " << r.ids.size() << " of " << pre_ids.size()
            << " pre-subset scenarios, wrote " << (out / "subset.json").string() << "\n";
  return 0;
}

nlohmann::json episode_json(const EpisodeRecord& rec) {
  nlohmann::json e;
  e["arrived"] = rec.metrics.arrived;
  e["collision"] = rec.metrics.collision;
  e["episode"] = rec.episode;
  e["offroad"] = rec.metrics.offroad;
  e["progress_ratio"] = rec.metrics.progress_ratio;
  e["scenario"] = rec.scenario_id;
  e["steps"] = rec.steps;
  e["total_reward"] = rec.total_reward;
  e["wrongway"] = rec.metrics.wrongway;
  return e;
}

int cmd_eval(const Settings& st) {
  int episodes = st.i("episodes");
  if (episodes < 1) throw ConfigError("key 'episodes': must be >= 1");
  RunConfig rc;
  rc.control = control_from(st.str("mode"));
  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  PolicyHolder ph = make_policy(st.req("ckpt"));
  fs::path out = prepare_out(st, "eval");

  EvalResult r = evaluate_policy(scns, *ph.policy, episodes, rc);
  write_episode_csv(r.episodes, out / "episodes.csv");

  nlohmann::json rep;
  rep["AR"] = r.report.arrival_rate;
  rep["OR"] = r.report.offroad_rate;
  rep["CR"] = r.report.collision_rate;
  rep["PR"] = r.report.mean_progress;
  rep["n_episodes"] = r.report.n_episodes;
  rep["config_echo"] = st.echo();
  nlohmann::json per = nlohmann::json::array();
  for (const EpisodeRecord& rec : r.episodes) per.push_back(episode_json(rec));
  rep["per_episode"] = per;
  write_text(out / "report.json", rep.dump(2) + "\n");
  append_log(out, "end eval status 0");
  std::cout << "eval: n=" << r.report.n_episodes << " AR=" << format9(r.report.arrival_rate)
            << " OR=" << format9(r.report.offroad_rate)
            << " CR=" << format9(r.report.collision_rate)
            << " PR=" << format9(r.report.mean_progress) << "\n";
  return 0;
}

int cmd_shift_eval(const Settings& st) {
  ShiftGrid grid;
  grid.xy = st.dlist("grid_xy");
  for (double deg : st.dlist("grid_yaw")) {
    if (deg < 0) throw ConfigError("key 'grid_yaw': values must be >= 0 (degrees)");
    grid.yaw.push_back(deg * std::numbers::pi / 180.0);
  }
  for (double xy : grid.xy)
    if (xy < 0) throw ConfigError("key 'grid_xy': values must be >= 0 (meters)");
  int episodes = st.i("episodes_per_cell");
  if (episodes < 1) throw ConfigError("key 'episodes_per_cell': must be >= 1");
  ShiftConfig base;
  try {
    base.mode = shift_mode_from_string(st.str("shift_mode"));
  } catch (const Error&) {
    throw ConfigError("key 'shift_mode': expected axis, yaw, or both, got '" +
                      st.str("shift_mode") + "'");
  }
  base.sigma_frac = st.d("sigma_frac");
  base.max_retries = st.i("max_retries");
  base.seed = st.u64("seed");
  if (base.sigma_frac <= 0) throw ConfigError("key 'sigma_frac': must be > 0");
  if (base.max_retries < 0) throw ConfigError("key 'max_retries': must be >= 0");
  RunConfig run;
  run.control = control_from(st.str("mode"));

  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  PolicyHolder ph = make_policy(st.req("ckpt"));
  fs::path out = prepare_out(st, "shift-eval");

  std::vector<SweepCell> cells = shift_sweep(scns, *ph.policy, grid, episodes, base, run);
  write_sweep_csv(cells, out / "sweep.csv");

  const std::pair<const char*, const char*> charts[] = {
      {"arrival_rate", "arrival rate [%]"},
      {"offroad_rate", "offroad rate [%]"},
      {"collision_rate", "collision rate [%]"},
      {"mean_progress", "mean progress [%]"},
  };
  for (const auto& [metric, axis] : charts)
    write_line_chart(out / ("sweep_" + std::string(metric) + ".svg"),
                     "ego shift sweep - " + std::string(metric), "max_xy [m]", axis,
                     sweep_series(cells, metric));
  append_log(out, "end shift-eval status 0");
  std::cout << "shift-eval: " << cells.size() << " cells, " << episodes
            << " episodes each, wrote " << (out / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_plot(const Settings& st) {
  std::string kind = st.req("kind");
  if (kind != "sweep" && kind != "embedding" && kind != "trajectory")
    throw ConfigError("key 'kind': expected sweep, embedding, or trajectory, got '" + kind + "'");
  std::string input = st.req("input");
  fs::path out = prepare_out(st, "plot");
  fs::path svg = out / "plot.svg";

  if (kind == "sweep") {
    std::string metric = st.str("metric");
    std::vector<SweepCell> cells = read_sweep_csv(input);
    write_line_chart(svg, "ego shift sweep - " + metric, "max_xy [m]", metric,
                     sweep_series(cells, metric));
  } else if (kind == "embedding") {
    NamedPoints np = read_embedding_csv(input);
    std::vector<ScatterGroup> groups = group_by_family(np.ids, np.points);
    std::vector<Vec2> highlights;
    if (!st.str("subset").empty()) {
      std::ifstream f(st.str("subset"));
      if (!f) throw MissingInput("cannot open subset file: " + st.str("subset"));
      nlohmann::json j;
      try {
        f >> j;
      } catch (const std::exception& e) {
        throw ParseError("subset file: " + std::string(e.what()));
      }
      if (!j.contains("ids") || !j["ids"].is_array())
        throw ParseError("subset file: missing 'ids' array");
      for (const auto& jid : j["ids"]) {
        std::string id = jid.get<std::string>();
        auto it = std::find(np.ids.begin(), np.ids.end(), id);
        if (it == np.ids.end())
          throw Error("subset id '" + id + "' is not present in the embedding");
        Eigen::Index row = it - np.ids.begin();
        highlights.push_back({np.points(row, 0), np.points(row, 1)});
      }
    }
    write_scatter_chart(svg, "scenario embedding", groups, highlights);
  } else {
    Scenario s = load_scenario(input);
    PolicyHolder ph = make_policy(st.str("ckpt"));
    std::vector<Vec2> driven = drive_positions(s, *ph.policy, control_from(st.str("mode")));
    write_trajectory_svg(svg, s, driven);
  }
  append_log(out, "end plot status 0");
  std::cout << "plot: wrote " << svg.string() << "\n";
  return 0;
}

int cmd_feature_viz(const Settings& st) {
  SneConfig cfg;
  cfg.perplexity = st.d("perplexity");
  cfg.iterations = st.i("iterations");
  cfg.learning_rate = st.d("learning_rate");
  cfg.seed = st.u64("seed");
  cfg.feature_agg = st.str("feature_agg");
  if (cfg.perplexity <= 0) throw ConfigError("key 'perplexity': must be > 0");
  if (cfg.iterations < 1) throw ConfigError("key 'iterations': must be >= 1");
  if (cfg.feature_agg != "t0" && cfg.feature_agg != "mean")
    throw ConfigError("key 'feature_agg': expected t0 or mean, got '" + cfg.feature_agg + "'");

  std::vector<Scenario> scns = load_scenarios_from_dir(st.req("scenarios"));
  Network net = load_checkpoint(st.req("ckpt"));
  fs::path out = prepare_out(st, "feature-viz");

  FeatureSet feats = extract_features(scns, net, cfg.feature_agg);
  Embedding2D emb = tsne(feats.features, cfg);
  write_embedding_csv(out / "feature_embedding.csv", emb, feats.scenario_ids);
  write_scatter_chart(out / "features.svg", "scenario features (t-SNE)",
                      group_by_family(feats.scenario_ids, emb.points));
  append_log(out, "end feature-viz status 0");
  std::cout << "feature-viz: embedded " << feats.scenario_ids.size() << " scenarios, wrote "
            << (out / "features.svg").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

struct KeyDef {
  const char* key;
  const char* def;
  const char* help;
};

struct Command {
  const char* name;
  const char* help;
  std::vector<KeyDef> keys;
  int (*run)(const Settings&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"gen", "generate scenarios into a directory (plus manifest.json)",
       {{"out", "", "output directory"},
        {"family", "straight", "straight | curve | intersection | parking"},
        {"count", "1", "number of scenarios to produce"},
        {"density", "4", "non-ego agent count"},
        {"curvature", "0", "route curvature 1/m; 0 samples the family default"},
        {"seed", "1", "first generation seed; failed seeds are skipped"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_gen},
      {"dump-obs", "tokenize logged expert trajectories into a binary dataset",
       {{"out", "", "output directory"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"mode", "bicycle", "action space: bicycle | waypoint"},
        {"limit", "0", "use only the first N scenarios (0 = all)"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_dump_obs},
      {"train-il", "behavior-clone a policy from a dumped dataset",
       {{"out", "", "output directory"},
        {"data", "", "dataset file from dump-obs"},
        {"epochs", "5", "passes over the dataset"},
        {"lr", "0.0001", "Adam learning rate"},
        {"batch_size", "6", "minibatch size"},
        {"w_acc", "1", "loss weight: acceleration"},
        {"w_steer", "5", "loss weight: steering"},
        {"w_x", "1", "loss weight: waypoint dx"},
        {"w_y", "50", "loss weight: waypoint dy"},
        {"w_yaw", "50", "loss weight: waypoint dyaw"},
        {"init_seed", "1", "network initialization seed"},
        {"seed", "1", "shuffle seed"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_train_il},
      {"train-ppo", "train an RL policy with shaped rewards",
       {{"out", "", "output directory"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"total_steps", "100000", "environment steps to collect"},
        {"batch_size", "2500", "rollout steps per wave"},
        {"minibatch_size", "64", "per-update minibatch"},
        {"epochs_per_wave", "1", "optimization passes per wave"},
        {"lr", "0.0003", "Adam learning rate"},
        {"gamma", "0.99", "discount"},
        {"lambda", "0.9", "GAE lambda"},
        {"clip", "0.2", "PPO clip range"},
        {"w_ent", "1", "entropy bonus weight"},
        {"w_value", "0.01", "value loss weight"},
        {"max_grad_norm", "0.5", "gradient clip"},
        {"mode", "non_reactive", "background traffic: non_reactive | reactive"},
        {"warm_start", "", "optional checkpoint whose matching params seed the net"},
        {"seed", "1", "training seed"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_train_ppo},
      {"sne-sample", "pick a K-scenario subset via embedding + clustering",
       {{"out", "", "output directory"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"ckpt", "", "feature-extractor checkpoint"},
        {"k", "4", "subset size"},
        {"perplexity", "30", "t-SNE perplexity"},
        {"iterations", "1000", "t-SNE iterations"},
        {"learning_rate", "200", "t-SNE learning rate"},
        {"pre_subset", "0", "pre-subset size (0 derives from k)"},
        {"kmeans_restarts", "8", "k-means restarts"},
        {"feature_agg", "t0", "latent aggregation: t0 | mean"},
        {"seed", "1", "sampling seed"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_sne_sample},
      {"eval", "closed-loop benchmark of a checkpoint over scenarios",
       {{"out", "", "output directory"},
        {"ckpt", "", "checkpoint path, or 'expert' / 'expert-waypoint'"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"episodes", "1", "episodes per scenario"},
        {"mode", "non_reactive", "background traffic: non_reactive | reactive"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_eval},
      {"shift-eval", "robustness sweep over initial ego pose shifts",
       {{"out", "", "output directory"},
        {"ckpt", "", "checkpoint path, or 'expert' / 'expert-waypoint'"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"grid_xy", "0,1,2,3,4,5", "comma list of max |dx|,|dy| bounds in meters"},
        {"grid_yaw", "0,4,8,15,20", "comma list of max |dyaw| bounds in degrees"},
        {"episodes_per_cell", "8", "episodes evaluated in every grid cell"},
        {"shift_mode", "both", "perturbed components: axis | yaw | both"},
        {"sigma_frac", "0.5", "sigma as a fraction of the bound"},
        {"max_retries", "10", "sampling attempts before falling back to no shift"},
        {"mode", "non_reactive", "background traffic: non_reactive | reactive"},
        {"seed", "1", "shift sampling seed"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_shift_eval},
      {"plot", "render a sweep CSV, embedding CSV, or scenario trajectory to SVG",
       {{"out", "", "output directory (receives plot.svg)"},
        {"kind", "", "sweep | embedding | trajectory"},
        {"input", "", "sweep.csv, embedding.csv, or a *.scn.json file"},
        {"metric", "arrival_rate",
         "sweep metric: arrival_rate | offroad_rate | collision_rate | mean_progress | "
         "applied_fraction"},
        {"subset", "", "optional subset.json whose ids get highlighted (embedding)"},
        {"ckpt", "expert", "driving policy for trajectory plots"},
        {"mode", "non_reactive", "background traffic: non_reactive | reactive"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_plot},
      {"feature-viz", "t-SNE scatter of encoder features for a scenario set",
       {{"out", "", "output directory"},
        {"scenarios", "", "directory of *.scn.json files"},
        {"ckpt", "", "feature-extractor checkpoint"},
        {"perplexity", "30", "t-SNE perplexity"},
        {"iterations", "1000", "t-SNE iterations"},
        {"learning_rate", "200", "t-SNE learning rate"},
        {"feature_agg", "t0", "latent aggregation: t0 | mean"},
        {"seed", "1", "t-SNE seed"},
        {"jobs", "1", "worker parallelism cap"}},
       cmd_feature_viz},
  };
  return cmds;
}

struct SubState {
  const Command* cmd = nullptr;
  Settings settings;
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

int execute(SubState& s) {
  try {
    s.settings.resolve(s.config_file, s.sets, s.flags);
    return s.cmd->run(s.settings);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chauffeur: closed-loop driving-planner workbench"};
  app.require_subcommand(1);
  int exit_code = 0;

  std::vector<std::unique_ptr<SubState>> states;
  for (const Command& c : commands()) {
    auto state = std::make_unique<SubState>();
    state->cmd = &c;
    SubState* sp = state.get();
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", sp->config_file, "file of 'key = value' lines (# comments)");
    sub->add_option("--set", sp->sets, "override one key, as key=value (repeatable)");
    for (const KeyDef& k : c.keys) {
      sp->settings.declare(k.key, k.def);
      std::string key = k.key;
      sub->add_option_function<std::string>(
          "--" + Settings::dashed(key),
          [sp, key](const std::string& v) { sp->flags[key] = v; }, k.help);
    }
    sub->callback([sp, &exit_code] { exit_code = execute(*sp); });
    states.push_back(std::move(state));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return exit_code;
}

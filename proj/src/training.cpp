#include "chauffeur/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "chauffeur/errors.hpp"
#include "chauffeur/rng.hpp"

namespace chauffeur {

namespace {

// Deterministic Fisher-Yates driven by the workbench RNG.
std::vector<int> shuffled_indices(int n, uint64_t seed) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.next() % static_cast<uint64_t>(i + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

std::map<std::string, Mat> grads_from(const Tape& t, const std::map<std::string, Var>& bound) {
  std::map<std::string, Mat> g;
  for (const auto& [name, var] : bound) g.emplace(name, t.grad(var));
  return g;
}

}  // namespace

std::vector<double> il_weights(const ILConfig& cfg, const std::string& mode) {
  if (mode == "il_bicycle" || mode == "bicycle") return {cfg.w_acc, cfg.w_steer};
  if (mode == "il_waypoint" || mode == "waypoint") return {cfg.w_x, cfg.w_y, cfg.w_yaw};
  throw ValidationError("il_weights: unknown mode " + mode);
}

ILLoss il_loss(const Mat& pred, const Mat& gt, const ILConfig& cfg, const std::string& mode) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeMismatch("il_loss: pred/gt shapes differ");
  std::vector<double> w = il_weights(cfg, mode);
  if (static_cast<int>(w.size()) != pred.cols())
    throw ShapeMismatch("il_loss: action dim does not match mode");
  ILLoss out;
  out.per_term.resize(w.size());
  for (int j = 0; j < pred.cols(); ++j) {
    double mean_abs = (pred.col(j) - gt.col(j)).cwiseAbs().mean();
    out.per_term[static_cast<size_t>(j)] = mean_abs;
    out.total += w[static_cast<size_t>(j)] * mean_abs;
  }
  return out;
}

Var il_loss_graph(Tape& t, Var pred, const Mat& gt, const ILConfig& cfg,
                  const std::string& mode) {
  std::vector<double> w = il_weights(cfg, mode);
  if (t.val(pred).rows() != gt.rows() || t.val(pred).cols() != gt.cols())
    throw ShapeMismatch("il_loss_graph: pred/gt shapes differ");
  if (static_cast<int>(w.size()) != gt.cols())
    throw ShapeMismatch("il_loss_graph: action dim does not match mode");
  Mat wm(gt.rows(), gt.cols());
  for (int j = 0; j < gt.cols(); ++j) wm.col(j).setConstant(w[static_cast<size_t>(j)]);
  Var abs_err = t.abs_(t.sub(pred, t.constant(gt)));
  return t.mean_all(t.rowsum(t.mul_constmat(abs_err, wm)));
}

ILResult train_il(const ObsDataset& data, const ILConfig& cfg, Network init) {
  if (data.count == 0) throw EmptyDataset("train_il: dataset is empty");
  if (init.cfg.tok.rows() != data.rows)
    throw ShapeMismatch("train_il: dataset rows do not match the network tokenizer");
  if (init.cfg.action_dim() != data.action_dim)
    throw ShapeMismatch("train_il: dataset action dim does not match the network mode");

  ILResult out{std::move(init), {}, {}};
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState st;

  const int n = data.count;
  const int n_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(n, mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    double epoch_sum = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      int lo = b * cfg.batch_size;
      int hi = std::min(n, lo + cfg.batch_size);
      int m = hi - lo;
      std::vector<Observation> obs(static_cast<size_t>(m));
      std::vector<const Observation*> ptrs(static_cast<size_t>(m));
      Mat gt(m, data.action_dim);
      for (int i = 0; i < m; ++i) {
        int src = order[static_cast<size_t>(lo + i)];
        obs[static_cast<size_t>(i)] = data.observation(src);
        ptrs[static_cast<size_t>(i)] = &obs[static_cast<size_t>(i)];
        std::span<const double> a = data.action(src);
        for (int j = 0; j < data.action_dim; ++j) gt(i, j) = a[static_cast<size_t>(j)];
      }
      Tape t;
      std::map<std::string, Var> bound;
      Var pred = out.net.il_head(t, bound, out.net.encode(t, ptrs, bound));
      Var loss = il_loss_graph(t, pred, gt, cfg, out.net.cfg.mode);
      t.backward(loss);
      auto grads = grads_from(t, bound);
      adam_step(out.net.params, grads, st, ac);
      double lv = t.val(loss)(0, 0);
      out.update_losses.push_back(lv);
      epoch_sum += lv;
    }
    out.epoch_means.push_back(epoch_sum / n_batches);
  }
  return out;
}

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns) {
  size_t n = rewards.size();
  check(values.size() == n && dones.size() == n, "gae: length mismatch");
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double acc = 0.0;
  for (size_t i = n; i-- > 0;) {
    double not_done = dones[i] ? 0.0 : 1.0;
    double v_next = (i + 1 < n) ? values[i + 1] : bootstrap;
    double delta = rewards[i] + gamma * v_next * not_done - values[i];
    acc = delta + gamma * lambda * not_done * acc;
    advantages[i] = acc;
    returns[i] = acc + values[i];
  }
}

int RolloutBuffer::total_steps() const {
  int n = 0;
  for (const ScenarioStream& s : streams) n += static_cast<int>(s.steps.size());
  return n;
}

RolloutWorkers::RolloutWorkers(std::vector<Scenario> scenarios, const PPOConfig& cfg,
                               const TokenizerConfig& tok)
    : reward_(cfg.reward), control_(cfg.control), tok_(tok) {
  if (scenarios.empty()) throw EmptyDataset("rollouts need at least one scenario");
  workers_.resize(scenarios.size());
  for (size_t i = 0; i < scenarios.size(); ++i) {
    Worker& w = workers_[i];
    w.scenario = std::move(scenarios[i]);
    w.cache = preprocess_static(w.scenario, tok_);
    w.rng = Rng(mix_seed(cfg.seed, i));
    reset_worker(w);
  }
}

void RolloutWorkers::reset_worker(Worker& w) {
  w.sim.emplace(w.scenario, control_, std::nullopt, reward_);
  w.obs = tokenize(w.scenario, w.sim->state().agents, w.cache, tok_);
  w.episode_reward = 0.0;
}

RolloutBuffer RolloutWorkers::collect(const Network& net, int steps_per_wave) {
  RolloutBuffer buf;
  buf.streams.resize(workers_.size());
  for (size_t wi = 0; wi < workers_.size(); ++wi) {
    Worker& w = workers_[wi];
    ScenarioStream& stream = buf.streams[wi];
    stream.steps.reserve(static_cast<size_t>(steps_per_wave));
    for (int s = 0; s < steps_per_wave; ++s) {
      Network::RlOut o = net.rl_forward(w.obs);
      RolloutStep rs;
      rs.obs = w.obs;
      double lp = 0.0;
      for (int j = 0; j < 2; ++j) {
        double u = beta_sample(o.alpha(j), o.beta(j), w.rng);
        u = std::clamp(u, 1e-6, 1.0 - 1e-6);
        rs.u(j) = u;
        lp += beta_log_prob(o.alpha(j), o.beta(j), u);
      }
      rs.log_prob = lp;
      rs.value = o.value;
      RewardBreakdown rb = w.sim->step(map_action(rs.u));
      rs.reward = rb.total;
      rs.done = w.sim->state().done ? 1 : 0;
      w.episode_reward += rb.total;
      if (rs.done) {
        buf.completed_episode_rewards.push_back(w.episode_reward);
        reset_worker(w);
      } else {
        w.obs = tokenize(w.scenario, w.sim->state().agents, w.cache, tok_);
      }
      stream.steps.push_back(std::move(rs));
    }
    stream.bootstrap_value =
        stream.steps.back().done ? 0.0 : net.rl_forward(w.obs).value;
  }
  return buf;
}

double ppo_policy_term(const std::vector<double>& ratio, const std::vector<double>& adv,
                       double clip) {
  check(ratio.size() == adv.size() && !ratio.empty(), "ppo_policy_term: sizes");
  double acc = 0.0;
  for (size_t i = 0; i < ratio.size(); ++i) {
    double clipped = std::clamp(ratio[i], 1.0 - clip, 1.0 + clip);
    acc += std::min(ratio[i] * adv[i], clipped * adv[i]);
  }
  return -acc / static_cast<double>(ratio.size());
}

Var ppo_loss_graph(Tape& t, Var alpha, Var beta, Var value, const Mat& actions_u,
                   const Eigen::VectorXd& old_log_prob, const Eigen::VectorXd& advantages,
                   const Eigen::VectorXd& returns, const PPOConfig& cfg, PpoLossParts* parts) {
  const auto n = actions_u.rows();
  if (old_log_prob.size() != n || advantages.size() != n || returns.size() != n)
    throw ShapeMismatch("ppo_loss_graph: per-step vectors disagree");

  Var new_lp = beta_log_prob_graph(t, alpha, beta, actions_u);
  Var ratio = t.exp_(t.sub(new_lp, t.constant(old_log_prob)));
  Mat adv = advantages;
  Var surr = t.minimum(t.mul_constmat(ratio, adv),
                       t.mul_constmat(t.clamp_(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  Var policy = t.scale(t.mean_all(surr), -1.0);

  Var vdiff = t.sub(value, t.constant(returns));
  Var vloss = t.mean_all(t.mul(vdiff, vdiff));

  Var ent_term = t.scale(t.mean_all(beta_entropy_graph(t, alpha, beta)), -1.0);

  Var total = t.add(policy, t.add(t.scale(vloss, cfg.w_value), t.scale(ent_term, cfg.w_ent)));
  if (parts) {
    parts->policy = t.val(policy)(0, 0);
    parts->value = t.val(vloss)(0, 0);
    parts->entropy = t.val(ent_term)(0, 0);
    parts->total = t.val(total)(0, 0);
  }
  return total;
}

PPOResult train_ppo(const std::vector<Scenario>& scenarios, const PPOConfig& cfg,
                    const Network* warm_start) {
  if (scenarios.empty()) throw EmptyDataset("train_ppo: no scenarios");
  NetConfig ncfg;
  ncfg.mode = "rl";
  ncfg.init_seed = cfg.seed;
  PPOResult out{Network(ncfg), {}, {}};
  if (warm_start) {
    for (auto& [name, m] : out.net.params) {
      auto it = warm_start->params.find(name);
      if (it != warm_start->params.end() && it->second.rows() == m.rows() &&
          it->second.cols() == m.cols())
        m = it->second;
    }
  }
  if (cfg.total_timesteps == 0) return out;

  const int K = static_cast<int>(scenarios.size());
  const int spw = std::max(1, cfg.batch_size / K);
  const long wave_steps = static_cast<long>(spw) * K;
  const long waves = (cfg.total_timesteps + wave_steps - 1) / wave_steps;

  RolloutWorkers workers(scenarios, cfg, ncfg.tok);
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.max_grad_norm = cfg.max_grad_norm;
  AdamState st;

  double last_mean_reward = 0.0;
  for (long wave = 0; wave < waves; ++wave) {
    RolloutBuffer buf = workers.collect(out.net, spw);

    // Flatten streams with per-stream GAE.
    std::vector<const Observation*> all_obs;
    std::vector<Eigen::Vector2d> all_u;
    std::vector<double> all_old_lp, all_adv, all_ret;
    for (const ScenarioStream& stream : buf.streams) {
      std::vector<double> r, v;
      std::vector<uint8_t> d;
      for (const RolloutStep& s : stream.steps) {
        r.push_back(s.reward);
        v.push_back(s.value);
        d.push_back(s.done);
      }
      std::vector<double> adv, ret;
      gae(r, v, d, stream.bootstrap_value, cfg.gamma, cfg.lambda, adv, ret);
      for (size_t i = 0; i < stream.steps.size(); ++i) {
        all_obs.push_back(&stream.steps[i].obs);
        all_u.push_back(stream.steps[i].u);
        all_old_lp.push_back(stream.steps[i].log_prob);
        all_adv.push_back(adv[i]);
        all_ret.push_back(ret[i]);
      }
    }
    const int total = static_cast<int>(all_obs.size());

    if (!buf.completed_episode_rewards.empty()) {
      double s = std::accumulate(buf.completed_episode_rewards.begin(),
                                 buf.completed_episode_rewards.end(), 0.0);
      last_mean_reward = s / static_cast<double>(buf.completed_episode_rewards.size());
    }
    out.reward_curve.push_back(last_mean_reward);

    PpoLossParts sums;
    double gnorm_sum = 0.0;
    int n_updates = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_wave; ++epoch) {
      std::vector<int> order = shuffled_indices(
          total, mix_seed(cfg.seed, static_cast<uint64_t>(wave) * 131 + epoch + 1));
      for (int lo = 0; lo < total; lo += cfg.minibatch_size) {
        int hi = std::min(total, lo + cfg.minibatch_size);
        int m = hi - lo;
        std::vector<const Observation*> mb_obs(static_cast<size_t>(m));
        Mat u(m, 2);
        Eigen::VectorXd old_lp(m), adv(m), ret(m);
        for (int i = 0; i < m; ++i) {
          int src = order[static_cast<size_t>(lo + i)];
          mb_obs[static_cast<size_t>(i)] = all_obs[static_cast<size_t>(src)];
          u.row(i) = all_u[static_cast<size_t>(src)].transpose();
          old_lp(i) = all_old_lp[static_cast<size_t>(src)];
          adv(i) = all_adv[static_cast<size_t>(src)];
          ret(i) = all_ret[static_cast<size_t>(src)];
        }
        double mean = adv.mean();
        double sd = std::sqrt((adv.array() - mean).square().mean());
        adv = ((adv.array() - mean) / (sd + 1e-8)).matrix();

        Tape t;
        std::map<std::string, Var> bound;
        Network::RlVars rv = out.net.rl_heads(t, bound, out.net.encode(t, mb_obs, bound));
        PpoLossParts parts;
        Var loss = ppo_loss_graph(t, rv.alpha, rv.beta, rv.value, u, old_lp, adv, ret, cfg,
                                  &parts);
        t.backward(loss);
        auto grads = grads_from(t, bound);
        gnorm_sum += adam_step(out.net.params, grads, st, ac);
        sums.policy += parts.policy;
        sums.value += parts.value;
        sums.entropy += parts.entropy;
        ++n_updates;
      }
    }

    PPOLogRow row;
    row.wave = static_cast<int>(wave);
    row.mean_reward = last_mean_reward;
    row.policy = sums.policy / n_updates;
    row.value = sums.value / n_updates;
    row.entropy = sums.entropy / n_updates;
    row.grad_norm = gnorm_sum / n_updates;
    out.log.push_back(row);
  }
  return out;
}

void write_ppo_log_csv(const std::filesystem::path& path, const std::vector<PPOLogRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInput("cannot open log for writing: " + path.string());
  out << "wave,mean_reward,policy_loss,value_loss,entropy_loss,grad_norm\n";
  for (const PPOLogRow& r : rows)
    out << r.wave << "," << format9(r.mean_reward) << "," << format9(r.policy) << ","
        << format9(r.value) << "," << format9(r.entropy) << "," << format9(r.grad_norm) << "\n";
}

PolicyDecision NetworkPolicy::act(const Simulator&, const Observation& obs) {
  PolicyDecision d;
  if (net_->cfg.mode == "rl") {
    Network::RlOut o = net_->rl_forward(obs);
    Eigen::Vector2d u{beta_mean(o.alpha(0), o.beta(0)), beta_mean(o.alpha(1), o.beta(1))};
    d.bicycle = map_action(u);
  } else if (net_->cfg.mode == "il_bicycle") {
    Eigen::VectorXd a = net_->il_action(obs);
    d.bicycle = clamp_action({a(0), a(1)});
  } else {
    Eigen::VectorXd a = net_->il_action(obs);
    d.waypoint = {a(0), a(1), a(2)};
  }
  return d;
}

}  // namespace chauffeur

#include "chauffeur/runner.hpp"

#include <algorithm>
#include <fstream>

#include "chauffeur/errors.hpp"

namespace chauffeur {

TokenizerConfig ExpertPolicy::tokenizer() const {
  TokenizerConfig cfg;
  cfg.include_ego_token = kind_ == TransitionKind::bicycle;
  return cfg;
}

PolicyDecision ExpertPolicy::act(const Simulator& sim, const Observation&) {
  const Scenario& s = sim.scenario();
  int next = std::min(sim.state().step + 1, s.horizon_steps - 1);
  const AgentState& ego = sim.state().agents[s.ego_index];
  const AgentState& target = s.agents[s.ego_index].states[next];
  PolicyDecision d;
  if (kind_ == TransitionKind::bicycle)
    d.bicycle =
        clamp_action(infer_bicycle_action(ego, target, ControlFrequency{s.frequency_hz}));
  else
    d.waypoint = infer_waypoint_action(ego, target);
  return d;
}

EpisodeRecord run_episode(const Scenario& s, Policy& policy, const RunConfig& cfg) {
  Simulator sim(s, cfg.control, cfg.ego_override, cfg.reward);
  TokenizerConfig tok = policy.tokenizer();
  StaticTokenCache cache = preprocess_static(s, tok);
  policy.reset(s);
  EpisodeRecord rec;
  rec.scenario_id = s.id;
  while (!sim.state().done) {
    Observation obs = tokenize(s, sim.state().agents, cache, tok);
    PolicyDecision d = policy.act(sim, obs);
    RewardBreakdown r = policy.kind() == TransitionKind::bicycle ? sim.step(d.bicycle)
                                                                 : sim.step(d.waypoint);
    rec.total_reward += r.total;
    ++rec.steps;
  }
  rec.metrics = episode_metrics(sim);
  return rec;
}

EpisodeMetrics replay_expert_metrics(const Scenario& s, TransitionKind kind) {
  Simulator sim(s, AgentControl::non_reactive);  // violation oracle + validated scenario
  const auto& logs = s.agents;
  ControlFrequency f{s.frequency_hz};
  AgentState ego = logs[s.ego_index].states[0];

  std::vector<AgentState> others;
  auto flags_at = [&](int t, const AgentState& e) {
    others.clear();
    for (const auto& a : logs) others.push_back(a.states[t]);
    return sim.detect_violations(e, others);
  };

  EpisodeMetrics m;
  ViolationFlags fl = flags_at(0, ego);
  m.collision = fl.collision;
  m.offroad = fl.offroad;
  m.wrongway = fl.wrongway;
  double max_arc = polyline_nearest({ego.x, ego.y}, s.routing).arclength;
  for (int t = 0; t + 1 < s.horizon_steps; ++t) {
    const AgentState& target = logs[s.ego_index].states[t + 1];
    if (kind == TransitionKind::bicycle)
      ego = step_bicycle(ego, clamp_action(infer_bicycle_action(ego, target, f)), f);
    else
      ego = step_delta(ego, infer_waypoint_action(ego, target), f);
    fl = flags_at(t + 1, ego);
    m.collision |= fl.collision;
    m.offroad |= fl.offroad;
    m.wrongway |= fl.wrongway;
    max_arc = std::max(max_arc, polyline_nearest({ego.x, ego.y}, s.routing).arclength);
  }
  double len = polyline_length(s.routing);
  m.progress_ratio = len <= 1e-9 ? 100.0 : std::min(100.0, 100.0 * max_arc / len);
  m.arrived = m.progress_ratio > 90.0 && !m.collision && !m.offroad;
  return m;
}

EvalResult evaluate_policy(const std::vector<Scenario>& scenarios, Policy& policy,
                           int episodes_per_scenario, const RunConfig& cfg) {
  check(episodes_per_scenario >= 1, "episodes_per_scenario must be >= 1");
  EvalResult out;
  std::vector<EpisodeMetrics> metrics;
  for (const auto& s : scenarios)
    for (int e = 0; e < episodes_per_scenario; ++e) {
      EpisodeRecord rec = run_episode(s, policy, cfg);
      rec.episode = e;
      metrics.push_back(rec.metrics);
      out.episodes.push_back(std::move(rec));
    }
  out.report = aggregate(metrics);
  return out;
}

void write_episode_csv(const std::vector<EpisodeRecord>& records,
                       const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);  // binary: identical bytes everywhere
  if (!f) throw Error("cannot write: " + path.string());
  f << "scenario,episode,arrived,collision,offroad,wrongway,progress_ratio,total_reward,"
       "steps\n";
  for (const auto& r : records)
    f << r.scenario_id << ',' << r.episode << ',' << (r.metrics.arrived ? 1 : 0) << ','
      << (r.metrics.collision ? 1 : 0) << ',' << (r.metrics.offroad ? 1 : 0) << ','
      << (r.metrics.wrongway ? 1 : 0) << ',' << format9(r.metrics.progress_ratio) << ','
      << format9(r.total_reward) << ',' << r.steps << '\n';
}

}  // namespace chauffeur

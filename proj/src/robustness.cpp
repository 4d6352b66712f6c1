#include "chauffeur/robustness.hpp"

#include <cmath>
#include <fstream>

#include "chauffeur/errors.hpp"

namespace chauffeur {

ShiftMode shift_mode_from_string(const std::string& s) {
  if (s == "axis") return ShiftMode::axis;
  if (s == "yaw") return ShiftMode::yaw;
  if (s == "both") return ShiftMode::both;
  throw ValidationError("unknown shift mode '" + s + "' (axis|yaw|both)");
}

std::string to_string(ShiftMode m) {
  switch (m) {
    case ShiftMode::axis: return "axis";
    case ShiftMode::yaw: return "yaw";
    case ShiftMode::both: return "both";
  }
  return "both";
}

namespace {

// One truncated-Gaussian component; max = 0 short-circuits to exact zero.
double draw_component(Rng& rng, double max, double sigma_frac) {
  if (max <= 0.0) return 0.0;
  double sigma = sigma_frac * max;
  double v;
  do {
    v = sigma * rng.normal();
  } while (std::abs(v) > max);
  return v;
}

void check_bounds(const ShiftConfig& cfg, double dx, double dy, double dyaw) {
  check(std::abs(dx) <= cfg.max_xy && std::abs(dy) <= cfg.max_xy &&
            std::abs(dyaw) <= cfg.max_yaw,
        "shift outside its configured bounds");
}

AgentState shifted_ego_state(const Scenario& s, const Pose& pose) {
  AgentState ego = s.agents[static_cast<size_t>(s.ego_index)].states[0];
  ego.x = pose.x;
  ego.y = pose.y;
  ego.yaw = pose.yaw;
  return ego;
}

bool pose_valid(const Scenario& s, const Simulator& probe, const Pose& pose) {
  ViolationFlags f = probe.detect_violations(shifted_ego_state(s, pose), probe.state().agents);
  return !f.offroad && !f.collision;
}

// Shared retry loop. Returns the override to hand to the simulator; nullopt
// when the episode must start from the untouched logged state.
ShiftOutcome draw_valid_shift(const Scenario& s, const Simulator& probe, const ShiftConfig& cfg,
                              Rng& rng, std::optional<Pose>& override_pose) {
  check(cfg.max_xy >= 0.0 && cfg.max_yaw >= 0.0, "shift bounds must be non-negative");
  check(cfg.max_retries >= 0, "max_retries must be non-negative");
  const AgentState& ego0 = s.agents[static_cast<size_t>(s.ego_index)].states[0];
  Pose base{ego0.x, ego0.y, ego0.yaw};

  ShiftOutcome out;
  override_pose.reset();
  for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
    ShiftSample smp = sample_shift(cfg, rng);
    out.attempts = attempt;
    Pose cand = apply_shift(base, smp);
    if (!pose_valid(s, probe, cand)) continue;
    out.applied = true;
    out.dx = smp.dx;
    out.dy = smp.dy;
    out.dyaw = smp.dyaw;
    // An exactly-zero accepted sample keeps the logged state verbatim; going
    // through the override would re-derive the velocity vector and change bits.
    if (smp.dx != 0.0 || smp.dy != 0.0 || smp.dyaw != 0.0) override_pose = cand;
    break;
  }
  check_bounds(cfg, out.dx, out.dy, out.dyaw);
  check(out.applied || (out.dx == 0.0 && out.dy == 0.0 && out.dyaw == 0.0),
        "fallback outcome must carry zero deltas");
  return out;
}

}  // namespace

ShiftSample sample_shift(const ShiftConfig& cfg, Rng& rng) {
  ShiftSample s;
  if (cfg.mode != ShiftMode::yaw) {
    s.dx = draw_component(rng, cfg.max_xy, cfg.sigma_frac);
    s.dy = draw_component(rng, cfg.max_xy, cfg.sigma_frac);
  }
  if (cfg.mode != ShiftMode::axis) s.dyaw = draw_component(rng, cfg.max_yaw, cfg.sigma_frac);
  return s;
}

Pose apply_shift(const Pose& base, const ShiftSample& s) {
  double c = std::cos(base.yaw), sn = std::sin(base.yaw);
  Pose p;
  p.x = base.x + c * s.dx - sn * s.dy;
  p.y = base.y + sn * s.dx + c * s.dy;
  p.yaw = wrap_angle(base.yaw + s.dyaw);
  return p;
}

bool validate_shift(const Scenario& s, const Pose& shifted_pose) {
  check(std::isfinite(shifted_pose.x) && std::isfinite(shifted_pose.y) &&
            std::isfinite(shifted_pose.yaw),
        "validate_shift: pose must be finite");
  Simulator probe(s, AgentControl::non_reactive);
  return pose_valid(s, probe, shifted_pose);
}

ShiftedReset shifted_reset(const Scenario& s, const ShiftConfig& cfg, Rng& rng,
                           AgentControl control, const RewardConfig& reward) {
  Simulator probe(s, control, std::nullopt, reward);
  std::optional<Pose> override_pose;
  ShiftOutcome out = draw_valid_shift(s, probe, cfg, rng, override_pose);
  if (override_pose)
    return ShiftedReset{Simulator(s, control, override_pose, reward), out, override_pose};
  // Unshifted start: the probe already is the plain reset.
  return ShiftedReset{std::move(probe), out, std::nullopt};
}

std::vector<SweepCell> shift_sweep(const std::vector<Scenario>& scenarios, Policy& policy,
                                   const ShiftGrid& grid, int episodes_per_cell,
                                   const ShiftConfig& base, const RunConfig& run) {
  if (scenarios.empty()) throw EmptyDataset("shift_sweep over zero scenarios");
  if (grid.xy.empty() || grid.yaw.empty())
    throw ValidationError("shift_sweep: the grid must list at least one xy and one yaw bound");
  check(episodes_per_cell >= 1, "episodes_per_cell must be >= 1");

  const int n = static_cast<int>(scenarios.size());
  std::vector<Simulator> probes;
  probes.reserve(scenarios.size());
  for (const auto& s : scenarios) probes.emplace_back(s, run.control, std::nullopt, run.reward);

  std::vector<SweepCell> cells;
  cells.reserve(grid.xy.size() * grid.yaw.size());
  for (double xy : grid.xy)
    for (double yaw : grid.yaw) {
      ShiftConfig cc = base;
      cc.max_xy = xy;
      cc.max_yaw = yaw;

      std::vector<EpisodeMetrics> metrics;
      metrics.reserve(static_cast<size_t>(episodes_per_cell));
      int applied = 0;
      for (int si = 0; si < n; ++si) {
        int reps = episodes_per_cell / n + (si < episodes_per_cell % n ? 1 : 0);
        for (int rep = 0; rep < reps; ++rep) {
          Rng rng(mix_seed(base.seed, static_cast<uint64_t>(si), static_cast<uint64_t>(rep)));
          std::optional<Pose> override_pose;
          ShiftOutcome out = draw_valid_shift(scenarios[static_cast<size_t>(si)],
                                              probes[static_cast<size_t>(si)], cc, rng,
                                              override_pose);
          RunConfig rc = run;
          rc.ego_override = override_pose;
          EpisodeRecord rec = run_episode(scenarios[static_cast<size_t>(si)], policy, rc);
          metrics.push_back(rec.metrics);
          applied += out.applied ? 1 : 0;
        }
      }
      SweepCell cell;
      cell.max_xy = xy;
      cell.max_yaw = yaw;
      cell.report = aggregate(metrics);
      cell.applied_fraction = static_cast<double>(applied) / static_cast<double>(episodes_per_cell);
      cells.push_back(std::move(cell));
    }
  return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);  // binary: identical bytes everywhere
  if (!f) throw Error("cannot write: " + path.string());
  f << "max_xy,max_yaw,arrival_rate,offroad_rate,collision_rate,mean_progress,episodes,"
       "applied_fraction\n";
  for (const auto& c : cells)
    f << format9(c.max_xy) << ',' << format9(c.max_yaw) << ',' << format9(c.report.arrival_rate)
      << ',' << format9(c.report.offroad_rate) << ',' << format9(c.report.collision_rate) << ','
      << format9(c.report.mean_progress) << ',' << c.report.n_episodes << ','
      << format9(c.applied_fraction) << '\n';
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& ctx) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(ctx + ": bad number '" + s + "'");
  }
  if (pos != s.size()) throw ParseError(ctx + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<SweepCell> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInput("cannot open: " + path.string());
  std::string ctx = path.string();
  std::string line;
  if (!std::getline(f, line)) throw ParseError(ctx + ": empty file");
  if (line !=
      "max_xy,max_yaw,arrival_rate,offroad_rate,collision_rate,mean_progress,episodes,"
      "applied_fraction")
    throw ParseError(ctx + ": unexpected header '" + line + "'");
  std::vector<SweepCell> cells;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = split_csv_line(line);
    if (cols.size() != 8) throw ParseError(ctx + ": expected 8 columns, got a row with " +
                                           std::to_string(cols.size()));
    SweepCell c;
    c.max_xy = parse_double(cols[0], ctx);
    c.max_yaw = parse_double(cols[1], ctx);
    c.report.arrival_rate = parse_double(cols[2], ctx);
    c.report.offroad_rate = parse_double(cols[3], ctx);
    c.report.collision_rate = parse_double(cols[4], ctx);
    c.report.mean_progress = parse_double(cols[5], ctx);
    double eps = parse_double(cols[6], ctx);
    if (eps < 0.0 || eps != std::floor(eps))
      throw ParseError(ctx + ": episodes must be a non-negative integer");
    c.report.n_episodes = static_cast<int>(eps);
    c.applied_fraction = parse_double(cols[7], ctx);
    cells.push_back(c);
  }
  return cells;
}

}  // namespace chauffeur

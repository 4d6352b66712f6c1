#include "chauffeur/observation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "chauffeur/errors.hpp"

namespace chauffeur {

bool operator==(const Observation& a, const Observation& b) {
  return a.rows == b.rows && a.mask == b.mask && a.tokens == b.tokens;
}

StaticTokenCache preprocess_static(const Scenario& s, const TokenizerConfig& cfg) {
  StaticTokenCache cache;
  double ego_width = s.agents[s.ego_index].width;
  Polyline routing = rdp_simplify(s.routing, cfg.rdp_eps_routing);
  cache.routing_rects = polyline_to_rects(routing, ego_width, 0);
  int next_id = 0;
  for (const auto& pl : s.map_polylines) {
    Polyline simp = rdp_simplify(pl, cfg.rdp_eps_road);
    auto rects = polyline_to_rects(simp, cfg.road_edge_width, next_id);
    next_id += static_cast<int>(rects.size());
    cache.road_rects.insert(cache.road_rects.end(), rects.begin(), rects.end());
  }
  return cache;
}

namespace {

struct Candidate {
  double vals[kTokenDim];
  double dist2;
  int id;
};

// Keep the closest `cap` candidates (ties by id), then restore id order.
void emplace_class(std::vector<Candidate>& cand, int cap, std::vector<double>& tokens,
                   std::vector<uint8_t>& mask, int slot0, int* truncated) {
  if (static_cast<int>(cand.size()) > cap) {
    if (truncated) *truncated += static_cast<int>(cand.size()) - cap;
    std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
      if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
      return a.id < b.id;
    });
    cand.resize(cap);
  }
  std::sort(cand.begin(), cand.end(),
            [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
  for (size_t i = 0; i < cand.size(); ++i) {
    int row = slot0 + static_cast<int>(i);
    for (int c = 0; c < kTokenDim; ++c)
      tokens[static_cast<size_t>(row) * kTokenDim + c] = cand[i].vals[c];
    mask[row] = 1;
  }
}

}  // namespace

Observation tokenize(const Scenario& s, const std::vector<AgentState>& agents,
                     const StaticTokenCache& cache, const TokenizerConfig& cfg,
                     TruncationStats* stats) {
  check(agents.size() == s.agents.size(), "tokenize: agent states size mismatch");
  const AgentState& ego = agents[s.ego_index];
  Pose ego_pose{ego.x, ego.y, ego.yaw};

  Observation obs;
  obs.rows = cfg.rows();
  obs.tokens.assign(static_cast<size_t>(obs.rows) * kTokenDim, 0.0);
  obs.mask.assign(obs.rows, 0);

  auto rect_candidate = [&](const OrientedRect& r, double id_or_speed, double indicator) {
    Vec2 c = world_to_ego(Vec2{r.cx, r.cy}, ego_pose);
    Candidate cd;
    cd.vals[0] = c.x;
    cd.vals[1] = c.y;
    cd.vals[2] = r.w;
    cd.vals[3] = r.h;
    cd.vals[4] = wrap_angle(r.yaw - ego_pose.yaw);
    cd.vals[5] = id_or_speed;
    cd.vals[6] = indicator;
    cd.dist2 = c.x * c.x + c.y * c.y;
    cd.id = r.id;
    return cd;
  };
  auto in_fov = [&](const Candidate& c) {
    return std::abs(c.vals[0]) <= 0.5 * cfg.fov_w && std::abs(c.vals[1]) <= 0.5 * cfg.fov_h;
  };

  std::vector<Candidate> cand;
  cand.reserve(cache.routing_rects.size());
  for (const auto& r : cache.routing_rects)
    cand.push_back(rect_candidate(r, static_cast<double>(r.id), kTokRouting));
  emplace_class(cand, cfg.n_rt, obs.tokens, obs.mask, 0, stats ? &stats->routing : nullptr);

  cand.clear();
  for (const auto& r : cache.road_rects) {
    Candidate c = rect_candidate(r, static_cast<double>(r.id), kTokRoadEdge);
    if (in_fov(c)) cand.push_back(c);
  }
  emplace_class(cand, cfg.n_rd, obs.tokens, obs.mask, cfg.n_rt,
                stats ? &stats->road : nullptr);

  cand.clear();
  for (size_t j = 0; j < agents.size(); ++j) {
    if (static_cast<int>(j) == s.ego_index) continue;
    const AgentState& a = agents[j];
    OrientedRect r{a.x, a.y, s.agents[j].width, s.agents[j].length, a.yaw, static_cast<int>(j)};
    Candidate c = rect_candidate(r, std::hypot(a.vx, a.vy), kTokNonEgo);
    if (in_fov(c)) cand.push_back(c);
  }
  emplace_class(cand, cfg.n_nego, obs.tokens, obs.mask, cfg.n_rt + cfg.n_rd,
                stats ? &stats->non_ego : nullptr);

  if (cfg.include_ego_token) {
    int row = obs.rows - 1;
    double* v = &obs.tokens[static_cast<size_t>(row) * kTokenDim];
    v[2] = s.agents[s.ego_index].width;
    v[3] = s.agents[s.ego_index].length;
    v[5] = std::hypot(ego.vx, ego.vy);
    v[6] = kTokEgo;
    obs.mask[row] = 1;
  }
  return obs;
}

namespace {

constexpr char kObsMagic[] = "chauffeur-obs v1";

struct ObsHeader {
  int rows = 0;
  int action_dim = 0;
  std::string mode;
  std::streamoff payload_start = 0;
};

ObsHeader read_obs_header(std::istream& f, const std::string& ctx) {
  ObsHeader h;
  std::string line;
  if (!std::getline(f, line)) throw ParseError(ctx + ": empty file");
  if (line != kObsMagic) {
    if (line.rfind("chauffeur-obs", 0) == 0)
      throw VersionMismatch(ctx + ": unsupported version '" + line + "'");
    throw ParseError(ctx + ": bad magic line");
  }
  while (std::getline(f, line)) {
    if (line == "end_header") {
      h.payload_start = f.tellg();
      if (h.rows <= 0) throw ParseError(ctx + ": missing key 'rows'");
      if (h.action_dim <= 0) throw ParseError(ctx + ": missing key 'action_dim'");
      if (h.mode.empty()) throw ParseError(ctx + ": missing key 'mode'");
      return h;
    }
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "rows") is >> h.rows;
    else if (key == "action_dim") is >> h.action_dim;
    else if (key == "mode") is >> h.mode;
    else if (key == "cols") {
      int cols = 0;
      is >> cols;
      if (cols != kTokenDim) throw ParseError(ctx + ": cols != 7");
    } else throw ParseError(ctx + ": unknown header key '" + key + "'");
  }
  throw ParseError(ctx + ": missing end_header");
}

size_t record_bytes(int rows, int action_dim) {
  return sizeof(double) * (static_cast<size_t>(rows) * kTokenDim + action_dim) +
         static_cast<size_t>(rows);
}

}  // namespace

ObsDatasetWriter::ObsDatasetWriter(const std::filesystem::path& path, int rows, int action_dim,
                                   const std::string& mode)
    : path_(path), rows_(rows), action_dim_(action_dim) {
  bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (exists) {
    std::ifstream f(path, std::ios::binary);
    ObsHeader h = read_obs_header(f, path.string());
    if (h.rows != rows || h.action_dim != action_dim || h.mode != mode)
      throw ValidationError(path.string() + ": appending with a mismatched layout");
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path.string());
    f << kObsMagic << "\nrows " << rows << "\ncols " << kTokenDim << "\naction_dim "
      << action_dim << "\nmode " << mode << "\nend_header\n";
  }
}

void ObsDatasetWriter::append(const Observation& obs, std::span<const double> action) {
  check(obs.rows == rows_, "obs writer: row mismatch");
  check(static_cast<int>(action.size()) == action_dim_, "obs writer: action dim mismatch");
  std::ofstream f(path_, std::ios::binary | std::ios::app);
  if (!f) throw Error("cannot append: " + path_.string());
  f.write(reinterpret_cast<const char*>(obs.tokens.data()),
          static_cast<std::streamsize>(obs.tokens.size() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(obs.mask.data()),
          static_cast<std::streamsize>(obs.mask.size()));
  f.write(reinterpret_cast<const char*>(action.data()),
          static_cast<std::streamsize>(action.size() * sizeof(double)));
}

Observation ObsDataset::observation(int i) const {
  Observation o;
  o.rows = rows;
  size_t tok = static_cast<size_t>(rows) * kTokenDim;
  o.tokens.assign(tokens.begin() + i * tok, tokens.begin() + (i + 1) * tok);
  o.mask.assign(masks.begin() + static_cast<size_t>(i) * rows,
                masks.begin() + static_cast<size_t>(i + 1) * rows);
  return o;
}

std::span<const double> ObsDataset::action(int i) const {
  return {actions.data() + static_cast<size_t>(i) * action_dim,
          static_cast<size_t>(action_dim)};
}

ObsDataset load_obs_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInput("cannot open: " + path.string());
  ObsHeader h = read_obs_header(f, path.string());

  ObsDataset d;
  d.rows = h.rows;
  d.action_dim = h.action_dim;
  d.mode = h.mode;

  size_t total = std::filesystem::file_size(path);
  size_t payload = total - static_cast<size_t>(h.payload_start);
  size_t rec = record_bytes(h.rows, h.action_dim);
  if (payload % rec != 0) throw ParseError(path.string() + ": truncated record payload");
  d.count = static_cast<int>(payload / rec);

  size_t tok = static_cast<size_t>(h.rows) * kTokenDim;
  d.tokens.resize(d.count * tok);
  d.masks.resize(static_cast<size_t>(d.count) * h.rows);
  d.actions.resize(static_cast<size_t>(d.count) * h.action_dim);
  for (int i = 0; i < d.count; ++i) {
    f.read(reinterpret_cast<char*>(d.tokens.data() + i * tok),
           static_cast<std::streamsize>(tok * sizeof(double)));
    f.read(reinterpret_cast<char*>(d.masks.data() + static_cast<size_t>(i) * h.rows), h.rows);
    f.read(reinterpret_cast<char*>(d.actions.data() + static_cast<size_t>(i) * h.action_dim),
           static_cast<std::streamsize>(h.action_dim * sizeof(double)));
  }
  if (!f) throw ParseError(path.string() + ": short read");
  return d;
}

}  // namespace chauffeur

#include "chauffeur/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chauffeur/errors.hpp"

namespace chauffeur {

namespace {
using nlohmann::json;
}

bool operator==(const Scenario& a, const Scenario& b) {
  if (a.id != b.id || a.frequency_hz != b.frequency_hz || a.horizon_steps != b.horizon_steps ||
      a.ego_index != b.ego_index)
    return false;
  if (a.map_polylines.size() != b.map_polylines.size() || a.agents.size() != b.agents.size())
    return false;
  for (size_t i = 0; i < a.map_polylines.size(); ++i)
    if (a.map_polylines[i].points != b.map_polylines[i].points) return false;
  if (a.routing.points != b.routing.points) return false;
  for (size_t i = 0; i < a.agents.size(); ++i) {
    const AgentLog& x = a.agents[i];
    const AgentLog& y = b.agents[i];
    if (x.kind != y.kind || x.width != y.width || x.length != y.length || x.states != y.states)
      return false;
  }
  return true;
}

const char* family_name(Family f) {
  switch (f) {
    case Family::straight: return "straight";
    case Family::curve: return "curve";
    case Family::intersection: return "intersection";
    case Family::parking: return "parking";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "straight") return Family::straight;
  if (name == "curve") return Family::curve;
  if (name == "intersection") return Family::intersection;
  if (name == "parking") return Family::parking;
  throw ValidationError("unknown scenario family '" + name + "'");
}

std::string format9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double quantize9(double v) {
  return std::strtod(format9(v).c_str(), nullptr);
}

void quantize_scenario(Scenario& s) {
  s.frequency_hz = quantize9(s.frequency_hz);
  for (auto& pl : s.map_polylines)
    for (auto& p : pl.points) {
      p.x = quantize9(p.x);
      p.y = quantize9(p.y);
    }
  for (auto& a : s.agents) {
    a.width = quantize9(a.width);
    a.length = quantize9(a.length);
    for (auto& st : a.states) {
      st.x = quantize9(st.x);
      st.y = quantize9(st.y);
      st.yaw = quantize9(st.yaw);
      st.vx = quantize9(st.vx);
      st.vy = quantize9(st.vy);
    }
  }
  s.routing.points.clear();
  if (s.ego_index >= 0 && s.ego_index < static_cast<int>(s.agents.size()))
    for (const auto& st : s.agents[s.ego_index].states)
      s.routing.points.push_back({st.x, st.y});
}

void validate_scenario(const Scenario& s) {
  if (s.horizon_steps < 1) throw ValidationError("horizon_steps must be >= 1");
  if (!(s.frequency_hz > 0.0)) throw ValidationError("frequency_hz must be > 0");
  if (s.agents.empty()) throw ValidationError("scenario needs at least the ego agent");
  if (s.agents.size() > 128) throw ValidationError("more than 128 agents");
  if (s.ego_index < 0 || s.ego_index >= static_cast<int>(s.agents.size()))
    throw ValidationError("ego_index out of range");
  for (size_t i = 0; i < s.agents.size(); ++i) {
    const AgentLog& a = s.agents[i];
    if (!(a.width > 0.0) || !(a.length > 0.0))
      throw ValidationError("agent " + std::to_string(i) + " has non-positive extents");
    if (static_cast<int>(a.states.size()) != s.horizon_steps)
      throw ValidationError("agent " + std::to_string(i) + " log length != horizon_steps");
  }
  for (size_t i = 0; i < s.map_polylines.size(); ++i)
    if (s.map_polylines[i].points.size() < 2)
      throw ValidationError("map polyline " + std::to_string(i) + " has < 2 points");
  const auto& ego_states = s.agents[s.ego_index].states;
  if (s.routing.points.size() != ego_states.size())
    throw ValidationError("routing length != ego log length");
  for (size_t t = 0; t < ego_states.size(); ++t)
    if (s.routing.points[t].x != ego_states[t].x || s.routing.points[t].y != ego_states[t].y)
      throw ValidationError("routing point " + std::to_string(t) + " != ego logged position");
}

namespace {

const char* kind_name(AgentKind k) {
  switch (k) {
    case AgentKind::vehicle: return "vehicle";
    case AgentKind::pedestrian: return "pedestrian";
    case AgentKind::cyclist: return "cyclist";
  }
  return "?";
}

AgentKind kind_from_name(const std::string& name) {
  if (name == "vehicle") return AgentKind::vehicle;
  if (name == "pedestrian") return AgentKind::pedestrian;
  if (name == "cyclist") return AgentKind::cyclist;
  throw ParseError("unknown agent kind '" + name + "'");
}

void write_points(std::ostream& os, const std::vector<Vec2>& pts) {
  os << '[';
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) os << ',';
    os << '[' << format9(pts[i].x) << ',' << format9(pts[i].y) << ']';
  }
  os << ']';
}

const json& need(const json& o, const char* key, const std::string& ctx) {
  auto it = o.find(key);
  if (it == o.end()) throw ParseError(ctx + ": missing key '" + key + "'");
  return *it;
}

double need_num(const json& o, const char* key, const std::string& ctx) {
  const json& v = need(o, key, ctx);
  if (!v.is_number()) throw ParseError(ctx + ": key '" + key + "' is not a number");
  return v.get<double>();
}

std::vector<Vec2> read_points(const json& arr, const std::string& ctx) {
  if (!arr.is_array()) throw ParseError(ctx + ": points is not an array");
  std::vector<Vec2> out;
  out.reserve(arr.size());
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw ParseError(ctx + ": point is not a [x, y] pair");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "{\n\"agents\":[\n";
  for (size_t i = 0; i < s.agents.size(); ++i) {
    const AgentLog& a = s.agents[i];
    os << "{\"kind\":\"" << kind_name(a.kind) << "\",\"length\":" << format9(a.length)
       << ",\"states\":[";
    for (size_t t = 0; t < a.states.size(); ++t) {
      const AgentState& st = a.states[t];
      if (t) os << ',';
      os << '[' << format9(st.x) << ',' << format9(st.y) << ',' << format9(st.yaw) << ','
         << format9(st.vx) << ',' << format9(st.vy) << ']';
    }
    os << "],\"width\":" << format9(a.width) << '}';
    if (i + 1 < s.agents.size()) os << ',';
    os << '\n';
  }
  os << "],\n\"ego_index\":" << s.ego_index << ",\n\"frequency_hz\":" << format9(s.frequency_hz)
     << ",\n\"horizon_steps\":" << s.horizon_steps << ",\n\"id\":" << json(s.id).dump()
     << ",\n\"map_polylines\":[\n";
  for (size_t i = 0; i < s.map_polylines.size(); ++i) {
    os << "{\"kind\":\"road_edge\",\"points\":";
    write_points(os, s.map_polylines[i].points);
    os << '}';
    if (i + 1 < s.map_polylines.size()) os << ',';
    os << '\n';
  }
  os << "],\n\"routing\":{\"points\":";
  write_points(os, s.routing.points);
  os << "},\n\"version\":1\n}\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path.string());
  f << os.str();
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open: " + path.string());
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const std::string ctx = path.filename().string();
  if (!root.is_object()) throw ParseError(ctx + ": top level is not an object");

  const json& ver = need(root, "version", ctx);
  if (!ver.is_number_integer() || ver.get<int>() != 1)
    throw VersionMismatch(ctx + ": unsupported version " + ver.dump());

  Scenario s;
  const json& id = need(root, "id", ctx);
  if (!id.is_string()) throw ParseError(ctx + ": key 'id' is not a string");
  s.id = id.get<std::string>();
  s.frequency_hz = need_num(root, "frequency_hz", ctx);
  s.horizon_steps = static_cast<int>(need_num(root, "horizon_steps", ctx));
  s.ego_index = static_cast<int>(need_num(root, "ego_index", ctx));

  const json& polys = need(root, "map_polylines", ctx);
  if (!polys.is_array()) throw ParseError(ctx + ": map_polylines is not an array");
  for (const auto& pl : polys) {
    Polyline line;
    line.points = read_points(need(pl, "points", ctx + ".map_polylines"), ctx + ".map_polylines");
    s.map_polylines.push_back(std::move(line));
  }

  const json& routing = need(root, "routing", ctx);
  s.routing.points = read_points(need(routing, "points", ctx + ".routing"), ctx + ".routing");

  const json& agents = need(root, "agents", ctx);
  if (!agents.is_array()) throw ParseError(ctx + ": agents is not an array");
  for (const auto& aj : agents) {
    AgentLog a;
    const json& kind = need(aj, "kind", ctx + ".agents");
    if (!kind.is_string()) throw ParseError(ctx + ".agents: kind is not a string");
    a.kind = kind_from_name(kind.get<std::string>());
    a.width = need_num(aj, "width", ctx + ".agents");
    a.length = need_num(aj, "length", ctx + ".agents");
    const json& states = need(aj, "states", ctx + ".agents");
    if (!states.is_array()) throw ParseError(ctx + ".agents: states is not an array");
    for (const auto& st : states) {
      if (!st.is_array() || st.size() != 5)
        throw ParseError(ctx + ".agents: state is not a [x, y, yaw, vx, vy] tuple");
      for (const auto& v : st)
        if (!v.is_number()) throw ParseError(ctx + ".agents: state entry is not a number");
      a.states.push_back({st[0].get<double>(), st[1].get<double>(), st[2].get<double>(),
                          st[3].get<double>(), st[4].get<double>()});
    }
    s.agents.push_back(std::move(a));
  }

  validate_scenario(s);
  return s;
}

std::vector<std::filesystem::path> list_scenario_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw MissingInput("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 9 && name.substr(name.size() - 9) == ".scn.json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace chauffeur

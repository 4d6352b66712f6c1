#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chauffeur/geometry.hpp"
#include "chauffeur/types.hpp"

namespace chauffeur {

// One agent's full logged track. states.size() == Scenario::horizon_steps.
struct AgentLog {
  AgentKind kind = AgentKind::vehicle;
  double width = 2.0;
  double length = 4.5;
  std::vector<AgentState> states;
};

// A closed little world: static map, a route, and per-agent logs at a fixed rate.
// The routing polyline is exactly the ego agent's logged (x, y) sequence.
struct Scenario {
  std::string id;
  double frequency_hz = 10.0;
  int horizon_steps = 0;
  int ego_index = 0;
  std::vector<Polyline> map_polylines;  // road edges
  Polyline routing;
  std::vector<AgentLog> agents;
};

bool operator==(const Scenario& a, const Scenario& b);

enum class Family { straight, curve, intersection, parking };

const char* family_name(Family f);
Family family_from_name(const std::string& name);

struct ScenarioFamilySpec {
  Family family = Family::straight;
  int traffic_density = 4;  // non-ego agent count, <= 127
  double curvature = 0.0;   // 1/m; 0 means family default (sampled)
  uint64_t seed = 0;
};

// Deterministic procedural generation with a scripted expert driving the ego log.
// Throws ValidationError on a bad spec and GenerationFailed after 100 attempts.
Scenario generate_scenario(const ScenarioFamilySpec& spec);

// Throws ValidationError describing the first violated invariant.
void validate_scenario(const Scenario& s);

// Canonical text format: sorted keys, numbers at 9 significant digits.
// load(save(s)) == s exactly because generated scenarios are pre-quantized.
void save_scenario(const Scenario& s, const std::filesystem::path& path);
Scenario load_scenario(const std::filesystem::path& path);

// %.9g formatting and the value it parses back to.
std::string format9(double v);
double quantize9(double v);

// Quantize every float field through the 9-significant-digit grid.
void quantize_scenario(Scenario& s);

// *.scn.json files under dir, sorted by filename.
std::vector<std::filesystem::path> list_scenario_files(const std::filesystem::path& dir);

}  // namespace chauffeur

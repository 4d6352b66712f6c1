#pragma once

namespace chauffeur {

enum class AgentKind { vehicle, pedestrian, cyclist };

// One sample of an agent track. yaw in radians, velocities in world frame m/s.
struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

inline bool operator==(const AgentState& a, const AgentState& b) {
  return a.x == b.x && a.y == b.y && a.yaw == b.yaw && a.vx == b.vx && a.vy == b.vy;
}

}  // namespace chauffeur

#pragma once

#include "chauffeur/types.hpp"

namespace chauffeur {

inline constexpr double kAccMin = -6.0;
inline constexpr double kAccMax = 6.0;
inline constexpr double kSteerMin = -0.3;
inline constexpr double kSteerMax = 0.3;

// Control frequency of the whole pipeline. 10 Hz everywhere unless a test says so.
struct ControlFrequency {
  double hz = 10.0;
};

// acc in m/s^2, steer is path curvature in 1/m (yaw change per meter traveled).
struct BicycleAction {
  double acc = 0.0;
  double steer = 0.0;
};

BicycleAction clamp_action(BicycleAction a);

// Ego-frame displacement per tick: dx forward, dy lateral, dyaw heading change.
struct WaypointAction {
  double dx = 0.0;
  double dy = 0.0;
  double dyaw = 0.0;
};

// Kinematic bicycle update. Speed floors at zero; velocity is re-aimed along the
// updated yaw unless velocity_along_old_yaw is set (the documented variant switch).
AgentState step_bicycle(const AgentState& s, BicycleAction a, ControlFrequency f,
                        bool velocity_along_old_yaw = false);

// Waypoint update: the ego-frame delta is rotated into the world by the current yaw;
// velocity is the displacement times the control frequency.
AgentState step_delta(const AgentState& s, const WaypointAction& a, ControlFrequency f);

// Least-squares inversion of step_bicycle from a consecutive state pair. When the
// traveled distance term is below 1e-6 the steer is unobservable: it is set to 0 and
// *degenerate (if given) is flagged.
BicycleAction infer_bicycle_action(const AgentState& s, const AgentState& s_next,
                                   ControlFrequency f, bool* degenerate = nullptr);

WaypointAction infer_waypoint_action(const AgentState& s, const AgentState& s_next);

}  // namespace chauffeur

#include "chauffeur/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "chauffeur/geometry.hpp"

namespace chauffeur {

BicycleAction clamp_action(BicycleAction a) {
  return {std::clamp(a.acc, kAccMin, kAccMax), std::clamp(a.steer, kSteerMin, kSteerMax)};
}

AgentState step_bicycle(const AgentState& s, BicycleAction a, ControlFrequency f,
                        bool velocity_along_old_yaw) {
  a = clamp_action(a);
  const double inv_f = 1.0 / f.hz;
  const double half_inv_f2 = 0.5 * inv_f * inv_f;
  const double speed = std::hypot(s.vx, s.vy);

  AgentState n;
  n.x = s.x + s.vx * inv_f + a.acc * std::cos(s.yaw) * half_inv_f2;
  n.y = s.y + s.vy * inv_f + a.acc * std::sin(s.yaw) * half_inv_f2;
  n.yaw = wrap_angle(s.yaw + a.steer * (speed * inv_f + a.acc * half_inv_f2));
  const double speed_next = std::max(0.0, speed + a.acc * inv_f);
  const double heading = velocity_along_old_yaw ? s.yaw : n.yaw;
  n.vx = speed_next * std::cos(heading);
  n.vy = speed_next * std::sin(heading);
  return n;
}

AgentState step_delta(const AgentState& s, const WaypointAction& a, ControlFrequency f) {
  double c, sn;
  rot2(s.yaw, c, sn);
  const double wdx = c * a.dx - sn * a.dy;
  const double wdy = sn * a.dx + c * a.dy;
  AgentState n;
  n.x = s.x + wdx;
  n.y = s.y + wdy;
  n.yaw = wrap_angle(s.yaw + a.dyaw);
  n.vx = wdx * f.hz;
  n.vy = wdy * f.hz;
  return n;
}

BicycleAction infer_bicycle_action(const AgentState& s, const AgentState& s_next,
                                   ControlFrequency f, bool* degenerate) {
  const double inv_f = 1.0 / f.hz;
  const double speed = std::hypot(s.vx, s.vy);
  const double speed_next = std::hypot(s_next.vx, s_next.vy);
  BicycleAction a;
  a.acc = (speed_next - speed) * f.hz;
  // Distance traveled over the tick; below 1e-6 m the heading change says nothing.
  const double dist = speed * inv_f + a.acc * 0.5 * inv_f * inv_f;
  if (degenerate) *degenerate = false;
  if (std::abs(dist) < 1e-6) {
    a.steer = 0.0;
    if (degenerate) *degenerate = true;
  } else {
    a.steer = wrap_angle(s_next.yaw - s.yaw) / dist;
  }
  return a;
}

WaypointAction infer_waypoint_action(const AgentState& s, const AgentState& s_next) {
  double c, sn;
  rot2(s.yaw, c, sn);
  const double wdx = s_next.x - s.x;
  const double wdy = s_next.y - s.y;
  return {c * wdx + sn * wdy, -sn * wdx + c * wdy, wrap_angle(s_next.yaw - s.yaw)};
}

}  // namespace chauffeur

#pragma once

#include <array>
#include <vector>

namespace chauffeur {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline bool operator==(const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // radians, (-pi, pi]
};

struct Polyline {
  std::vector<Vec2> points;  // >= 2 points wherever geometry ops consume one
};

// Axis-aligned in its own frame: w is the extent along local x (heading), h across.
struct OrientedRect {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double yaw = 0.0;
  int id = 0;  // carried for tokenization; geometric predicates ignore it
};

// Normalize an angle to (-pi, pi].
double wrap_angle(double a);

// cos/sin of yaw with values within 1e-15 of {-1, 0, 1} snapped exactly, so
// quarter-turn rotations are exact and rigid 90-degree transforms round-trip
// bit-for-bit on exactly representable inputs.
void rot2(double yaw, double& c, double& s);

// Ramer-Douglas-Peucker with perpendicular point-to-chord-line distance.
// Endpoints always survive; every input point stays within eps of the output chain.
Polyline rdp_simplify(const Polyline& line, double eps);

// One rect per consecutive point pair, centered on the segment midpoint, w = segment
// length, h = width, yaw = segment heading. ids run id_base, id_base+1, ...
std::vector<OrientedRect> polyline_to_rects(const Polyline& line, double width, int id_base);

std::array<Vec2, 4> rect_corners(const OrientedRect& r);

// Separating-axis test over both rects' edge normals. Touching counts as overlap.
bool obb_overlap(const OrientedRect& a, const OrientedRect& b);

// Rect vs zero-width segment. Touching counts.
bool obb_segment_overlap(const OrientedRect& r, Vec2 a, Vec2 b);

Vec2 world_to_ego(Vec2 p, const Pose& ego);
Vec2 ego_to_world(Vec2 p, const Pose& ego);
Pose world_to_ego(const Pose& p, const Pose& ego);
Pose ego_to_world(const Pose& p, const Pose& ego);

struct NearestPoint {
  double arclength = 0.0;  // distance along the polyline to the projection
  double distance = 0.0;   // euclidean distance from the query to the projection
  double heading = 0.0;    // heading of the segment containing the projection
};

// Nearest point on the chain; ties resolved toward the smaller arclength.
NearestPoint polyline_nearest(Vec2 q, const Polyline& line);

double polyline_length(const Polyline& line);

// Point and tangent heading at a given arclength; clamps to the chain's ends.
Pose polyline_sample(const Polyline& line, double arclength);

}  // namespace chauffeur

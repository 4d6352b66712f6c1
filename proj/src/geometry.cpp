#include "chauffeur/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "chauffeur/errors.hpp"

namespace chauffeur {

double wrap_angle(double a) {
  if (a > -M_PI && a <= M_PI) return a;  // exact identity inside the range
  double r = std::fmod(a + M_PI, 2.0 * M_PI);
  if (r <= 0.0) r += 2.0 * M_PI;
  return r - M_PI;
}

void rot2(double yaw, double& c, double& s) {
  c = std::cos(yaw);
  s = std::sin(yaw);
  if (std::abs(c) < 1e-15) {
    c = 0.0;
    s = s > 0.0 ? 1.0 : -1.0;
  } else if (std::abs(s) < 1e-15) {
    s = 0.0;
    c = c > 0.0 ? 1.0 : -1.0;
  }
}

namespace {

// Perpendicular distance from p to the infinite line through a, b.
// Degenerate chord (a == b) falls back to point distance.
double line_distance(Vec2 p, Vec2 a, Vec2 b) {
  double dx = b.x - a.x, dy = b.y - a.y;
  double len = std::hypot(dx, dy);
  if (len == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
  return std::abs(dy * (p.x - a.x) - dx * (p.y - a.y)) / len;
}

void rdp_rec(const std::vector<Vec2>& pts, size_t lo, size_t hi, double eps,
             std::vector<bool>& keep) {
  if (hi <= lo + 1) return;
  double worst = -1.0;
  size_t worst_i = lo;
  for (size_t i = lo + 1; i < hi; ++i) {
    double d = line_distance(pts[i], pts[lo], pts[hi]);
    if (d > worst) {
      worst = d;
      worst_i = i;
    }
  }
  if (worst > eps) {
    keep[worst_i] = true;
    rdp_rec(pts, lo, worst_i, eps, keep);
    rdp_rec(pts, worst_i, hi, eps, keep);
  }
}

}  // namespace

Polyline rdp_simplify(const Polyline& line, double eps) {
  const auto& pts = line.points;
  check(pts.size() >= 2, "rdp_simplify needs >= 2 points");
  std::vector<bool> keep(pts.size(), false);
  keep.front() = keep.back() = true;
  rdp_rec(pts, 0, pts.size() - 1, eps, keep);
  Polyline out;
  for (size_t i = 0; i < pts.size(); ++i)
    if (keep[i]) out.points.push_back(pts[i]);
  return out;
}

std::vector<OrientedRect> polyline_to_rects(const Polyline& line, double width, int id_base) {
  const auto& pts = line.points;
  check(pts.size() >= 2, "polyline_to_rects needs >= 2 points");
  std::vector<OrientedRect> out;
  out.reserve(pts.size() - 1);
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    double dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    OrientedRect r;
    r.cx = 0.5 * (pts[i].x + pts[i + 1].x);
    r.cy = 0.5 * (pts[i].y + pts[i + 1].y);
    r.w = std::hypot(dx, dy);
    r.h = width;
    r.yaw = std::atan2(dy, dx);
    r.id = id_base + static_cast<int>(i);
    out.push_back(r);
  }
  return out;
}

std::array<Vec2, 4> rect_corners(const OrientedRect& r) {
  double c, s;
  rot2(r.yaw, c, s);
  double hx = 0.5 * r.w, hy = 0.5 * r.h;
  std::array<Vec2, 4> out;
  const double sx[4] = {+1, +1, -1, -1};
  const double sy[4] = {+1, -1, -1, +1};
  for (int i = 0; i < 4; ++i) {
    double lx = sx[i] * hx, ly = sy[i] * hy;
    out[i] = {r.cx + c * lx - s * ly, r.cy + s * lx + c * ly};
  }
  return out;
}

namespace {

// Project both corner sets onto axis; separated iff open gap between intervals.
bool separated_on_axis(const std::array<Vec2, 4>& ca, const std::array<Vec2, 4>& cb,
                       double ax, double ay) {
  double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
  for (const auto& p : ca) {
    double v = p.x * ax + p.y * ay;
    amin = std::min(amin, v);
    amax = std::max(amax, v);
  }
  for (const auto& p : cb) {
    double v = p.x * ax + p.y * ay;
    bmin = std::min(bmin, v);
    bmax = std::max(bmax, v);
  }
  return amax < bmin || bmax < amin;
}

}  // namespace

bool obb_overlap(const OrientedRect& a, const OrientedRect& b) {
  auto ca = rect_corners(a), cb = rect_corners(b);
  double c, s;
  rot2(a.yaw, c, s);
  if (separated_on_axis(ca, cb, c, s)) return false;
  if (separated_on_axis(ca, cb, -s, c)) return false;
  rot2(b.yaw, c, s);
  if (separated_on_axis(ca, cb, c, s)) return false;
  if (separated_on_axis(ca, cb, -s, c)) return false;
  return true;
}

bool obb_segment_overlap(const OrientedRect& r, Vec2 a, Vec2 b) {
  // Segment in the rect frame, then slab-clip against the centered box.
  double c, s;
  rot2(r.yaw, c, s);
  double ax = c * (a.x - r.cx) + s * (a.y - r.cy);
  double ay = -s * (a.x - r.cx) + c * (a.y - r.cy);
  double bx = c * (b.x - r.cx) + s * (b.y - r.cy);
  double by = -s * (b.x - r.cx) + c * (b.y - r.cy);
  double hx = 0.5 * r.w, hy = 0.5 * r.h;

  double t0 = 0.0, t1 = 1.0;
  double d[2] = {bx - ax, by - ay};
  double p[2] = {ax, ay};
  double h[2] = {hx, hy};
  for (int i = 0; i < 2; ++i) {
    if (d[i] == 0.0) {
      if (p[i] < -h[i] || p[i] > h[i]) return false;
    } else {
      double ta = (-h[i] - p[i]) / d[i];
      double tb = (h[i] - p[i]) / d[i];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
  }
  return true;
}

Vec2 world_to_ego(Vec2 p, const Pose& ego) {
  double c, s;
  rot2(ego.yaw, c, s);
  double dx = p.x - ego.x, dy = p.y - ego.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 ego_to_world(Vec2 p, const Pose& ego) {
  double c, s;
  rot2(ego.yaw, c, s);
  return {ego.x + c * p.x - s * p.y, ego.y + s * p.x + c * p.y};
}

Pose world_to_ego(const Pose& p, const Pose& ego) {
  Vec2 v = world_to_ego(Vec2{p.x, p.y}, ego);
  return {v.x, v.y, wrap_angle(p.yaw - ego.yaw)};
}

Pose ego_to_world(const Pose& p, const Pose& ego) {
  Vec2 v = ego_to_world(Vec2{p.x, p.y}, ego);
  return {v.x, v.y, wrap_angle(p.yaw + ego.yaw)};
}

NearestPoint polyline_nearest(Vec2 q, const Polyline& line) {
  const auto& pts = line.points;
  check(pts.size() >= 2, "polyline_nearest needs >= 2 points");
  NearestPoint best;
  double best_d2 = 1e300;
  double arc = 0.0;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    double dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    double seg_len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (seg_len2 > 0.0) {
      t = ((q.x - pts[i].x) * dx + (q.y - pts[i].y) * dy) / seg_len2;
      t = std::clamp(t, 0.0, 1.0);
    }
    double px = pts[i].x + t * dx, py = pts[i].y + t * dy;
    double d2 = (q.x - px) * (q.x - px) + (q.y - py) * (q.y - py);
    // Strict < keeps the first (smallest-arclength) projection on ties.
    if (d2 < best_d2) {
      best_d2 = d2;
      best.arclength = arc + t * std::sqrt(seg_len2);
      best.distance = std::sqrt(d2);
      best.heading = std::atan2(dy, dx);
    }
    arc += std::sqrt(seg_len2);
  }
  return best;
}

double polyline_length(const Polyline& line) {
  double arc = 0.0;
  for (size_t i = 0; i + 1 < line.points.size(); ++i)
    arc += std::hypot(line.points[i + 1].x - line.points[i].x,
                      line.points[i + 1].y - line.points[i].y);
  return arc;
}

Pose polyline_sample(const Polyline& line, double arclength) {
  const auto& pts = line.points;
  check(pts.size() >= 2, "polyline_sample needs >= 2 points");
  double remaining = std::max(0.0, arclength);
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    double dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    double len = std::hypot(dx, dy);
    if (remaining <= len || i + 2 == pts.size()) {
      double t = len > 0.0 ? std::min(remaining, len) / len : 0.0;
      return {pts[i].x + t * dx, pts[i].y + t * dy, std::atan2(dy, dx)};
    }
    remaining -= len;
  }
  return {pts.back().x, pts.back().y, 0.0};
}

}  // namespace chauffeur

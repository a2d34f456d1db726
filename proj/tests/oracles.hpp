#pragma once

// Brute-force reference implementations used only by the test suites. Each one
// takes a different route from the library code it checks.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/gripper.hpp"
#include "catgrasp/mesh_query.hpp"

namespace oracle {

using catgrasp::Vec3;

struct NearestResult {
  int index = -1;
  double dist = std::numeric_limits<double>::infinity();
};

/// Exhaustive nearest neighbour, lowest index wins ties.
inline NearestResult nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  NearestResult best;
  double best_sq = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    const double d = (pts[i] - q).squaredNorm();
    if (d < best_sq) {
      best_sq = d;
      best.index = i;
    }
  }
  best.dist = std::sqrt(best_sq);
  return best;
}

inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sa = 0.0, sb = 0.0;
  for (const auto& p : a) sa += nearest(b, p).dist;
  for (const auto& p : b) sb += nearest(a, p).dist;
  return sa / a.size() + sb / b.size();
}

inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).norm();
}

/// Plane projection when it lands inside, otherwise the nearest edge.
inline double triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a).normalized();
  const double h = (p - a).dot(n);
  const Vec3 q = p - h * n;
  const auto side = [&](const Vec3& u, const Vec3& v) { return (v - u).cross(q - u).dot(n); };
  if (side(a, b) >= 0 && side(b, c) >= 0 && side(c, a) >= 0) return std::abs(h);
  return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
}

inline double mesh_distance(const catgrasp::TriMesh& m, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : m.faces) {
    best = std::min(best, triangle_distance(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]));
  }
  return best;
}

/// Ray/plane intersection followed by a barycentric inside test.
inline double ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-300) return std::numeric_limits<double>::infinity();
  const double t = n.dot(a - o) / denom;
  if (t < 0) return std::numeric_limits<double>::infinity();
  const Vec3 q = o + t * d;
  const double area = n.squaredNorm();
  const double u = (c - b).cross(q - b).dot(n) / area;
  const double v = (a - c).cross(q - c).dot(n) / area;
  const double w = 1.0 - u - v;
  const double eps = -1e-12;
  if (u < eps || v < eps || w < eps) return std::numeric_limits<double>::infinity();
  return t;
}

inline double raycast(const std::vector<catgrasp::TriMesh>& meshes, const Vec3& o, const Vec3& d) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : meshes) {
    for (const auto& f : m.faces) {
      best = std::min(best, ray_triangle(o, d, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]));
    }
  }
  return best;
}

/// Inside test by counting crossings along a fixed skew ray.
inline bool inside_by_parity(const catgrasp::TriMesh& m, const Vec3& p) {
  const Vec3 d = Vec3(0.5773, 0.5774, 0.5775).normalized();
  int hits = 0;
  for (const auto& f : m.faces) {
    if (std::isfinite(ray_triangle(p, d, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]))) ++hits;
  }
  return hits % 2 == 1;
}

/// Textbook DBSCAN with O(n^2) neighbourhoods; returns labels with -1 for noise.
inline std::vector<int> dbscan(const std::vector<Vec3>& pts, double eps, std::size_t min_pts) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<int>> nb(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if ((pts[i] - pts[j]).norm() <= eps) nb[i].push_back(j);
    }
  }
  std::vector<int> label(n, -2);
  int cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    if (nb[i].size() < min_pts) {
      label[i] = -1;
      continue;
    }
    label[i] = cluster;
    std::vector<int> frontier = nb[i];
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      const int q = frontier[k];
      if (label[q] == -1) label[q] = cluster;
      if (label[q] != -2) continue;
      label[q] = cluster;
      if (nb[q].size() >= min_pts) frontier.insert(frontier.end(), nb[q].begin(), nb[q].end());
    }
    ++cluster;
  }
  return label;
}

/// True when two labelings agree up to a bijection of cluster ids (noise must match noise).
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    auto [it, ins] = fwd.emplace(a[i], b[i]);
    if (!ins && it->second != b[i]) return false;
    auto [jt, jns] = bwd.emplace(b[i], a[i]);
    if (!jns && jt->second != a[i]) return false;
  }
  return true;
}


/// Distance from p to an axis-aligned box (0 inside).
inline double box_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 q = p.cwiseMax(lo).cwiseMin(hi);
  return (p - q).norm();
}

/// Whether direction d lies in the polyhedral cone inscribed in the friction cone
/// around `axis` (sides generators), tested facet by facet.
inline bool in_polyhedral_cone(const Vec3& d, const Vec3& axis, double half_angle, int sides) {
  const Vec3 a = axis.normalized();
  Vec3 t1 = std::abs(a.x()) < 0.9 ? a.cross(Vec3::UnitX()) : a.cross(Vec3::UnitY());
  t1.normalize();
  const Vec3 t2 = a.cross(t1);
  const auto gen = [&](int k) {
    const double th = 2.0 * catgrasp::kPi * k / sides;
    return Vec3(std::cos(half_angle) * a + std::sin(half_angle) * (std::cos(th) * t1 + std::sin(th) * t2));
  };
  for (int k = 0; k < sides; ++k) {
    const Vec3 n = gen(k).cross(gen(k + 1));
    if (n.dot(d) < -1e-15) return false;
  }
  return true;
}

struct BruteGrasp {
  bool collision = false;
  std::vector<int> right, left;
  bool success = false;
};

/// Quasi-static closing of box fingers described by `dims`, evaluated with plain loops:
/// all-pairs triangle collision, analytic box distances, polyhedral friction cones.
inline BruteGrasp grasp_verdict(const catgrasp::TriMesh& obj, const catgrasp::PointCloud& cloud,
                                const catgrasp::Pose6D& pose, double opening, const catgrasp::GripperDims& d,
                                double eps, double mu) {
  using namespace catgrasp;
  BruteGrasp out;
  const double z1 = d.tip_extension, z0 = d.tip_extension - d.finger_depth, hw = 0.5 * d.finger_width;
  const double half = 0.5 * opening;
  const double px = 0.5 * d.max_opening + d.finger_thickness;
  const std::vector<std::pair<Vec3, Vec3>> boxes{
      {Vec3(half, -hw, z0), Vec3(half + d.finger_thickness, hw, z1)},
      {Vec3(-half - d.finger_thickness, -hw, z0), Vec3(-half, hw, z1)},
      {Vec3(-px, -hw - 0.002, z0 - d.palm_height), Vec3(px, hw + 0.002, z0)}};
  // Collision: every triangle pair, then containment by parity.
  for (const auto& [lo, hi] : boxes) {
    const TriMesh b = transform_mesh(shapes::box_between(lo, hi), pose);
    for (const auto& fa : obj.faces) {
      const std::array<Vec3, 3> ta{obj.vertices[fa[0]], obj.vertices[fa[1]], obj.vertices[fa[2]]};
      for (const auto& fb : b.faces) {
        if (triangles_intersect(ta, {b.vertices[fb[0]], b.vertices[fb[1]], b.vertices[fb[2]]})) out.collision = true;
      }
    }
    if (inside_by_parity(obj, b.vertices[0]) || inside_by_parity(b, obj.vertices[0])) out.collision = true;
  }
  if (out.collision) return out;
  const Eigen::Matrix3d inv = pose.rotation.inverse();
  std::vector<Vec3> local(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) local[i] = inv * (cloud.points[i] - pose.translation);
  double rs = -1e300, ls = 1e300;
  for (const auto& u : local) {
    const bool fp = std::abs(u.y()) <= hw && u.z() >= z0 && u.z() <= z1;
    if (fp && u.x() >= 0 && u.x() <= half) rs = std::max(rs, u.x());
    if (fp && u.x() <= 0 && u.x() >= -half) ls = std::min(ls, u.x());
  }
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    if (rs > -1e300 && box_distance(local[i], Vec3(rs, -hw, z0), Vec3(rs + d.finger_thickness, hw, z1)) <= eps) {
      out.right.push_back(i);
    }
    if (ls < 1e300 && box_distance(local[i], Vec3(ls - d.finger_thickness, -hw, z0), Vec3(ls, hw, z1)) <= eps) {
      out.left.push_back(i);
    }
  }
  const double alpha = std::atan(mu);
  for (int r : out.right) {
    for (int l : out.left) {
      const Vec3 dir = cloud.points[l] - cloud.points[r];
      if (dir.norm() == 0.0) continue;
      if (in_polyhedral_cone(dir, -cloud.normals[r], alpha, 720) && in_polyhedral_cone(-dir, -cloud.normals[l], alpha, 720)) {
        out.success = true;
      }
    }
  }
  return out;
}

/// Brute-force swept-volume containment for a grasp: scene points in the gripper's
/// local frame tested against every swept, inflated box.
inline bool swept_hits(const std::vector<Vec3>& scene, const catgrasp::Pose6D& pose, double opening,
                       const catgrasp::GripperDims& d, double margin, double sweep) {
  const double z1 = d.tip_extension, z0 = d.tip_extension - d.finger_depth, hw = 0.5 * d.finger_width;
  const double half = 0.5 * opening, px = 0.5 * d.max_opening + d.finger_thickness;
  const std::vector<std::pair<Vec3, Vec3>> boxes{
      {Vec3(half, -hw, z0 - sweep), Vec3(half + d.finger_thickness, hw, z1)},
      {Vec3(-half - d.finger_thickness, -hw, z0 - sweep), Vec3(-half, hw, z1)},
      {Vec3(-px, -hw - 0.002, z0 - d.palm_height - sweep), Vec3(px, hw + 0.002, z0)}};
  const Eigen::Matrix3d inv = pose.rotation.inverse();
  for (const auto& p : scene) {
    const Vec3 u = inv * (p - pose.translation);
    for (const auto& [lo, hi] : boxes) {
      if (box_distance(u, lo, hi) <= 0.0 ||
          ((u.array() >= lo.array() - margin).all() && (u.array() <= hi.array() + margin).all())) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace oracle

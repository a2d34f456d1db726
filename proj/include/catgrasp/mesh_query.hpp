#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/log.hpp"

namespace catgrasp {

// ---------------------------------------------------------------------------
// Triangle primitives
// ---------------------------------------------------------------------------

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Moller-Trumbore; returns hit distance along `dir` (unit) or nullopt. Edges count as hits.
inline std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                          const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (t < 0.0) return std::nullopt;
  return t;
}

/// Closed-set triangle overlap by separating axes. Touching triangles intersect.
inline bool triangles_intersect(const std::array<Vec3, 3>& a, const std::array<Vec3, 3>& b) {
  const auto separated_on = [&](const Vec3& axis) {
    if (axis.squaredNorm() < 1e-30) return false;
    double amin = axis.dot(a[0]), amax = amin, bmin = axis.dot(b[0]), bmax = bmin;
    for (int i = 1; i < 3; ++i) {
      const double pa = axis.dot(a[i]), pb = axis.dot(b[i]);
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    return amax < bmin || bmax < amin;
  };
  const std::array<Vec3, 3> ea{a[1] - a[0], a[2] - a[1], a[0] - a[2]};
  const std::array<Vec3, 3> eb{b[1] - b[0], b[2] - b[1], b[0] - b[2]};
  const Vec3 na = ea[0].cross(ea[1]);
  const Vec3 nb = eb[0].cross(eb[1]);
  if (separated_on(na) || separated_on(nb)) return false;
  for (const auto& u : ea) {
    for (const auto& v : eb) {
      if (separated_on(u.cross(v))) return false;
    }
  }
  // In-plane axes; needed when the triangles are coplanar.
  for (const auto& u : ea) {
    if (separated_on(na.cross(u))) return false;
  }
  for (const auto& v : eb) {
    if (separated_on(nb.cross(v))) return false;
  }
  return true;
}

/// Solid angle subtended by triangle abc at p (Van Oosterom & Strackee).
inline double triangle_solid_angle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ra = a - p, rb = b - p, rc = c - p;
  const double la = ra.norm(), lb = rb.norm(), lc = rc.norm();
  const double num = ra.dot(rb.cross(rc));
  const double den = la * lb * lc + ra.dot(rb) * lc + rb.dot(rc) * la + rc.dot(ra) * lb;
  return 2.0 * std::atan2(num, den);
}

inline double winding_number(const TriMesh& m, const Vec3& p) {
  double w = 0.0;
  for (const auto& f : m.faces) {
    w += triangle_solid_angle(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
  }
  return w / (4.0 * kPi);
}

/// Every undirected edge used by exactly two faces with opposite orientation.
inline bool is_watertight(const TriMesh& m) {
  if (m.empty()) return false;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : m.faces) {
    for (int k = 0; k < 3; ++k) {
      const int u = f[k], v = f[(k + 1) % 3];
      if (++directed[{u, v}] > 1) return false;
    }
  }
  for (const auto& [e, n] : directed) {
    const auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Triangle bounding-volume hierarchy
// ---------------------------------------------------------------------------

/// Mesh plus an AABB tree over its faces. Immutable once built.
class MeshIndex {
 public:
  MeshIndex() = default;
  explicit MeshIndex(TriMesh mesh) : mesh_(std::move(mesh)) {
    if (mesh_.empty()) return;
    watertight_ = is_watertight(mesh_);
    order_.resize(mesh_.faces.size());
    std::iota(order_.begin(), order_.end(), 0);
    tri_boxes_.resize(mesh_.faces.size());
    centroids_.resize(mesh_.faces.size());
    for (std::size_t f = 0; f < mesh_.faces.size(); ++f) {
      Aabb b;
      for (int k = 0; k < 3; ++k) b.extend(mesh_.vertices[mesh_.faces[f][k]]);
      tri_boxes_[f] = b;
      centroids_[f] = b.center();
    }
    nodes_.reserve(2 * mesh_.faces.size());
    build(0, static_cast<int>(order_.size()));
  }

  const TriMesh& mesh() const { return mesh_; }
  bool empty() const { return nodes_.empty(); }
  bool watertight() const { return watertight_; }
  Aabb box() const { return nodes_.empty() ? Aabb{} : nodes_[0].box; }

  std::array<Vec3, 3> triangle(int f) const {
    const auto& t = mesh_.faces[f];
    return {mesh_.vertices[t[0]], mesh_.vertices[t[1]], mesh_.vertices[t[2]]};
  }

  struct Closest {
    Vec3 point = Vec3::Zero();
    double dist_sq = std::numeric_limits<double>::infinity();
    int face = -1;
  };

  Closest closest(const Vec3& p) const {
    Closest best;
    if (!nodes_.empty()) closest_rec(0, p, best);
    return best;
  }

  /// Negative inside, positive outside. Sign comes from the winding number, which is
  /// exact for closed meshes and a best estimate otherwise.
  double signed_distance(const Vec3& p) const {
    const Closest c = closest(p);
    const double d = std::sqrt(c.dist_sq);
    if (d == 0.0) return 0.0;
    return inside(p) ? -d : d;
  }

  bool inside(const Vec3& p) const {
    if (nodes_.empty() || !nodes_[0].box.contains(p)) return false;
    return std::abs(winding_number(mesh_, p)) > 0.5;
  }

  struct RayHit {
    double t = std::numeric_limits<double>::infinity();
    int face = -1;
  };

  /// Nearest hit along a unit-direction ray; ties resolved toward the lower face index.
  RayHit raycast(const Vec3& origin, const Vec3& dir) const {
    RayHit best;
    if (nodes_.empty()) return best;
    const Vec3 inv(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
    raycast_rec(0, origin, dir, inv, best);
    return best;
  }

  /// Any triangle of `other` (placed by `other_to_this`) touching a triangle of this mesh.
  bool overlaps(const MeshIndex& other, const Pose6D& other_to_this) const {
    if (nodes_.empty() || other.nodes_.empty()) return false;
    return overlap_rec(0, other, 0, other_to_this);
  }

 private:
  struct Node {
    Aabb box;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };
  static constexpr int kLeafSize = 4;

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Aabb box, cbox;
    for (int i = begin; i < end; ++i) {
      box.extend(tri_boxes_[order_[i]]);
      cbox.extend(centroids_[order_[i]]);
    }
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= kLeafSize) return id;
    int axis = 0;
    cbox.extent().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       return centroids_[a][axis] < centroids_[b][axis] ||
                              (centroids_[a][axis] == centroids_[b][axis] && a < b);
                     });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void closest_rec(int n, const Vec3& p, Closest& best) const {
    const Node& node = nodes_[n];
    if (node.box.distance_sq(p) > best.dist_sq) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[i];
        const auto t = triangle(f);
        const Vec3 q = closest_point_on_triangle(p, t[0], t[1], t[2]);
        const double d2 = (q - p).squaredNorm();
        if (d2 < best.dist_sq || (d2 == best.dist_sq && f < best.face)) best = {q, d2, f};
      }
      return;
    }
    const double dl = nodes_[node.left].box.distance_sq(p);
    const double dr = nodes_[node.right].box.distance_sq(p);
    if (dl <= dr) {
      closest_rec(node.left, p, best);
      closest_rec(node.right, p, best);
    } else {
      closest_rec(node.right, p, best);
      closest_rec(node.left, p, best);
    }
  }

  static bool ray_box(const Aabb& b, const Vec3& o, const Vec3& inv, double tmax) {
    double t0 = 0.0, t1 = tmax;
    for (int k = 0; k < 3; ++k) {
      double a = (b.lo[k] - o[k]) * inv[k];
      double c = (b.hi[k] - o[k]) * inv[k];
      if (std::isnan(a) || std::isnan(c)) {
        // Ray parallel to this slab and starting on its boundary plane.
        if (o[k] < b.lo[k] || o[k] > b.hi[k]) return false;
        continue;
      }
      if (a > c) std::swap(a, c);
      t0 = std::max(t0, a);
      t1 = std::min(t1, c);
      if (t0 > t1) return false;
    }
    return true;
  }

  void raycast_rec(int n, const Vec3& o, const Vec3& d, const Vec3& inv, RayHit& best) const {
    const Node& node = nodes_[n];
    // Slack keeps hits lying exactly on a box face from being culled by rounding.
    if (!ray_box(node.box.inflated(1e-12), o, inv, best.t + 1e-12)) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[i];
        const auto t = triangle(f);
        if (auto h = ray_triangle(o, d, t[0], t[1], t[2])) {
          if (*h < best.t || (*h == best.t && f < best.face)) best = {*h, f};
        }
      }
      return;
    }
    raycast_rec(node.left, o, d, inv, best);
    raycast_rec(node.right, o, d, inv, best);
  }

  static Aabb transform_box(const Aabb& b, const Pose6D& pose) {
    const Vec3 c = pose.apply(b.center());
    const Vec3 h = pose.rotation.cwiseAbs() * (0.5 * b.extent());
    return {c - h, c + h};
  }

  bool overlap_rec(int n, const MeshIndex& other, int m, const Pose6D& o2t) const {
    const Node& a = nodes_[n];
    const Node& b = other.nodes_[m];
    // Transformed boxes are conservative; a tiny pad absorbs rounding at exact contact.
    if (!a.box.inflated(1e-12).overlaps(transform_box(b.box, o2t))) return false;
    const bool a_leaf = a.left < 0, b_leaf = b.left < 0;
    if (a_leaf && b_leaf) {
      for (int i = a.begin; i < a.end; ++i) {
        const auto ta = triangle(order_[i]);
        Aabb boxa = tri_boxes_[order_[i]].inflated(1e-12);
        for (int j = b.begin; j < b.end; ++j) {
          auto tb = other.triangle(other.order_[j]);
          for (auto& v : tb) v = o2t.apply(v);
          Aabb boxb;
          for (const auto& v : tb) boxb.extend(v);
          if (!boxa.overlaps(boxb)) continue;
          if (triangles_intersect(ta, tb)) return true;
        }
      }
      return false;
    }
    const bool split_a = !a_leaf && (b_leaf || a.box.extent().norm() >= b.box.extent().norm());
    if (split_a) {
      return overlap_rec(a.left, other, m, o2t) || overlap_rec(a.right, other, m, o2t);
    }
    return overlap_rec(n, other, b.left, o2t) || overlap_rec(n, other, b.right, o2t);
  }

  TriMesh mesh_;
  bool watertight_ = false;
  std::vector<int> order_;
  std::vector<Aabb> tri_boxes_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

/// Collision between two indexed meshes under world poses. Closed-set: touching collides.
/// Also true when one mesh lies entirely inside the other.
inline bool mesh_collision(const MeshIndex& a, const Pose6D& pose_a, const MeshIndex& b,
                           const Pose6D& pose_b) {
  if (a.empty() || b.empty()) return false;
  const Pose6D b_to_a = pose_a.inverse() * pose_b;
  if (a.overlaps(b, b_to_a)) return true;
  // No surface contact: only full containment remains.
  const Vec3 vb = b_to_a.apply(b.mesh().vertices[b.mesh().faces[0][0]]);
  if (a.inside(vb)) return true;
  const Pose6D a_to_b = b_to_a.inverse();
  const Vec3 va = a_to_b.apply(a.mesh().vertices[a.mesh().faces[0][0]]);
  return b.inside(va);
}

inline bool mesh_collision(const TriMesh& a, const Pose6D& pose_a, const TriMesh& b,
                           const Pose6D& pose_b) {
  return mesh_collision(MeshIndex(a), pose_a, MeshIndex(b), pose_b);
}

/// Signed distance to a mesh; warns once per call when the mesh is not closed.
inline double signed_distance(const TriMesh& mesh, const Vec3& p) {
  const MeshIndex index(mesh);
  if (!index.watertight()) log_warning("signed_distance: mesh is not watertight; sign is a winding-number estimate");
  return index.signed_distance(p);
}

}  // namespace catgrasp

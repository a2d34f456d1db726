#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace catgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base exception for every recoverable failure in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty, or same length as points

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return vertices.empty() || faces.empty(); }

  Vec3 face_normal(std::size_t f) const {
    const auto& t = faces[f];
    Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
  }

  double face_area(std::size_t f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool valid() const { return (lo.array() <= hi.array()).all(); }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  Aabb inflated(double m) const { return {lo - Vec3::Constant(m), hi + Vec3::Constant(m)}; }
  bool overlaps(const Aabb& b) const {
    return (lo.array() <= b.hi.array()).all() && (b.lo.array() <= hi.array()).all();
  }
  bool contains(const Vec3& p) const {
    return (lo.array() <= p.array()).all() && (p.array() <= hi.array()).all();
  }
  double distance_sq(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - hi);
    return d.squaredNorm();
  }
};

inline Aabb bounds(std::span<const Vec3> pts) {
  Aabb b;
  for (const auto& p : pts) b.extend(p);
  return b;
}

inline double mesh_diameter(const TriMesh& m) { return bounds(m.vertices).extent().norm(); }

/// Nearest proper rotation to `m` in the Frobenius sense.
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  if (axis.norm() == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Rotation from a rotation vector (axis * angle).
inline Mat3 exp_so3(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

/// Geodesic angle between two rotations, radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

/// Some unit vector orthogonal to `v`.
inline Vec3 any_orthogonal(const Vec3& v) {
  const Vec3 a = std::abs(v.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return v.cross(a).normalized();
}

/// Rigid transform x -> R x + t.
struct Pose6D {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose6D identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_dir(const Vec3& d) const { return rotation * d; }

  Pose6D inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  Pose6D operator*(const Pose6D& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
};

/// Rotation, per-axis scale and translation: x -> R diag(s) x + t.
struct Pose9D {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 scale = Vec3::Ones();

  static Pose9D identity() { return {}; }

  Mat3 linear() const { return rotation * scale.asDiagonal(); }
  Vec3 apply(const Vec3& p) const { return rotation * scale.cwiseProduct(p) + translation; }
  Vec3 apply_inverse(const Vec3& q) const {
    return (rotation.transpose() * (q - translation)).cwiseQuotient(scale);
  }
  Pose6D rigid() const { return {rotation, translation}; }
};

/// General affine map x -> M x + b, used where the inverse of a Pose9D is needed.
struct AffineMap {
  Mat3 linear = Mat3::Identity();
  Vec3 offset = Vec3::Zero();

  static AffineMap from(const Pose9D& p) { return {p.linear(), p.translation}; }
  static AffineMap from(const Pose6D& p) { return {p.rotation, p.translation}; }

  Vec3 apply(const Vec3& p) const { return linear * p + offset; }
  /// Normals follow the inverse transpose of the linear part.
  Vec3 apply_normal(const Vec3& n) const {
    Vec3 m = linear.inverse().transpose() * n;
    const double len = m.norm();
    return len > 0.0 ? Vec3(m / len) : m;
  }
  AffineMap inverse() const {
    const Mat3 inv = linear.inverse();
    return {inv, -(inv * offset)};
  }
  AffineMap operator*(const AffineMap& o) const {
    return {linear * o.linear, linear * o.offset + offset};
  }
};

inline PointCloud transform_cloud(const PointCloud& c, const AffineMap& map) {
  PointCloud out;
  out.points.reserve(c.size());
  for (const auto& p : c.points) out.points.push_back(map.apply(p));
  if (c.has_normals()) {
    const Mat3 nt = map.linear.inverse().transpose();
    out.normals.reserve(c.size());
    for (const auto& n : c.normals) {
      Vec3 m = nt * n;
      const double len = m.norm();
      out.normals.push_back(len > 0.0 ? Vec3(m / len) : m);
    }
  }
  return out;
}

inline PointCloud transform_cloud(const PointCloud& c, const Pose9D& pose) {
  return transform_cloud(c, AffineMap::from(pose));
}

inline PointCloud transform_cloud(const PointCloud& c, const Pose6D& pose) {
  return transform_cloud(c, AffineMap::from(pose));
}

inline TriMesh transform_mesh(const TriMesh& m, const AffineMap& map) {
  TriMesh out = m;
  for (auto& v : out.vertices) v = map.apply(v);
  // A reflection flips orientation; keep outward normals outward.
  if (map.linear.determinant() < 0.0) {
    for (auto& f : out.faces) std::swap(f[1], f[2]);
  }
  return out;
}

inline TriMesh transform_mesh(const TriMesh& m, const Pose6D& pose) {
  return transform_mesh(m, AffineMap::from(pose));
}

inline TriMesh transform_mesh(const TriMesh& m, const Pose9D& pose) {
  return transform_mesh(m, AffineMap::from(pose));
}

/// Concatenate meshes into one vertex/face list.
inline TriMesh merge_meshes(std::span<const TriMesh> parts) {
  TriMesh out;
  for (const auto& m : parts) {
    const int base = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), m.vertices.begin(), m.vertices.end());
    for (const auto& f : m.faces) out.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  }
  return out;
}

inline double surface_area(const TriMesh& m) {
  double a = 0.0;
  for (std::size_t f = 0; f < m.faces.size(); ++f) a += m.face_area(f);
  return a;
}

/// Area-weighted centroid of the surface.
inline Vec3 surface_centroid(const TriMesh& m) {
  Vec3 acc = Vec3::Zero();
  double area = 0.0;
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& t = m.faces[f];
    const double a = m.face_area(f);
    acc += a * (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0;
    area += a;
  }
  return area > 0.0 ? Vec3(acc / area) : Vec3::Zero();
}

/// Center of mass of the enclosed solid at uniform density (closed, outward-oriented mesh).
inline Vec3 volume_centroid(const TriMesh& m) {
  double vol = 0.0;
  Vec3 acc = Vec3::Zero();
  for (const auto& t : m.faces) {
    const Vec3& a = m.vertices[t[0]];
    const Vec3& b = m.vertices[t[1]];
    const Vec3& c = m.vertices[t[2]];
    const double v = a.dot(b.cross(c)) / 6.0;
    vol += v;
    acc += v * (a + b + c) / 4.0;
  }
  if (std::abs(vol) < 1e-300) return surface_centroid(m);
  return acc / vol;
}

inline double mesh_volume(const TriMesh& m) {
  double vol = 0.0;
  for (const auto& t : m.faces) {
    vol += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  }
  return vol;
}

inline Eigen::Vector4d rotation_to_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  // Canonical sign: w >= 0, keeps serialized output unique.
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return {q.w(), q.x(), q.y(), q.z()};
}

inline Mat3 quaternion_to_rotation(const Eigen::Vector4d& wxyz) {
  Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  if (q.norm() == 0.0) throw Error("zero quaternion");
  q.normalize();
  return q.toRotationMatrix();
}

/// Rotation taking unit vector `from` onto unit vector `to`.
inline Mat3 rotation_between(const Vec3& from, const Vec3& to) {
  return Eigen::Quaterniond::FromTwoVectors(from, to).toRotationMatrix();
}

}  // namespace catgrasp

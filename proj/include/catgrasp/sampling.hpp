#pragma once

#include <algorithm>
#include <queue>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/kdtree.hpp"
#include "catgrasp/log.hpp"
#include "catgrasp/rng.hpp"

namespace catgrasp {

/// Area-weighted uniform surface samples with face normals.
inline PointCloud sample_surface_uniform(const TriMesh& mesh, std::size_t n, Rng& rng) {
  if (mesh.empty()) throw Error("sample_surface_uniform: empty mesh");
  std::vector<double> cdf(mesh.faces.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    acc += mesh.face_area(f);
    cdf[f] = acc;
  }
  PointCloud out;
  out.points.reserve(n);
  out.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t f = std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
    double a = uniform01(rng), b = uniform01(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const auto& t = mesh.faces[f];
    const Vec3& p0 = mesh.vertices[t[0]];
    out.points.push_back(p0 + a * (mesh.vertices[t[1]] - p0) + b * (mesh.vertices[t[2]] - p0));
    out.normals.push_back(mesh.face_normal(f));
  }
  return out;
}

/// Poisson-disk surface sampling by weighted sample elimination (Yuksel 2015).
///
/// `radius` is the Poisson-disk radius: the target count is the hexagonal-packing
/// count for that radius, and after elimination any pair closer than
/// 0.95 * radius is thinned so the minimum spacing holds strictly.
inline PointCloud poisson_disk_sample(const TriMesh& mesh, double radius, std::uint64_t seed = 0) {
  if (mesh.empty()) throw Error("poisson_disk_sample: empty mesh");
  if (!(radius > 0.0)) throw Error("poisson_disk_sample: radius must be positive");
  const double area = surface_area(mesh);
  if (radius >= mesh_diameter(mesh)) {
    log_warning("poisson_disk_sample: radius exceeds mesh diameter; returning one point");
    std::size_t best = 0;
    for (std::size_t f = 1; f < mesh.faces.size(); ++f) {
      if (mesh.face_area(f) > mesh.face_area(best)) best = f;
    }
    const auto& t = mesh.faces[best];
    PointCloud one;
    one.points.push_back((mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0);
    one.normals.push_back(mesh.face_normal(best));
    return one;
  }
  const auto target = static_cast<std::size_t>(
      std::max(1.0, std::round(area / (2.0 * std::sqrt(3.0) * radius * radius))));
  Rng rng(seed);
  const PointCloud cand = sample_surface_uniform(mesh, target * 5, rng);
  const std::size_t m = cand.size();

  const double rmax = 2.0 * radius;
  const KdTree tree(cand.points);
  std::vector<std::vector<int>> nbrs(m);
  std::vector<double> weight(m, 0.0);
  const auto w = [&](double d) { return std::pow(1.0 - std::min(d, rmax) / rmax, 8.0); };
  for (std::size_t i = 0; i < m; ++i) {
    nbrs[i] = tree.radius(cand.points[i], rmax);
    for (int j : nbrs[i]) {
      if (j != static_cast<int>(i)) weight[i] += w((cand.points[i] - cand.points[j]).norm());
    }
  }

  // Max-heap on (weight, index) with lazy invalidation.
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry> heap;
  for (std::size_t i = 0; i < m; ++i) heap.emplace(weight[i], static_cast<int>(i));
  std::vector<char> alive(m, 1);
  std::size_t remaining = m;
  while (remaining > target && !heap.empty()) {
    const auto [wt, i] = heap.top();
    heap.pop();
    if (!alive[i] || wt != weight[i]) continue;
    alive[i] = 0;
    --remaining;
    for (int j : nbrs[i]) {
      if (!alive[j] || j == i) continue;
      weight[j] -= w((cand.points[i] - cand.points[j]).norm());
      heap.emplace(weight[j], j);
    }
  }

  // Hard spacing guarantee.
  const double min_sq = (0.95 * radius) * (0.95 * radius);
  PointCloud out;
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < m; ++i) {
    if (!alive[i]) continue;
    bool ok = true;
    for (int j : nbrs[i]) {
      if (j < static_cast<int>(i) && alive[j] &&
          (cand.points[i] - cand.points[j]).squaredNorm() < min_sq) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      alive[i] = 0;
      continue;
    }
    out.points.push_back(cand.points[i]);
    out.normals.push_back(cand.normals[i]);
  }
  return out;
}

/// PCA normals from k nearest neighbours, flipped to face `viewpoint`.
inline std::vector<Vec3> estimate_normals(const std::vector<Vec3>& pts, std::size_t k,
                                          const Vec3& viewpoint) {
  std::vector<Vec3> normals(pts.size(), Vec3::UnitZ());
  if (pts.size() < 3) return normals;
  const KdTree tree(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto nn = tree.knn(pts[i], std::min(k, pts.size()));
    Vec3 mean = Vec3::Zero();
    for (const auto& h : nn) mean += pts[h.index];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& h : nn) {
      const Vec3 d = pts[h.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 n = es.eigenvectors().col(0);
    if (n.dot(viewpoint - pts[i]) < 0.0) n = -n;
    normals[i] = n.normalized();
  }
  return normals;
}

/// Symmetric Chamfer distance: mean nearest-neighbour distance a->b plus b->a.
inline double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw Error("chamfer_distance: empty input");
  const auto one_sided = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    const KdTree tree(to);
    double s = 0.0;
    for (const auto& p : from) s += std::sqrt(tree.nearest(p).dist_sq);
    return s / static_cast<double>(from.size());
  };
  return one_sided(a, b) + one_sided(b, a);
}

inline double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  return chamfer_distance(a.points, b.points);
}

}  // namespace catgrasp

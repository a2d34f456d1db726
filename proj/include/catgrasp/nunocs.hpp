#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/kdtree.hpp"
#include "catgrasp/log.hpp"
#include "catgrasp/parallel.hpp"
#include "catgrasp/rng.hpp"
#include "catgrasp/sampling.hpp"

namespace catgrasp {

class FitError : public Error {
 public:
  using Error::Error;
};

class PredictionError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Per-axis normalization
// ---------------------------------------------------------------------------

/// Axis-aligned box that a cloud is normalized against: x_C = (x - min) / extent.
struct NunocsFrame {
  Vec3 min = Vec3::Zero();
  Vec3 extent = Vec3::Ones();

  Vec3 normalize(const Vec3& p) const { return (p - min).cwiseQuotient(extent); }
  Vec3 denormalize(const Vec3& q) const { return min + extent.cwiseProduct(q); }
  /// Affine map from the source frame into the unit cube.
  AffineMap to_canonical() const {
    const Vec3 inv = extent.cwiseInverse();
    return {inv.asDiagonal(), -min.cwiseProduct(inv)};
  }
  AffineMap to_source() const { return {extent.asDiagonal(), min}; }
};

inline NunocsFrame nunocs_frame(std::span<const Vec3> pts) {
  if (pts.empty()) throw Error("to_nunocs: empty cloud");
  const Aabb b = bounds(pts);
  const Vec3 ext = b.extent();
  for (int d = 0; d < 3; ++d) {
    if (!(ext[d] > 0.0)) throw Error("to_nunocs: zero extent on axis " + std::to_string(d));
  }
  return {b.lo, ext};
}

struct NunocsCloud {
  std::vector<Vec3> points;   // in [0,1]^3
  std::vector<Vec3> normals;  // optional, unit, expressed in the canonical frame
  Vec3 source_extents = Vec3::Ones();
  Vec3 source_min = Vec3::Zero();

  NunocsFrame frame() const { return {source_min, source_extents}; }
  std::size_t size() const { return points.size(); }
};

/// Normalize each axis of `cloud` independently into [0,1].
inline NunocsCloud to_nunocs(const PointCloud& cloud, const NunocsFrame& frame) {
  NunocsCloud out;
  out.source_min = frame.min;
  out.source_extents = frame.extent;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(frame.normalize(p));
  if (cloud.has_normals()) out.normals = transform_cloud(cloud, frame.to_canonical()).normals;
  return out;
}

inline NunocsCloud to_nunocs(const PointCloud& cloud) { return to_nunocs(cloud, nunocs_frame(cloud.points)); }

inline PointCloud denormalize(const NunocsCloud& c) {
  PointCloud out;
  const NunocsFrame f = c.frame();
  out.points.reserve(c.size());
  for (const auto& q : c.points) out.points.push_back(f.denormalize(q));
  if (!c.normals.empty()) {
    PointCloud tmp;
    tmp.points = c.points;
    tmp.normals = c.normals;
    out.normals = transform_cloud(tmp, f.to_source()).normals;
  }
  return out;
}

// ---------------------------------------------------------------------------
// 9D fitting
// ---------------------------------------------------------------------------

struct RansacParams {
  int iterations = 2000;
  double inlier_threshold = 0.01;  // in dst units
  int min_inliers = 0;             // 0: max(10, 25% of correspondences)
  std::uint64_t seed = 0;
  /// Constrain scale to `shape_scale * sigma` for a single scalar sigma (NOCS-style ablation).
  bool uniform_scale = false;
  Vec3 shape_scale = Vec3::Ones();
};

struct Correspondence {
  int observed = 0;
  int target = 0;
  double distance = 0.0;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
};

namespace detail {

inline double fit_residual(const Pose9D& p, std::span<const Vec3> src, std::span<const Vec3> dst) {
  double s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) s += (p.apply(src[i]) - dst[i]).squaredNorm();
  return s;
}

/// Rotation and translation for fixed per-axis scale (orthogonal Procrustes).
inline void procrustes_step(std::span<const Vec3> src, std::span<const Vec3> dst, Pose9D& p) {
  const double n = static_cast<double>(src.size());
  Vec3 ma = Vec3::Zero(), mb = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ma += p.scale.cwiseProduct(src[i]);
    mb += dst[i];
  }
  ma /= n;
  mb /= n;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    h += (p.scale.cwiseProduct(src[i]) - ma) * (dst[i] - mb).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  p.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  p.translation = mb - p.rotation * ma;
}

/// Per-axis scale for fixed rotation: ratio of centered spreads in the rotated frame.
inline void scale_step(std::span<const Vec3> src, std::span<const Vec3> dst, Pose9D& p,
                       const RansacParams& prm) {
  const double n = static_cast<double>(src.size());
  Vec3 ma = Vec3::Zero(), mb = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ma += src[i];
    mb += dst[i];
  }
  ma /= n;
  mb /= n;
  Vec3 sa = Vec3::Zero(), sb = Vec3::Zero();
  double sa_all = 0.0, sb_all = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - ma;
    const Vec3 b = p.rotation.transpose() * (dst[i] - mb);
    sa += a.cwiseProduct(a);
    sb += b.cwiseProduct(b);
    sa_all += a.cwiseProduct(prm.shape_scale).squaredNorm();
    sb_all += b.squaredNorm();
  }
  if (prm.uniform_scale) {
    if (sa_all > 0.0) p.scale = prm.shape_scale * std::sqrt(sb_all / sa_all);
    return;
  }
  for (int d = 0; d < 3; ++d) {
    if (sa[d] > 0.0 && sb[d] > 0.0) p.scale[d] = std::sqrt(sb[d] / sa[d]);
  }
}

/// Closed-form model for a correspondence subset. Starts from the least-squares
/// affine map (exact for noise-free data), splits it into orthonormal rotation and
/// per-axis scale, then alternates scale / Procrustes refinement.
inline Pose9D fit_model(std::span<const Vec3> src, std::span<const Vec3> dst, const RansacParams& prm,
                        int alternations = 5) {
  const std::size_t n = src.size();
  Pose9D p;
  Vec3 ma = Vec3::Zero(), mb = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    ma += src[i];
    mb += dst[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  Mat3 saa = Mat3::Zero(), sba = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    saa += (src[i] - ma) * (src[i] - ma).transpose();
    sba += (dst[i] - mb) * (src[i] - ma).transpose();
  }
  bool init = false;
  Eigen::FullPivLU<Mat3> lu(saa);
  if (!prm.uniform_scale && lu.rank() == 3) {
    Eigen::JacobiSVD<Mat3> sv(saa);
    const auto s = sv.singularValues();
    if (s[2] > 1e-12 * s[0]) {
      const Mat3 a = sba * saa.inverse();
      Vec3 scale;
      for (int d = 0; d < 3; ++d) scale[d] = a.col(d).norm();
      if ((scale.array() > 0.0).all()) {
        p.scale = scale;
        p.rotation = orthonormalize(a * scale.cwiseInverse().asDiagonal());
        p.translation = mb - p.rotation * p.scale.cwiseProduct(ma);
        init = true;
      }
    }
  }
  if (!init) {
    double va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      va += (src[i] - ma).cwiseProduct(prm.shape_scale).squaredNorm();
      vb += (dst[i] - mb).squaredNorm();
    }
    p.scale = prm.shape_scale * (va > 0.0 ? std::sqrt(vb / va) : 1.0);
    procrustes_step(src, dst, p);
  }
  double best = fit_residual(p, src, dst);
  for (int k = 0; k < alternations; ++k) {
    Pose9D q = p;
    scale_step(src, dst, q, prm);
    procrustes_step(src, dst, q);
    const double r = fit_residual(q, src, dst);
    if (!(r < best)) break;
    best = r;
    p = q;
  }
  p.rotation = orthonormalize(p.rotation);
  return p;
}

}  // namespace detail

/// RANSAC 9D fit mapping src points onto dst points through `corr`
/// (pairs[i].observed indexes src, pairs[i].target indexes dst).
inline Pose9D fit_pose9d(std::span<const Vec3> src, std::span<const Vec3> dst, const CorrespondenceSet& corr,
                         const RansacParams& prm) {
  const std::size_t n = corr.pairs.size();
  if (n < 4) throw FitError("fit_pose9d: need at least 4 correspondences");
  std::vector<Vec3> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = corr.pairs[i];
    if (c.observed < 0 || c.observed >= static_cast<int>(src.size()) || c.target < 0 ||
        c.target >= static_cast<int>(dst.size())) {
      throw FitError("fit_pose9d: correspondence index out of range");
    }
    a[i] = src[c.observed];
    b[i] = dst[c.target];
  }
  const std::size_t min_inliers =
      prm.min_inliers > 0 ? static_cast<std::size_t>(prm.min_inliers)
                          : std::max<std::size_t>(std::min<std::size_t>(10, n), (n + 3) / 4);
  const double thr2 = prm.inlier_threshold * prm.inlier_threshold;

  Rng rng(prm.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t best_count = 0;
  std::vector<char> best_mask;
  std::vector<char> mask(n);
  std::array<Vec3, 4> sa, sb;
  for (int it = 0; it < prm.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool dup;
      do {
        idx[k] = pick(rng);
        dup = std::find(idx.begin(), idx.begin() + k, idx[k]) != idx.begin() + k;
      } while (dup && n > 4);
      sa[k] = a[idx[k]];
      sb[k] = b[idx[k]];
    }
    const Pose9D model = detail::fit_model(sa, sb, prm);
    if (!model.scale.allFinite() || !model.rotation.allFinite() || (model.scale.array() <= 0.0).any()) continue;
    const Mat3 lin = model.linear();
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = (lin * a[i] + model.translation - b[i]).squaredNorm() <= thr2;
      count += mask[i];
    }
    if (count > best_count) {
      best_count = count;
      best_mask = mask;
      if (count == n) break;
    }
  }
  if (best_count < min_inliers) {
    throw FitError("fit_pose9d: best hypothesis has " + std::to_string(best_count) + " inliers, need " +
                   std::to_string(min_inliers));
  }
  std::vector<Vec3> ia, ib;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_mask[i]) {
      ia.push_back(a[i]);
      ib.push_back(b[i]);
    }
  }
  return detail::fit_model(ia, ib, prm, 5);
}

/// Convenience overload: correspondences are index-aligned.
inline Pose9D fit_pose9d(std::span<const Vec3> src, std::span<const Vec3> dst, const RansacParams& prm) {
  if (src.size() != dst.size()) throw FitError("fit_pose9d: size mismatch");
  CorrespondenceSet c;
  for (int i = 0; i < static_cast<int>(src.size()); ++i) c.pairs.push_back({i, i, 0.0});
  return fit_pose9d(src, dst, c, prm);
}

// ---------------------------------------------------------------------------
// Canonical model
// ---------------------------------------------------------------------------

struct CanonicalModel {
  std::string category = "object";
  double sample_radius = 0.0;
  int template_index = 0;
  std::vector<std::string> instance_ids;
  /// Per-instance normalization box in the instance's own (metric) frame.
  std::map<std::string, NunocsFrame> instance_frames;
  /// Instance NUNOCS -> template NUNOCS.
  std::map<std::string, Pose9D> instance_poses;
  std::vector<double> chamfer_sums;
  NunocsCloud template_cloud;
  TriMesh template_mesh;  // template instance mesh expressed in the canonical frame
  /// Discrete symmetry rotations of the category acting about the cube center.
  std::vector<Mat3> symmetries{Mat3::Identity()};

  const std::string& template_id() const { return instance_ids.at(template_index); }
  /// Metric size of the template; used to express NOCS-style uniform scale.
  Vec3 template_extents() const { return template_cloud.source_extents; }

  const KdTree& template_tree() const {
    if (tree_.size() != template_cloud.points.size()) tree_ = KdTree(template_cloud.points);
    return tree_;
  }

 private:
  mutable KdTree tree_;
};

/// For each observed point, the nearest template point in canonical space.
inline CorrespondenceSet correspond(std::span<const Vec3> observed, const CanonicalModel& canon) {
  if (observed.empty() || canon.template_cloud.points.empty()) throw Error("correspond: empty input");
  const KdTree& tree = canon.template_tree();
  CorrespondenceSet out;
  out.pairs.reserve(observed.size());
  for (int i = 0; i < static_cast<int>(observed.size()); ++i) {
    const auto h = tree.nearest(observed[i]);
    out.pairs.push_back({i, h.index, std::sqrt(h.dist_sq)});
  }
  return out;
}

inline CorrespondenceSet correspond(const NunocsCloud& observed, const CanonicalModel& canon) {
  return correspond(observed.points, canon);
}

struct CanonicalBuildParams {
  double sample_radius = 0.0005;
  std::uint64_t seed = 0;
  RansacParams ransac{.iterations = 2000, .inlier_threshold = 0.05};
  std::vector<Mat3> symmetries{Mat3::Identity()};
  std::string category = "object";
};

/// Sample each model, normalize it per axis, and pick the template with the
/// smallest summed Chamfer distance to the others (lowest index on ties).
inline CanonicalModel build_canonical(const std::vector<TriMesh>& models, const std::vector<std::string>& ids,
                                      const CanonicalBuildParams& prm) {
  if (models.size() < 2) throw Error("build_canonical: need at least two models");
  if (ids.size() != models.size()) throw Error("build_canonical: ids/models size mismatch");
  const std::size_t n = models.size();
  std::vector<NunocsCloud> clouds(n);
  std::vector<NunocsFrame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (models[i].empty()) throw Error("build_canonical: model " + ids[i] + " is empty");
    frames[i] = nunocs_frame(models[i].vertices);
    // Same seed for every model: identical meshes give identical clouds.
    const PointCloud pc = poisson_disk_sample(models[i], prm.sample_radius, prm.seed);
    clouds[i] = to_nunocs(pc, frames[i]);
  }
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = chamfer_distance(clouds[i].points, clouds[j].points);
    }
  }
  CanonicalModel canon;
  canon.category = prm.category;
  canon.sample_radius = prm.sample_radius;
  canon.instance_ids = ids;
  canon.symmetries = prm.symmetries;
  canon.chamfer_sums.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    canon.chamfer_sums[i] = std::accumulate(dist[i].begin(), dist[i].end(), 0.0);
  }
  canon.template_index = static_cast<int>(
      std::min_element(canon.chamfer_sums.begin(), canon.chamfer_sums.end()) - canon.chamfer_sums.begin());
  const std::size_t t = canon.template_index;
  canon.template_cloud = clouds[t];
  canon.template_mesh = transform_mesh(models[t], frames[t].to_canonical());
  for (std::size_t i = 0; i < n; ++i) {
    canon.instance_frames[ids[i]] = frames[i];
    if (i == t) {
      canon.instance_poses[ids[i]] = Pose9D::identity();
      continue;
    }
    const CorrespondenceSet corr = correspond(clouds[i].points, canon);
    RansacParams rp = prm.ransac;
    rp.seed = derive_seed(prm.seed, i);
    try {
      canon.instance_poses[ids[i]] = fit_pose9d(clouds[i].points, canon.template_cloud.points, corr, rp);
    } catch (const FitError& e) {
      // Both clouds already live in the unit cube; identity is the natural fallback.
      log_warning("build_canonical: instance " + ids[i] + " kept unaligned (" + e.what() + ")");
      canon.instance_poses[ids[i]] = Pose9D::identity();
    }
  }
  return canon;
}

// ---------------------------------------------------------------------------
// Analytic stand-in for the learned canonical-coordinate predictor
// ---------------------------------------------------------------------------

struct AlignParams {
  int view_directions = 24;
  int inplane_steps = 24;
  double percentile_lo = 0.10;
  double percentile_hi = 0.90;
  int refine_iterations = 20;
  int refine_top_k = 4;
  std::size_t max_score_points = 400;
  double accept_chamfer = 0.05;  // canonical-space units
  RansacParams ransac{.iterations = 100, .inlier_threshold = 0.01};
  bool uniform_scale = false;
  bool view_completion = true;  // camera at the origin of the segment frame
  bool pca_hypotheses = true;
  double free_space_weight = 0.1;  // per unit fraction of template points seen through
  double free_space_tol = 0.003;   // m in front of the observed surface
  std::uint64_t seed = 0;
};

struct NunocsPrediction {
  std::vector<Vec3> canonical_points;  // observed points mapped into the canonical cube
  Pose9D pose;                         // canonical -> camera
  double score = 0.0;                  // one-sided Chamfer, observed -> template, canonical units
};

/// Candidate rotations: Fibonacci-sphere view directions times in-plane steps.
inline std::vector<Mat3> rotation_grid(int directions, int inplane) {
  std::vector<Mat3> out;
  out.reserve(static_cast<std::size_t>(directions) * inplane);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < directions; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / directions;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 dir(r * std::cos(golden * i), r * std::sin(golden * i), z);
    const Mat3 align = rotation_between(Vec3::UnitZ(), dir);
    for (int j = 0; j < inplane; ++j) {
      out.push_back(align * axis_angle(Vec3::UnitZ(), 2.0 * kPi * j / inplane));
    }
  }
  return out;
}

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

/// Mean nearest-template distance of `pts` mapped into canonical space by `pose`.
/// Columns are the covariance eigenvectors, largest spread first.
inline Mat3 principal_axes(std::span<const Vec3> pts) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(std::max<std::size_t>(1, pts.size()));
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Mat3 out;
  for (int d = 0; d < 3; ++d) out.col(d) = es.eigenvectors().col(2 - d);
  return out;
}

/// Template points that land on the line of sight of an observed point but clearly
/// in front of it would have been seen; their fraction penalises a hypothesis.
/// Points behind the observed surface or off the segment's footprint are not judged,
/// so occlusion by other objects costs nothing.
class FreeSpaceCheck {
 public:
  FreeSpaceCheck(std::span<const Vec3> observed, std::span<const Vec3> probes, double depth_tol)
      : probes_(probes.begin(), probes.end()), tol_(depth_tol) {
    std::vector<Vec3> dirs;
    for (const auto& p : observed) {
      const double r = p.norm();
      if (!(r > 0.0)) continue;
      dirs.push_back(p / r);
      range_.push_back(r);
    }
    tree_ = KdTree(dirs);
    if (dirs.size() < 2) return;
    // Angular sampling density of the segment, from a strided subset.
    std::vector<double> gaps;
    const std::size_t stride = std::max<std::size_t>(1, dirs.size() / 200);
    for (std::size_t i = 0; i < dirs.size(); i += stride) {
      const auto nn = tree_.knn(dirs[i], 2);
      if (nn.size() == 2) gaps.push_back(std::sqrt(nn[1].dist_sq));
    }
    ang_ = 1.5 * percentile(gaps, 0.5);
  }

  double violation(const Pose9D& pose) const {
    if (ang_ <= 0.0 || probes_.empty()) return 0.0;
    std::size_t bad = 0;
    for (const auto& q : probes_) {
      const Vec3 x = pose.apply(q);
      const double r = x.norm();
      if (!(r > 0.0)) {
        ++bad;
        continue;
      }
      const auto nb = tree_.radius(x / r, ang_);
      if (nb.empty()) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (int i : nb) nearest = std::min(nearest, range_[i]);
      if (r < nearest - tol_) ++bad;
    }
    return static_cast<double>(bad) / static_cast<double>(probes_.size());
  }

 private:
  std::vector<Vec3> probes_;
  std::vector<double> range_;
  KdTree tree_;
  double tol_;
  double ang_ = 0.0;
};

inline double canonical_score(std::span<const Vec3> pts, const Pose9D& pose, const KdTree& tree) {
  double s = 0.0;
  for (const auto& p : pts) s += std::sqrt(tree.nearest(pose.apply_inverse(p)).dist_sq);
  return s / static_cast<double>(pts.size());
}

}  // namespace detail

/// Coarse rotation-grid search with robust-extent scale initialization, followed by
/// nearest-neighbour/RANSAC refinement. Throws PredictionError when nothing scores
/// under the acceptance bound.
inline NunocsPrediction predict_nunocs(const PointCloud& segment, const CanonicalModel& canon,
                                       const AlignParams& prm, std::size_t threads = 1) {
  if (segment.size() < 4) throw PredictionError("predict_nunocs: segment too small");
  const KdTree& tree = canon.template_tree();
  const auto& tpl = canon.template_cloud.points;

  std::vector<Vec3> score_pts;
  const std::size_t stride = std::max<std::size_t>(1, segment.size() / prm.max_score_points);
  for (std::size_t i = 0; i < segment.size(); i += stride) score_pts.push_back(segment.points[i]);

  Vec3 tpl_lo, tpl_hi;
  for (int d = 0; d < 3; ++d) {
    std::vector<double> v;
    v.reserve(tpl.size());
    for (const auto& p : tpl) v.push_back(p[d]);
    tpl_lo[d] = detail::percentile(v, prm.percentile_lo);
    tpl_hi[d] = detail::percentile(v, prm.percentile_hi);
  }
  const Vec3 tpl_ext = (tpl_hi - tpl_lo).cwiseMax(1e-9);
  const Vec3 tpl_mid = 0.5 * (tpl_lo + tpl_hi);
  const Vec3 shape = canon.template_extents();

  std::vector<Mat3> grid = rotation_grid(prm.view_directions, prm.inplane_steps);
  // Principal axes of the segment matched to those of the (metric) template under
  // every signed axis permutation; elongated parts land close to the right basin.
  const std::size_t n_grid = grid.size();
  if (prm.pca_hypotheses) {
    std::vector<Vec3> metric(tpl.size());
    for (std::size_t i = 0; i < tpl.size(); ++i) metric[i] = tpl[i].cwiseProduct(shape);
    const Mat3 ta = detail::principal_axes(metric), sa = detail::principal_axes(score_pts);
    for (int perm = 0; perm < 6; ++perm) {
      static constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 q = Mat3::Zero();
        for (int d = 0; d < 3; ++d) q(kPerm[perm][d], d) = (signs >> d & 1) ? -1.0 : 1.0;
        const Mat3 r = sa * q * ta.transpose();
        if (r.determinant() > 0.0) grid.push_back(r);
      }
    }
  }
  // A single view sees roughly the near half of the object along the line of sight,
  // so each rotation also gets a hypothesis with that axis extended away from the camera.
  Vec3 view = Vec3::Zero();
  for (const auto& p : score_pts) view += p;
  const bool has_view = prm.view_completion && view.norm() > 1e-12;
  if (has_view) view.normalize();
  const std::size_t per_rot = has_view ? 2 : 1;
  std::vector<Vec3> probes;
  const std::size_t pstride = std::max<std::size_t>(1, tpl.size() / prm.max_score_points);
  for (std::size_t i = 0; i < tpl.size(); i += pstride) probes.push_back(tpl[i]);
  const bool use_free = has_view && prm.free_space_weight > 0.0;
  const detail::FreeSpaceCheck free_space(use_free ? std::span<const Vec3>(segment.points) : std::span<const Vec3>{},
                                          probes, prm.free_space_tol);
  const auto objective = [&](const Pose9D& p) {
    double v = detail::canonical_score(score_pts, p, tree);
    if (use_free) v += prm.free_space_weight * free_space.violation(p);
    return v;
  };
  std::vector<Pose9D> hyps(grid.size() * per_rot);
  std::vector<double> scores(hyps.size());
  parallel_for(grid.size(), threads, [&](std::size_t h) {
    const Mat3& r = grid[h];
    Vec3 lo, hi;
    for (int d = 0; d < 3; ++d) {
      std::vector<double> v;
      v.reserve(score_pts.size());
      for (const auto& p : score_pts) v.push_back(r.col(d).dot(p));
      lo[d] = detail::percentile(v, prm.percentile_lo);
      hi[d] = detail::percentile(v, prm.percentile_hi);
    }
    for (std::size_t variant = 0; variant < per_rot; ++variant) {
      Vec3 a = lo, b = hi;
      if (variant == 1) {
        int d = 0;
        (r.transpose() * view).cwiseAbs().maxCoeff(&d);
        const double ext = b[d] - a[d];
        if (r.col(d).dot(view) > 0.0) {
          b[d] += ext;
        } else {
          a[d] -= ext;
        }
      }
      Vec3 s = (b - a).cwiseQuotient(tpl_ext).cwiseMax(1e-9);
      if (prm.uniform_scale) {
        // One scalar relative to the template's metric proportions.
        const Vec3 ratio = s.cwiseQuotient(shape);
        s = shape * std::cbrt(ratio.prod());
      }
      Pose9D p;
      p.rotation = r;
      p.scale = s;
      p.translation = r * (0.5 * (a + b) - s.cwiseProduct(tpl_mid));
      hyps[h * per_rot + variant] = p;
      scores[h * per_rot + variant] = objective(p);
    }
  });

  // Best few of each grid family (with or without the extension) go on to refinement,
  // and every principal-axes hypothesis: their coarse scores rank poorly before the
  // scale settles.
  std::vector<std::size_t> order;
  for (std::size_t family = 0; family < 2 * per_rot; ++family) {
    const std::size_t variant = family % per_rot;
    const std::size_t h0 = family < per_rot ? 0 : n_grid, h1 = family < per_rot ? n_grid : grid.size();
    if (h0 == h1) continue;
    std::vector<std::size_t> fam;
    for (std::size_t h = h0; h < h1; ++h) fam.push_back(h * per_rot + variant);
    std::stable_sort(fam.begin(), fam.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    if (family < per_rot) fam.resize(std::min<std::size_t>(std::max(1, prm.refine_top_k), fam.size()));
    order.insert(order.end(), fam.begin(), fam.end());
  }
  const std::size_t k = order.size();

  std::vector<Pose9D> refined(k);
  std::vector<double> refined_score(k);
  parallel_for(k, threads, [&](std::size_t c) {
    Pose9D pose = hyps[order[c]];
    double score = scores[order[c]];
    for (int it = 0; it < prm.refine_iterations; ++it) {
      std::vector<Vec3> canon_pts;
      canon_pts.reserve(score_pts.size());
      for (const auto& p : score_pts) canon_pts.push_back(pose.apply_inverse(p));
      CorrespondenceSet corr;
      for (int i = 0; i < static_cast<int>(canon_pts.size()); ++i) {
        const auto hit = tree.nearest(canon_pts[i]);
        corr.pairs.push_back({hit.index, i, std::sqrt(hit.dist_sq)});
      }
      RansacParams rp = prm.ransac;
      rp.seed = derive_seed(prm.seed, static_cast<std::uint64_t>(c * 1000 + it));
      rp.uniform_scale = prm.uniform_scale;
      rp.shape_scale = shape;
      Pose9D next;
      try {
        next = fit_pose9d(tpl, score_pts, corr, rp);
      } catch (const FitError&) {
        break;
      }
      const double s = objective(next);
      if (!(s <= score)) break;
      const bool converged = score - s < 1e-12;
      pose = next;
      score = s;
      if (converged) break;
    }
    refined[c] = pose;
    refined_score[c] = score;
  });
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (refined_score[c] < refined_score[best]) best = c;
  }
  // Selection includes the free-space penalty; the reported score is the plain fit.
  const double fit = detail::canonical_score(score_pts, refined[best], tree);
  if (!(fit <= prm.accept_chamfer)) {
    throw PredictionError("predict_nunocs: best canonical fit " + std::to_string(fit) + " exceeds acceptance bound");
  }
  NunocsPrediction out;
  out.pose = refined[best];
  out.score = fit;
  out.canonical_points.reserve(segment.size());
  for (const auto& p : segment.points) {
    out.canonical_points.push_back(out.pose.apply_inverse(p).cwiseMax(0.0).cwiseMin(1.0));
  }
  return out;
}

/// Smallest mean point error between predicted and ground-truth canonical
/// coordinates over the category's symmetry set.
inline double symmetric_coordinate_error(std::span<const Vec3> predicted, std::span<const Vec3> truth,
                                         const std::vector<Mat3>& symmetries) {
  if (predicted.size() != truth.size() || predicted.empty()) throw Error("coordinate error: size mismatch");
  const Vec3 c = Vec3::Constant(0.5);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : symmetries) {
    double e = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) e += (predicted[i] - (s * (truth[i] - c) + c)).norm();
    best = std::min(best, e / static_cast<double>(truth.size()));
  }
  return best;
}

}  // namespace catgrasp

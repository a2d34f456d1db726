#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/gripper.hpp"
#include "catgrasp/kdtree.hpp"
#include "catgrasp/log.hpp"
#include "catgrasp/mesh_query.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/parallel.hpp"
#include "catgrasp/rng.hpp"
#include "catgrasp/sampling.hpp"

namespace catgrasp {

struct Grasp {
  Pose6D pose;  // gripper frame expressed in the object / canonical / camera frame
  double width = 0.0;
  double quality = 0.0;
};

struct GraspOutcome {
  bool success = false;
  std::vector<int> contact_points;  // union of both fingers, sorted
  double closing_width = 0.0;
};

struct GraspParams {
  double contact_eps = 0.001;
  double clearance = 0.002;
  double antipodal_tol_deg = 15.0;
  double pregrasp_margin = 0.01;  // extra opening beyond the grasp width before closing
  double antipodal_line_radius = 0.0015;
  int attempts_per_grasp = 20;
};

struct PerturbParams {
  double sigma_t = 0.003;
  double sigma_r_deg = 5.0;
};

/// Object geometry prepared for repeated oracle calls. Immutable.
class GraspTarget {
 public:
  GraspTarget(TriMesh mesh, PointCloud cloud) : mesh_(std::move(mesh)), cloud_(std::move(cloud)) {
    if (!cloud_.has_normals()) throw Error("grasp target: cloud needs normals");
    tree_ = KdTree(cloud_.points);
  }
  const MeshIndex& mesh() const { return mesh_; }
  const PointCloud& cloud() const { return cloud_; }
  const KdTree& tree() const { return tree_; }

 private:
  MeshIndex mesh_;
  PointCloud cloud_;
  KdTree tree_;
};

inline double pregrasp_opening(const Grasp& g, const GripperModel& m, const GraspParams& p) {
  return std::min(m.max_opening, g.width + p.pregrasp_margin);
}

// ---------------------------------------------------------------------------
// Closing and force closure
// ---------------------------------------------------------------------------

struct ClosingResult {
  std::vector<int> right_contacts;
  std::vector<int> left_contacts;
  double closing_width = 0.0;
};

/// Closes both fingers from `opening` toward the center, each stopping at the first
/// cloud point in its footprint, then collects cloud points within contact_eps of
/// each finger mesh. No collision check.
inline ClosingResult close_gripper(const PointCloud& cloud, const KdTree& tree, const Pose6D& pose, double opening,
                                   const GripperIndex& gi, const GraspParams& prm) {
  ClosingResult out;
  const Mat3 to_local = gi.axes().transpose() * pose.rotation.transpose();
  const Vec3 origin = pose.translation;
  const double half = 0.5 * opening;
  const std::vector<int> near = tree.radius(origin, gi.reach());

  std::vector<std::pair<int, Vec3>> local;
  local.reserve(near.size());
  for (int i : near) local.emplace_back(i, to_local * (cloud.points[i] - origin));

  const auto in_footprint = [](const Aabb& b, const Vec3& u) {
    return u.y() >= b.lo.y() && u.y() <= b.hi.y() && u.z() >= b.lo.z() && u.z() <= b.hi.z();
  };
  // Right finger inner face sits at right_box.lo.x + offset; left at left_box.hi.x - offset.
  const double r_face0 = gi.right_box().lo.x(), l_face0 = gi.left_box().hi.x();
  double r_stop = -std::numeric_limits<double>::infinity();
  double l_stop = std::numeric_limits<double>::infinity();
  for (const auto& [i, u] : local) {
    if (in_footprint(gi.right_box(), u) && u.x() >= 0.0 && u.x() <= half + r_face0) r_stop = std::max(r_stop, u.x());
    if (in_footprint(gi.left_box(), u) && u.x() <= 0.0 && u.x() >= -half + l_face0) l_stop = std::min(l_stop, u.x());
  }
  const bool r_hit = std::isfinite(r_stop), l_hit = std::isfinite(l_stop);
  const double r_off = r_hit ? r_stop - r_face0 : 0.0;   // finger offset along closing
  const double l_off = l_hit ? l_stop - l_face0 : 0.0;
  out.closing_width = std::max(0.0, r_off - l_off);

  const auto collect = [&](const MeshIndex& finger, const Aabb& box, double off, std::vector<int>& dst) {
    const Aabb shifted{box.lo + Vec3(off, 0, 0) - Vec3::Constant(prm.contact_eps),
                       box.hi + Vec3(off, 0, 0) + Vec3::Constant(prm.contact_eps)};
    const Mat3 from_local_dir = gi.axes();
    for (const auto& [i, u] : local) {
      if (!shifted.contains(u)) continue;
      // Finger mesh coordinates: undo the axes change and the opening offset.
      const Vec3 g = from_local_dir * (u - Vec3(off, 0, 0));
      if (finger.signed_distance(g) <= prm.contact_eps) dst.push_back(i);
    }
    std::sort(dst.begin(), dst.end());
  };
  if (r_hit) collect(gi.right(), gi.right_box(), r_off, out.right_contacts);
  if (l_hit) collect(gi.left(), gi.left_box(), l_off, out.left_contacts);
  return out;
}

/// Two-contact antipodal force closure with friction cones of half-angle atan(mu).
/// `normals` are outward surface normals; contact forces push along the inward normal.
inline bool antipodal_force_closure(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                                    const std::vector<int>& right, const std::vector<int>& left, double mu) {
  const double cos_cone = std::cos(std::atan(mu));
  for (int r : right) {
    for (int l : left) {
      const Vec3 d = points[l] - points[r];
      const double len = d.norm();
      if (len <= 0.0) continue;
      const Vec3 u = d / len;
      if (u.dot(-normals[r]) >= cos_cone && (-u).dot(-normals[l]) >= cos_cone) return true;
    }
  }
  return false;
}

inline GraspOutcome grasp_oracle(const GraspTarget& target, const Grasp& grasp, const GripperIndex& gi,
                                 const GraspParams& prm) {
  GraspOutcome out;
  if (!grasp.pose.rotation.allFinite() || !grasp.pose.translation.allFinite()) return out;
  const double opening = pregrasp_opening(grasp, gi.model(), prm);
  if (gi.collides(target.mesh(), grasp.pose, opening)) return out;
  const ClosingResult c = close_gripper(target.cloud(), target.tree(), grasp.pose, opening, gi, prm);
  out.closing_width = c.closing_width;
  if (c.right_contacts.empty() || c.left_contacts.empty()) return out;
  if (!antipodal_force_closure(target.cloud().points, target.cloud().normals, c.right_contacts, c.left_contacts,
                               gi.model().friction_mu)) {
    return out;
  }
  out.success = true;
  std::set_union(c.right_contacts.begin(), c.right_contacts.end(), c.left_contacts.begin(), c.left_contacts.end(),
                 std::back_inserter(out.contact_points));
  return out;
}

inline GraspOutcome grasp_oracle(const TriMesh& object, const PointCloud& cloud, const Grasp& grasp,
                                 const GripperModel& gripper, const GraspParams& prm = {}) {
  return grasp_oracle(GraspTarget(object, cloud), grasp, GripperIndex(gripper), prm);
}

// ---------------------------------------------------------------------------
// Sampling and scoring
// ---------------------------------------------------------------------------

/// Gripper orientation putting the closing axis along `c` and the approach along `a`.
inline Mat3 grasp_rotation(const Vec3& c, const Vec3& a, const GripperModel& m) {
  Mat3 w;
  w.col(0) = c;
  w.col(1) = a.cross(c);
  w.col(2) = a;
  return w * m.axes().transpose();
}

struct SampleReport {
  std::vector<Grasp> grasps;
  std::size_t requested = 0;
  std::size_t attempts = 0;
};

/// Antipodal candidates: random surface point, search for an opposing point near the
/// line along the inward normal, random approach about the closing axis.
inline SampleReport sample_grasps_report(const PointCloud& cloud, const GripperModel& gripper, std::size_t n,
                                         std::uint64_t seed, const GraspParams& prm = {}) {
  if (!cloud.has_normals()) throw Error("sample_grasps: cloud needs normals");
  SampleReport rep;
  rep.requested = n;
  if (cloud.empty() || n == 0) return rep;
  const KdTree tree(cloud.points);
  const double cos_tol = std::cos(deg2rad(prm.antipodal_tol_deg));
  const double max_span = gripper.max_opening - prm.clearance;
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  const std::size_t budget = n * static_cast<std::size_t>(std::max(1, prm.attempts_per_grasp));
  while (rep.grasps.size() < n && rep.attempts < budget) {
    ++rep.attempts;
    const std::size_t i = pick(rng);
    const double theta = uniform(rng, 0.0, 2.0 * kPi);
    const Vec3& p1 = cloud.points[i];
    const Vec3 dir = -cloud.normals[i];
    if (!(max_span > 0.0)) continue;
    // Candidates inside the capsule around the search segment.
    const Vec3 mid = p1 + 0.5 * max_span * dir;
    int best = -1;
    double best_t = std::numeric_limits<double>::infinity();
    for (int j : tree.radius(mid, 0.5 * max_span + prm.antipodal_line_radius)) {
      const Vec3 v = cloud.points[j] - p1;
      const double t = v.dot(dir);
      if (t <= 1e-9 || t > max_span) continue;
      if ((v - t * dir).norm() > prm.antipodal_line_radius) continue;
      if (cloud.normals[j].dot(-cloud.normals[i]) < cos_tol) continue;
      if (t < best_t) {
        best_t = t;
        best = j;
      }
    }
    if (best < 0) continue;
    const Vec3 d = cloud.points[best] - p1;
    const double span = d.norm();
    const double width = span + prm.clearance;
    if (width > gripper.max_opening) continue;
    const Vec3 c = d / span;
    const Vec3 b1 = any_orthogonal(c);
    const Vec3 b2 = c.cross(b1);
    const Vec3 a = std::cos(theta) * b1 + std::sin(theta) * b2;
    Grasp g;
    g.pose.rotation = grasp_rotation(c, a, gripper);
    g.pose.translation = p1 + 0.5 * d;
    g.width = width;
    rep.grasps.push_back(g);
  }
  if (rep.grasps.size() < n) {
    log_warning("sample_grasps: found " + std::to_string(rep.grasps.size()) + " of " + std::to_string(n) +
                " grasps in " + std::to_string(rep.attempts) + " attempts");
  }
  return rep;
}

inline std::vector<Grasp> sample_grasps(const PointCloud& cloud, const GripperModel& gripper, std::size_t n,
                                        std::uint64_t seed, const GraspParams& prm = {}) {
  return sample_grasps_report(cloud, gripper, n, seed, prm).grasps;
}

inline Pose6D perturb_pose(const Pose6D& p, const PerturbParams& prm, Rng& rng) {
  Pose6D out;
  const double sr = deg2rad(prm.sigma_r_deg);
  const Vec3 w(gaussian(rng, sr), gaussian(rng, sr), gaussian(rng, sr));
  out.rotation = orthonormalize(exp_so3(w) * p.rotation);
  out.translation = p.translation + Vec3(gaussian(rng, prm.sigma_t), gaussian(rng, prm.sigma_t), gaussian(rng, prm.sigma_t));
  return out;
}

/// Empirical success rate over k Gaussian perturbations of the grasp pose.
inline double score_grasp(const GraspTarget& target, const Grasp& grasp, const GripperIndex& gi, int k,
                          const PerturbParams& perturb, std::uint64_t seed, const GraspParams& prm = {},
                          std::size_t threads = 1) {
  if (k < 1) throw Error("score_grasp: k must be >= 1");
  std::vector<char> ok(k, 0);
  parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t j) {
    Rng rng(derive_seed(seed, j));
    Grasp g = grasp;
    g.pose = perturb_pose(grasp.pose, perturb, rng);
    ok[j] = grasp_oracle(target, g, gi, prm).success;
  });
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / k;
}

// ---------------------------------------------------------------------------
// Grasp transfer between frames
// ---------------------------------------------------------------------------

/// Moves a grasp through an affine map whose rotational part is `rot`: the position
/// follows the full map, the orientation only `rot` (re-orthonormalized), and the
/// width scales with the stretch of the closing axis.
inline Grasp transfer_grasp(const Grasp& g, const AffineMap& map, const Mat3& rot, const GripperModel& m) {
  Grasp out = g;
  out.pose.translation = map.apply(g.pose.translation);
  out.pose.rotation = orthonormalize(rot * g.pose.rotation);
  const Vec3 c = g.pose.rotation * m.closing;
  out.width = g.width * (map.linear * c).norm();
  return out;
}

/// Exact inverse of transfer_grasp for the same (map, rot).
inline Grasp transfer_grasp_inverse(const Grasp& g, const AffineMap& map, const Mat3& rot, const GripperModel& m) {
  Grasp out = g;
  const AffineMap inv = map.inverse();
  out.pose.translation = inv.apply(g.pose.translation);
  out.pose.rotation = orthonormalize(rot.transpose() * g.pose.rotation);
  const Vec3 c = out.pose.rotation * m.closing;
  out.width = g.width / (map.linear * c).norm();
  return out;
}

/// Instance frame -> template canonical frame.
inline AffineMap instance_to_canonical(const CanonicalModel& canon, const std::string& id) {
  const auto f = canon.instance_frames.find(id);
  const auto p = canon.instance_poses.find(id);
  if (f == canon.instance_frames.end() || p == canon.instance_poses.end()) {
    throw Error("unknown instance id: " + id);
  }
  return AffineMap::from(p->second) * f->second.to_canonical();
}

inline Mat3 instance_to_canonical_rotation(const CanonicalModel& canon, const std::string& id) {
  return canon.instance_poses.at(id).rotation;
}

// ---------------------------------------------------------------------------
// Codebook
// ---------------------------------------------------------------------------

struct GraspCodebook {
  std::string category = "object";
  std::vector<Grasp> grasps;  // canonical frame
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> sampled;
  std::map<std::string, std::size_t> kept;
};

struct CodebookParams {
  std::size_t grasps_per_instance = 100;
  double keep_threshold = 0.5;
  int neighbors = 50;
  double sample_radius = 0.001;
  PerturbParams perturb;
  GraspParams grasp;
};

inline GraspCodebook build_codebook(const std::vector<TriMesh>& models, const std::vector<std::string>& ids,
                                    const CanonicalModel& canon, const GripperModel& gripper,
                                    const CodebookParams& prm, std::uint64_t seed, std::size_t threads = 1) {
  if (models.size() != ids.size()) throw Error("build_codebook: ids/models size mismatch");
  const GripperIndex gi(gripper);
  GraspCodebook book;
  book.category = canon.category;
  book.seed = seed;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::uint64_t s = derive_seed(seed, ids[i]);
    const PointCloud cloud = poisson_disk_sample(models[i], prm.sample_radius, derive_seed(s, "sample"));
    const GraspTarget target(models[i], cloud);
    const std::vector<Grasp> cands =
        sample_grasps(cloud, gripper, prm.grasps_per_instance, derive_seed(s, "grasps"), prm.grasp);
    std::vector<double> q(cands.size());
    parallel_for(cands.size(), threads, [&](std::size_t j) {
      q[j] = score_grasp(target, cands[j], gi, prm.neighbors, prm.perturb, derive_seed(s, j), prm.grasp);
    });
    const AffineMap map = instance_to_canonical(canon, ids[i]);
    const Mat3 rot = instance_to_canonical_rotation(canon, ids[i]);
    std::size_t kept = 0;
    for (std::size_t j = 0; j < cands.size(); ++j) {
      if (q[j] < prm.keep_threshold) continue;
      Grasp g = cands[j];
      g.quality = q[j];
      book.grasps.push_back(transfer_grasp(g, map, rot, gripper));
      ++kept;
    }
    book.sampled[ids[i]] = cands.size();
    book.kept[ids[i]] = kept;
    if (kept == 0) log_warning("build_codebook: instance " + ids[i] + " yielded no stable grasps; skipped");
  }
  if (book.grasps.empty()) throw Error("build_codebook: no instance yielded a stable grasp");
  return book;
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

enum class GraspSource { codebook, direct };

struct Proposal {
  Grasp grasp;  // camera frame
  GraspSource source = GraspSource::codebook;
};

struct ProposalParams {
  double max_approach_angle_deg = 75.0;
  Vec3 world_up = Vec3(0, 0, 1);  // expressed in the proposal (camera) frame
  double collision_margin = 0.002;
  double approach_distance = 0.15;  // length of the approach sweep behind the grasp
  std::size_t normal_neighbors = 12;
  GraspParams grasp;
};

struct ProposalReport {
  std::vector<Proposal> proposals;
  std::size_t from_codebook = 0;
  std::size_t from_direct = 0;
  std::size_t rejected_reach = 0;
  std::size_t rejected_collision = 0;
};

/// Approach direction within the cone around "down" (moving against world up).
inline bool reachable(const Grasp& g, const GripperModel& m, const ProposalParams& prm) {
  const Vec3 a = g.pose.rotation * m.approach;
  return (-a).dot(prm.world_up.normalized()) >= std::cos(deg2rad(prm.max_approach_angle_deg)) - 1e-12;
}

/// Boxes (in gripper-local closing/binormal/approach coordinates) swept by the open
/// gripper moving in along its approach axis, inflated by the margin.
inline std::array<Aabb, 3> swept_boxes(const GripperIndex& gi, double opening, const ProposalParams& prm) {
  const Vec3 r(0.5 * opening, 0, 0);
  std::array<Aabb, 3> out{Aabb{gi.right_box().lo + r, gi.right_box().hi + r},
                          Aabb{gi.left_box().lo - r, gi.left_box().hi - r}, gi.palm_box()};
  for (auto& b : out) {
    b.lo.z() -= prm.approach_distance;
    b = b.inflated(prm.collision_margin);
  }
  return out;
}

inline bool scene_collision(const Grasp& g, const PointCloud& scene, const KdTree& tree, const GripperIndex& gi,
                            const ProposalParams& prm) {
  const double opening = pregrasp_opening(g, gi.model(), prm.grasp);
  const auto boxes = swept_boxes(gi, opening, prm);
  Aabb all;
  for (const auto& b : boxes) all.extend(b);
  const double radius = all.lo.cwiseAbs().cwiseMax(all.hi.cwiseAbs()).norm();
  const Mat3 to_local = gi.axes().transpose() * g.pose.rotation.transpose();
  for (int i : tree.radius(g.pose.translation, radius)) {
    const Vec3 u = to_local * (scene.points[i] - g.pose.translation);
    for (const auto& b : boxes) {
      if (b.contains(u)) return true;
    }
  }
  return false;
}

/// Hybrid proposals: codebook grasps carried into the camera frame through `pose`,
/// plus direct antipodal samples on the segment, filtered by reachability and by the
/// swept open-gripper volume against the scene cloud.
inline ProposalReport propose_grasps(const PointCloud& segment, const Pose9D& pose, const GraspCodebook& book,
                                     const GripperIndex& gi, const PointCloud& scene, const KdTree& scene_tree,
                                     std::size_t n_direct, std::uint64_t seed, const ProposalParams& prm,
                                     std::size_t threads = 1) {
  ProposalReport rep;
  std::vector<Proposal> cands;
  const AffineMap map = AffineMap::from(pose);
  for (const auto& g : book.grasps) {
    Grasp c = transfer_grasp(g, map, pose.rotation, gi.model());
    c.width = std::clamp(c.width, 0.0, gi.model().max_opening);
    cands.push_back({c, GraspSource::codebook});
  }
  rep.from_codebook = cands.size();
  if (n_direct > 0 && segment.size() >= 3) {
    PointCloud seg = segment;
    if (!seg.has_normals()) seg.normals = estimate_normals(seg.points, prm.normal_neighbors, Vec3::Zero());
    for (const auto& g : sample_grasps(seg, gi.model(), n_direct, seed, prm.grasp)) {
      cands.push_back({g, GraspSource::direct});
      ++rep.from_direct;
    }
  }
  std::vector<char> verdict(cands.size(), 0);  // 0 ok, 1 reach, 2 collision
  parallel_for(cands.size(), threads, [&](std::size_t i) {
    if (!reachable(cands[i].grasp, gi.model(), prm)) {
      verdict[i] = 1;
    } else if (scene_collision(cands[i].grasp, scene, scene_tree, gi, prm)) {
      verdict[i] = 2;
    }
  });
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (verdict[i] == 1) {
      ++rep.rejected_reach;
    } else if (verdict[i] == 2) {
      ++rep.rejected_collision;
    } else {
      rep.proposals.push_back(cands[i]);
    }
  }
  return rep;
}

}  // namespace catgrasp

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/grasping.hpp"
#include "catgrasp/gripper.hpp"
#include "catgrasp/kdtree.hpp"
#include "catgrasp/log.hpp"
#include "catgrasp/mesh_query.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/parallel.hpp"

namespace catgrasp {

inline constexpr double kUnexplored = 0.5;

struct ContactHeatmap {
  PointCloud cloud;
  std::vector<int> n_g;
  std::vector<int> n_gt;
  std::vector<double> p;

  explicit ContactHeatmap(PointCloud c = {})
      : cloud(std::move(c)), n_g(cloud.size(), 0), n_gt(cloud.size(), 0), p(cloud.size(), kUnexplored) {}

  std::size_t size() const { return cloud.size(); }

  /// p = n_gt / n_g where touched, 0.5 elsewhere.
  void update_ratio() {
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = n_g[i] > 0 ? static_cast<double>(n_gt[i]) / n_g[i] : kUnexplored;
    }
  }

  void check() const {
    if (n_g.size() != size() || n_gt.size() != size() || p.size() != size()) {
      throw Error("heatmap: array sizes differ from cloud");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      if (n_g[i] < 0 || n_gt[i] < 0 || n_gt[i] > n_g[i]) throw Error("heatmap: count invariant violated");
      if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw Error("heatmap: probability out of range");
    }
  }
};

struct PlacementTask {
  TriMesh receptacle;
  std::vector<Pose6D> path;  // object poses in the receptacle frame, ending at the rest pose
  Pose6D rest;
  double tolerance = 0.001;

  void validate() const {
    if (receptacle.empty()) throw Error("placement task: empty receptacle");
    if (path.empty()) throw Error("placement task: empty insertion path");
    const Pose6D& last = path.back();
    if ((last.rotation - rest.rotation).norm() > 1e-9 || (last.translation - rest.translation).norm() > 1e-9) {
      throw Error("placement task: path must end at the rest pose");
    }
    if (!(tolerance > 0.0)) throw Error("placement task: tolerance must be positive");
  }
};

/// Straight vertical descent from `height` above the rest pose in `steps` equal moves.
inline std::vector<Pose6D> vertical_insertion(const Pose6D& rest, double height, int steps) {
  std::vector<Pose6D> path;
  for (int k = 0; k <= steps; ++k) {
    Pose6D p = rest;
    p.translation.z() += height * (steps - k) / steps;
    path.push_back(p);
  }
  path.back() = rest;
  return path;
}

/// Receptacle and object prepared for repeated placement checks. Immutable.
class PlacementContext {
 public:
  PlacementContext(const TriMesh& object, PlacementTask task) : task_(std::move(task)) {
    task_.validate();
    receptacle_ = MeshIndex(task_.receptacle);
    object_ = MeshIndex(object);
    com_ = volume_centroid(object);
  }
  const PlacementTask& task() const { return task_; }
  const MeshIndex& receptacle() const { return receptacle_; }
  const MeshIndex& object() const { return object_; }
  const Vec3& center_of_mass() const { return com_; }

 private:
  PlacementTask task_;
  MeshIndex receptacle_, object_;
  Vec3 com_ = Vec3::Zero();
};

namespace detail {

inline double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Counter-clockwise hull (monotone chain); collinear points dropped.
inline std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Eigen::Vector2d> h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(h[k - 2], h[k - 1], pts[i - 1]) <= 0) --k;
    h[k++] = pts[i - 1];
  }
  h.resize(k - 1);
  return h;
}

/// Signed distance from q to a CCW convex polygon boundary, negative inside.
inline double polygon_distance(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& q) {
  double inside = -std::numeric_limits<double>::infinity();
  double outside = 0.0;
  bool out = false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d a = poly[i], b = poly[(i + 1) % poly.size()];
    const Eigen::Vector2d e = b - a;
    const double side = cross2(a, b, q) / e.norm();  // > 0 left of edge = inside
    inside = std::max(inside, -side);
    if (side < 0) out = true;
  }
  if (!out) return inside;
  outside = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d a = poly[i], b = poly[(i + 1) % poly.size()];
    const double t = std::clamp((q - a).dot(b - a) / (b - a).squaredNorm(), 0.0, 1.0);
    outside = std::min(outside, (a + t * (b - a) - q).norm());
  }
  return outside;
}

}  // namespace detail

/// Object resting at `rest` is supported: the vertical projection of its center of mass
/// lies within `tolerance` of the convex hull of vertices touching the receptacle.
inline bool rest_stable(const PlacementContext& ctx) {
  const auto& task = ctx.task();
  std::vector<Eigen::Vector2d> support;
  for (const auto& v : ctx.object().mesh().vertices) {
    const Vec3 w = task.rest.apply(v);
    if (ctx.receptacle().closest(w).dist_sq <= task.tolerance * task.tolerance) support.emplace_back(w.x(), w.y());
  }
  const auto hull = detail::convex_hull(support);
  if (hull.size() < 3) return false;
  const Vec3 com = task.rest.apply(ctx.center_of_mass());
  return detail::polygon_distance(hull, Eigen::Vector2d(com.x(), com.y())) <= task.tolerance;
}

/// Kinematic placement: the gripper, rigidly attached at the grasp with the fingers at
/// the grasp width, must stay clear of the receptacle along the whole insertion path,
/// and the object must rest collision-free and supported at the end.
inline bool placement_check(const PlacementContext& ctx, const Grasp& grasp, const GripperIndex& gi) {
  const auto& task = ctx.task();
  for (const auto& obj_pose : task.path) {
    const Pose6D gripper_pose = obj_pose * grasp.pose;
    if (gi.collides(ctx.receptacle(), gripper_pose, grasp.width)) return false;
  }
  if (mesh_collision(ctx.receptacle(), Pose6D::identity(), ctx.object(), task.rest)) return false;
  return rest_stable(ctx);
}

inline bool placement_check(const TriMesh& object, const Grasp& grasp, const GripperModel& gripper,
                            const PlacementTask& task) {
  return placement_check(PlacementContext(object, task), grasp, GripperIndex(gripper));
}

struct DiscoverStats {
  std::size_t grasps = 0;
  std::size_t stable = 0;
  std::size_t placed = 0;
};

/// Self-supervised contact heatmap: every stable grasp increments n_g at its contacts,
/// and n_gt too when the subsequent placement succeeds.
inline ContactHeatmap discover_heatmap(const GraspTarget& target, const std::vector<Grasp>& grasps,
                                       const GripperIndex& gi, const PlacementContext& ctx,
                                       const GraspParams& prm = {}, std::size_t threads = 1,
                                       DiscoverStats* stats = nullptr) {
  ContactHeatmap hm(target.cloud());
  if (grasps.empty()) {
    log_warning("discover_heatmap: empty grasp list; heatmap left unexplored");
    return hm;
  }
  struct Trial {
    GraspOutcome outcome;
    bool placed = false;
  };
  std::vector<Trial> trials(grasps.size());
  parallel_for(grasps.size(), threads, [&](std::size_t i) {
    Trial& t = trials[i];
    t.outcome = grasp_oracle(target, grasps[i], gi, prm);
    if (!t.outcome.success) return;
    Grasp held = grasps[i];
    held.width = t.outcome.closing_width;
    t.placed = placement_check(ctx, held, gi);
  });
  DiscoverStats st;
  st.grasps = grasps.size();
  for (const auto& t : trials) {
    if (!t.outcome.success) continue;
    ++st.stable;
    st.placed += t.placed;
    for (int c : t.outcome.contact_points) {
      ++hm.n_g[c];
      if (t.placed) ++hm.n_gt[c];
    }
  }
  hm.update_ratio();
  hm.check();
  if (stats) *stats = st;
  return hm;
}

enum class AggregateMode { average, pool };

struct InstanceHeatmap {
  std::string instance_id;
  ContactHeatmap heatmap;  // cloud in the instance frame
};

/// Carries instance heatmaps into the canonical frame and onto the nearest template
/// point. `average` takes the mean of contributed p values; `pool` sums counts and
/// takes their ratio. Template points without contributions stay at 0.5.
inline ContactHeatmap aggregate_heatmaps(const std::vector<InstanceHeatmap>& per_instance, const CanonicalModel& canon,
                                         AggregateMode mode = AggregateMode::average) {
  PointCloud tpl;
  tpl.points = canon.template_cloud.points;
  tpl.normals = canon.template_cloud.normals;
  ContactHeatmap out(tpl);
  std::vector<double> sum(out.size(), 0.0);
  std::vector<int> hits(out.size(), 0);
  const KdTree& tree = canon.template_tree();
  for (const auto& inst : per_instance) {
    const AffineMap map = instance_to_canonical(canon, inst.instance_id);
    const auto& hm = inst.heatmap;
    for (std::size_t i = 0; i < hm.size(); ++i) {
      const int j = tree.nearest(map.apply(hm.cloud.points[i])).index;
      sum[j] += hm.p[i];
      ++hits[j];
      out.n_g[j] += hm.n_g[i];
      out.n_gt[j] += hm.n_gt[i];
    }
  }
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (mode == AggregateMode::average) {
      out.p[j] = hits[j] > 0 ? sum[j] / hits[j] : kUnexplored;
    } else {
      out.p[j] = out.n_g[j] > 0 ? static_cast<double>(out.n_gt[j]) / out.n_g[j] : kUnexplored;
    }
  }
  return out;
}

/// Template mesh and cloud carried into the camera frame by a 9D pose.
inline GraspTarget transformed_template(const CanonicalModel& canon, const Pose9D& pose) {
  PointCloud c;
  c.points = canon.template_cloud.points;
  c.normals = canon.template_cloud.normals;
  return GraspTarget(transform_mesh(canon.template_mesh, pose), transform_cloud(c, pose));
}

struct RelevanceParams {
  double no_contact_value = 0.0;
  GraspParams grasp;
};

/// Mean canonical heatmap value over the contacts the gripper makes with the
/// transformed template. `target` must be transformed_template(canon, pose).
inline double task_relevance(const Grasp& grasp, const GraspTarget& target, const ContactHeatmap& canonical,
                             const GripperIndex& gi, const RelevanceParams& prm = {},
                             std::vector<int>* contacts_out = nullptr) {
  if (canonical.size() != target.cloud().size()) throw Error("task_relevance: heatmap does not match template");
  const double opening = pregrasp_opening(grasp, gi.model(), prm.grasp);
  const ClosingResult c = close_gripper(target.cloud(), target.tree(), grasp.pose, opening, gi, prm.grasp);
  std::vector<int> contacts;
  std::set_union(c.right_contacts.begin(), c.right_contacts.end(), c.left_contacts.begin(), c.left_contacts.end(),
                 std::back_inserter(contacts));
  if (contacts_out) *contacts_out = contacts;
  if (contacts.empty()) return prm.no_contact_value;
  // Running mean: a constant heatmap gives exactly that constant, so ties in P(G) stay ties.
  double m = 0.0;
  double k = 0.0;
  for (int i : contacts) m += (canonical.p[i] - m) / ++k;
  return m;
}

inline double task_relevance(const Grasp& grasp, const Pose9D& pose, const CanonicalModel& canon,
                             const ContactHeatmap& heatmap, const GripperModel& gripper,
                             const RelevanceParams& prm = {}) {
  return task_relevance(grasp, transformed_template(canon, pose), heatmap, GripperIndex(gripper), prm);
}

inline double joint_score(double p_g, double p_tg) {
  if (!(p_g >= 0.0 && p_g <= 1.0 && p_tg >= 0.0 && p_tg <= 1.0)) throw Error("joint_score: inputs must be in [0,1]");
  return p_g * p_tg;
}

// ---------------------------------------------------------------------------
// Demo task: screw into a plate with a through-hole
// ---------------------------------------------------------------------------

struct ScrewTaskParams {
  double plate_side = 0.06;
  double plate_thickness = 0.005;
  double hole_radius = 0.005;
  double rest_gap = 1e-4;
  double approach_height = 0.05;
  int path_steps = 50;
  double tolerance = 0.001;
};

/// Screw (head underside at its origin) dropped thread-first into the hole; the rest
/// pose has the head sitting on the plate.
inline PlacementTask make_screw_task(const ScrewTaskParams& p = {}) {
  PlacementTask t;
  t.receptacle = shapes::plate_with_hole(p.plate_side, p.plate_thickness, p.hole_radius, 24);
  t.rest.translation = Vec3(0, 0, p.rest_gap);
  t.path = vertical_insertion(t.rest, p.approach_height, p.path_steps);
  t.tolerance = p.tolerance;
  return t;
}

}  // namespace catgrasp

#pragma once

#include <array>
#include <memory>

#include "catgrasp/geometry.hpp"
#include "catgrasp/mesh_query.hpp"
#include "catgrasp/shapes.hpp"

namespace catgrasp {

/// Parallel-jaw gripper. Meshes live in the gripper frame with the fingers at zero
/// opening: the right finger occupies the +closing side of the plane through the
/// origin, the left finger the -closing side. The grasp center is the origin.
struct GripperModel {
  TriMesh left_finger;
  TriMesh right_finger;
  TriMesh palm;
  double max_opening = 0.05;
  double finger_depth = 0.02;
  Vec3 approach = Vec3::UnitZ();
  Vec3 closing = Vec3::UnitX();
  double friction_mu = 0.4;

  /// Columns: closing, approach x closing, approach.
  Mat3 axes() const {
    Mat3 a;
    a.col(0) = closing;
    a.col(1) = approach.cross(closing);
    a.col(2) = approach;
    return a;
  }

  void validate() const {
    if (!(max_opening > 0.0)) throw Error("gripper: max_opening must be positive");
    if (!(friction_mu >= 0.0)) throw Error("gripper: friction_mu must be non-negative");
    if (std::abs(approach.norm() - 1.0) > 1e-9 || std::abs(closing.norm() - 1.0) > 1e-9 ||
        std::abs(approach.dot(closing)) > 1e-9) {
      throw Error("gripper: approach and closing axes must be orthogonal unit vectors");
    }
    if (left_finger.empty() || right_finger.empty() || palm.empty()) throw Error("gripper: missing mesh");
  }
};

struct GripperDims {
  double max_opening = 0.05;
  double finger_depth = 0.02;      // palm face to fingertip
  double tip_extension = 0.004;    // fingertip beyond the grasp center along approach
  double finger_thickness = 0.006; // along closing
  double finger_width = 0.008;     // across closing
  double palm_height = 0.01;
  double friction_mu = 0.4;
};

/// Box-finger gripper with approach +z and closing +x.
inline GripperModel make_box_gripper(const GripperDims& d = {}) {
  GripperModel g;
  const double z1 = d.tip_extension, z0 = d.tip_extension - d.finger_depth;
  const double hw = 0.5 * d.finger_width;
  g.right_finger = shapes::box_between(Vec3(0, -hw, z0), Vec3(d.finger_thickness, hw, z1));
  g.left_finger = shapes::box_between(Vec3(-d.finger_thickness, -hw, z0), Vec3(0, hw, z1));
  const double px = 0.5 * d.max_opening + d.finger_thickness;
  g.palm = shapes::box_between(Vec3(-px, -hw - 0.002, z0 - d.palm_height), Vec3(px, hw + 0.002, z0));
  g.max_opening = d.max_opening;
  g.finger_depth = d.finger_depth;
  g.friction_mu = d.friction_mu;
  return g;
}

/// Precomputed collision structures and finger footprints. Immutable.
class GripperIndex {
 public:
  explicit GripperIndex(GripperModel m) : model_(std::move(m)) {
    model_.validate();
    axes_ = model_.axes();
    left_ = MeshIndex(model_.left_finger);
    right_ = MeshIndex(model_.right_finger);
    palm_ = MeshIndex(model_.palm);
    right_box_ = local_box(model_.right_finger);
    left_box_ = local_box(model_.left_finger);
    palm_box_ = local_box(model_.palm);
  }

  const GripperModel& model() const { return model_; }
  const Mat3& axes() const { return axes_; }
  const MeshIndex& left() const { return left_; }
  const MeshIndex& right() const { return right_; }
  const MeshIndex& palm() const { return palm_; }
  /// Bounds in (closing, binormal, approach) coordinates at zero opening.
  const Aabb& right_box() const { return right_box_; }
  const Aabb& left_box() const { return left_box_; }
  const Aabb& palm_box() const { return palm_box_; }

  /// Gripper-frame pose of a finger at the given opening.
  Pose6D finger_offset(bool right, double opening) const {
    return {Mat3::Identity(), (right ? 0.5 : -0.5) * opening * model_.closing};
  }

  /// Radius of a ball around the grasp center containing the gripper at max opening.
  double reach() const {
    double r = 0.0;
    for (const Aabb* b : {&right_box_, &left_box_, &palm_box_}) {
      for (int k = 0; k < 8; ++k) {
        const Vec3 c((k & 1) ? b->hi.x() : b->lo.x(), (k & 2) ? b->hi.y() : b->lo.y(),
                     (k & 4) ? b->hi.z() : b->lo.z());
        r = std::max(r, (c + Vec3(0.5 * model_.max_opening, 0, 0)).norm());
        r = std::max(r, (c - Vec3(0.5 * model_.max_opening, 0, 0)).norm());
      }
    }
    return r;
  }

  /// Whether the open gripper at `pose` (gripper -> object frame) touches `object`.
  bool collides(const MeshIndex& object, const Pose6D& pose, double opening) const {
    const Pose6D id = Pose6D::identity();
    return mesh_collision(object, id, palm_, pose) ||
           mesh_collision(object, id, right_, pose * finger_offset(true, opening)) ||
           mesh_collision(object, id, left_, pose * finger_offset(false, opening));
  }

 private:
  Aabb local_box(const TriMesh& m) const {
    Aabb b;
    for (const auto& v : m.vertices) b.extend(axes_.transpose() * v);
    return b;
  }

  GripperModel model_;
  Mat3 axes_ = Mat3::Identity();
  MeshIndex left_, right_, palm_;
  Aabb right_box_, left_box_, palm_box_;
};

}  // namespace catgrasp

#include <gtest/gtest.h>

#include "catgrasp/nunocs.hpp"
#include "catgrasp/shapes.hpp"
#include "oracles.hpp"

using namespace catgrasp;

namespace {

std::vector<Vec3> random_cloud(Rng& rng, std::size_t n) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(uniform01(rng), uniform01(rng), uniform01(rng));
  return pts;
}

Pose9D random_pose(Rng& rng) {
  Pose9D p;
  p.rotation = random_rotation(rng);
  p.translation = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
  p.scale = Vec3(uniform(rng, 0.3, 3.0), uniform(rng, 0.3, 3.0), uniform(rng, 0.3, 3.0));
  return p;
}

// Per-axis scale is only identifiable up to the signed-axis ambiguity of R diag(s);
// compare the full linear map instead.
double linear_error(const Pose9D& a, const Pose9D& b) { return (a.linear() - b.linear()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(ToNunocs, KnownBox) {
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(2, 4, 6), Vec3(1, 2, 3)};
  const NunocsCloud n = to_nunocs(c);
  EXPECT_TRUE(n.points[0].isApprox(Vec3(0, 0, 0)));
  EXPECT_TRUE(n.points[1].isApprox(Vec3(1, 1, 1)));
  EXPECT_TRUE(n.points[2].isApprox(Vec3(0.5, 0.5, 0.5)));
  EXPECT_TRUE(n.source_extents.isApprox(Vec3(2, 4, 6)));
}

TEST(ToNunocs, ZeroExtentThrows) {
  PointCloud c;
  c.points = {Vec3(0, 0, 1), Vec3(1, 1, 1)};
  EXPECT_THROW(to_nunocs(c), Error);
}

TEST(ToNunocs, RoundTripWithNormals) {
  Rng rng(3);
  PointCloud c = sample_surface_uniform(shapes::box(Vec3(0.02, 0.05, 0.1)), 300, rng);
  const NunocsCloud n = to_nunocs(c);
  for (const auto& p : n.points) {
    EXPECT_GE(p.minCoeff(), 0.0);
    EXPECT_LE(p.maxCoeff(), 1.0);
  }
  const PointCloud back = denormalize(n);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_LT((back.points[i] - c.points[i]).norm(), 1e-12);
    EXPECT_LT((back.normals[i] - c.normals[i]).norm(), 1e-12);
  }
}

TEST(FitPose9d, ExactRecovery) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto src = random_cloud(rng, 200);
    const Pose9D gt = random_pose(rng);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(gt.apply(p));
    RansacParams prm;
    prm.seed = trial;
    const Pose9D fit = fit_pose9d(src, dst, prm);
    EXPECT_LT(linear_error(fit, gt), 1e-6);
    EXPECT_LT((fit.translation - gt.translation).norm(), 1e-6);
  }
}

TEST(FitPose9d, SpecScaleExample) {
  Rng rng(5);
  const auto src = random_cloud(rng, 300);
  Pose9D gt;
  gt.rotation = axis_angle(Vec3(1, 2, 3).normalized(), 0.7);
  gt.scale = Vec3(1.5, 0.7, 2.0);
  gt.translation = Vec3(0.1, -0.2, 0.3);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(gt.apply(p));
  const Pose9D fit = fit_pose9d(src, dst, RansacParams{});
  EXPECT_LT((fit.scale - gt.scale).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fit.rotation - gt.rotation).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitPose9d, ThirtyPercentOutliers) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = random_cloud(rng, 200);
    const Pose9D gt = random_pose(rng);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(gt.apply(p));
    for (std::size_t i = 0; i < 60; ++i) {
      dst[i] = Vec3(uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3));
    }
    RansacParams prm;
    prm.seed = trial;
    const Pose9D fit = fit_pose9d(src, dst, prm);
    EXPECT_LT(linear_error(fit, gt), 1e-3);
    EXPECT_LT((fit.translation - gt.translation).norm(), 1e-3);
  }
}

TEST(FitPose9d, TooFewInliersThrows) {
  Rng rng(2);
  const auto src = random_cloud(rng, 100);
  const auto dst = random_cloud(rng, 100);
  RansacParams prm;
  prm.inlier_threshold = 1e-4;
  EXPECT_THROW(fit_pose9d(src, dst, prm), FitError);
}

TEST(FitPose9d, UniformScaleIsProportional) {
  Rng rng(8);
  const auto src = random_cloud(rng, 150);
  Pose9D gt;
  gt.rotation = random_rotation(rng);
  gt.scale = Vec3(1.2, 1.2, 1.2);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(gt.apply(p));
  RansacParams prm;
  prm.uniform_scale = true;
  const Pose9D fit = fit_pose9d(src, dst, prm);
  EXPECT_NEAR(fit.scale.x(), 1.2, 1e-6);
  EXPECT_NEAR(fit.scale.y(), fit.scale.z(), 1e-12);
}

TEST(FitPose9d, Deterministic) {
  Rng rng(4);
  const auto src = random_cloud(rng, 100);
  auto dst = src;
  for (auto& p : dst) p = 2.0 * p + Vec3(gaussian(rng, 0.002), gaussian(rng, 0.002), 0);
  RansacParams prm;
  prm.seed = 9;
  const Pose9D a = fit_pose9d(src, dst, prm), b = fit_pose9d(src, dst, prm);
  EXPECT_EQ(a.linear(), b.linear());
  EXPECT_EQ(a.translation, b.translation);
}

TEST(Canonical, PicksSphereAmongSphereSphereCube) {
  const auto s = shapes::icosphere(0.05, 3);
  const auto c = shapes::box(Vec3(0.1, 0.1, 0.1));
  CanonicalBuildParams prm;
  prm.sample_radius = 0.008;
  std::vector<std::string> warnings;
  const auto old = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  const CanonicalModel m = build_canonical({s, s, c}, {"a", "b", "c"}, prm);
  set_warning_sink(old);
  EXPECT_EQ(m.template_index, 0);
  EXPECT_TRUE(m.instance_poses.at("a").linear().isIdentity(1e-12));
  // Chamfer between the two identical spheres is exactly zero.
  EXPECT_NEAR(m.chamfer_sums[0], m.chamfer_sums[1], 1e-15);
  EXPECT_GT(m.chamfer_sums[2], m.chamfer_sums[0]);
}

TEST(Canonical, CorrespondMatchesBruteForce) {
  const auto s = shapes::screw({});
  shapes::ScrewParams p2;
  p2.head_radius = 0.006;
  CanonicalBuildParams prm;
  prm.sample_radius = 0.001;
  const CanonicalModel m = build_canonical({s, shapes::screw(p2)}, {"a", "b"}, prm);
  Rng rng(1);
  const auto q = random_cloud(rng, 200);
  const auto corr = correspond(q, m);
  for (const auto& c : corr.pairs) {
    const auto o = oracle::nearest(m.template_cloud.points, q[c.observed]);
    EXPECT_EQ(c.target, o.index);
    EXPECT_NEAR(c.distance, o.dist, 1e-12);
  }
}

TEST(Canonical, CorrespondInvariantToAnisotropicScale) {
  const auto s = shapes::screw({});
  const CanonicalModel m = build_canonical({s, s}, {"a", "b"}, {.sample_radius = 0.001});
  Rng rng(6);
  PointCloud obs = sample_surface_uniform(s, 300, rng);
  const auto base = correspond(to_nunocs(obs, nunocs_frame(s.vertices)).points, m);
  Pose9D stretch;
  stretch.scale = Vec3(0.8, 1.7, 2.6);
  const TriMesh s2 = transform_mesh(s, stretch);
  const PointCloud obs2 = transform_cloud(obs, stretch);
  const auto other = correspond(to_nunocs(obs2, nunocs_frame(s2.vertices)).points, m);
  for (std::size_t i = 0; i < base.pairs.size(); ++i) EXPECT_EQ(base.pairs[i].target, other.pairs[i].target);
}

TEST(RotationGrid, SizeAndOrthonormal) {
  const auto g = rotation_grid(24, 24);
  ASSERT_EQ(g.size(), 576u);
  for (const auto& r : g) EXPECT_TRUE(is_rotation(r));
}

TEST(Predict, RecoversPoseOfFullInstance) {
  const auto s = shapes::screw({});
  const CanonicalModel m = build_canonical({s, s}, {"a", "b"}, {.sample_radius = 0.0008});
  Rng rng(12);
  const PointCloud model_cloud = poisson_disk_sample(s, 0.001, 3);
  Pose9D place;
  place.rotation = random_rotation(rng);
  place.translation = Vec3(0.1, 0.0, 0.5);
  const PointCloud cam = transform_cloud(model_cloud, place);
  const NunocsPrediction pred = predict_nunocs(cam, m, AlignParams{});
  EXPECT_LT(pred.score, 0.05);
  // Spin about the screw axis is unobservable, so compare scale, axis and center.
  const NunocsFrame f = m.instance_frames.at("a");
  EXPECT_LT((pred.pose.scale - f.extent).cwiseQuotient(f.extent).cwiseAbs().maxCoeff(), 0.03);
  EXPECT_GT(pred.pose.rotation.col(2).dot(place.rotation.col(2)), 0.999);
  const Vec3 c = Vec3::Constant(0.5);
  EXPECT_LT((pred.pose.apply(c) - place.apply(f.denormalize(c))).norm(), 5e-4);
}

TEST(SymmetricError, PicksBestSymmetry) {
  const std::vector<Vec3> truth{Vec3(0.1, 0.2, 0.3), Vec3(0.9, 0.4, 0.7)};
  const Mat3 flip = axis_angle(Vec3::UnitZ(), kPi);
  std::vector<Vec3> pred;
  for (const auto& p : truth) pred.push_back(flip * (p - Vec3::Constant(0.5)) + Vec3::Constant(0.5));
  EXPECT_GT(symmetric_coordinate_error(pred, truth, {Mat3::Identity()}), 0.1);
  EXPECT_NEAR(symmetric_coordinate_error(pred, truth, {Mat3::Identity(), flip}), 0.0, 1e-12);
}

TEST(Predict, RejectsForeignShape) {
  const auto s = shapes::screw({});
  const CanonicalModel m = build_canonical({s, s}, {"a", "b"}, {.sample_radius = 0.0008});
  const PointCloud plate = poisson_disk_sample(shapes::box(Vec3(0.2, 0.2, 0.001)), 0.004, 1);
  EXPECT_THROW(predict_nunocs(plate, m, AlignParams{}), PredictionError);
}

namespace {

TriMesh l_bracket() {
  const std::vector<TriMesh> parts{shapes::box_between(Vec3(0, 0, 0), Vec3(0.04, 0.02, 0.01)),
                                   shapes::box_between(Vec3(0, 0, 0.01), Vec3(0.01, 0.02, 0.03))};
  return merge_meshes(parts);
}

}  // namespace

TEST(Predict, FullTemplateCloudAtKnownPose) {
  const TriMesh l = l_bracket();
  const CanonicalModel m = build_canonical({l, l}, {"a", "b"}, {.sample_radius = 0.001});
  const PointCloud full = denormalize(m.template_cloud);
  const NunocsFrame f = m.instance_frames.at("a");
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    Pose9D place;
    place.rotation = random_rotation(rng);
    place.translation = Vec3(0.1, 0.0, 0.5);
    const NunocsPrediction pred = predict_nunocs(transform_cloud(full, place), m, AlignParams{});
    EXPECT_LT((pred.pose.rotation - place.rotation).norm(), 1e-3);
    EXPECT_LT((pred.pose.translation - place.apply(f.min)).norm(), 1e-3);
    EXPECT_LT((pred.pose.scale - f.extent).norm(), 1e-3);
  }
}

TEST(Predict, HalfViewOfTemplateAtIdentity) {
  const TriMesh l = l_bracket();
  const CanonicalModel m = build_canonical({l, l}, {"a", "b"}, {.sample_radius = 0.001});
  const PointCloud full = denormalize(m.template_cloud);
  PointCloud half;
  const Vec3 view = Vec3(1, 1, 1).normalized();
  // Camera at the origin looking down -view at the part 0.5 m away.
  const Vec3 shift = -0.5 * view;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full.normals[i].dot(view) > 0.0) {
      half.points.push_back(full.points[i] + shift);
      half.normals.push_back(full.normals[i]);
    }
  }
  const NunocsPrediction pred = predict_nunocs(half, m, AlignParams{});
  const NunocsFrame f = m.instance_frames.at("a");
  EXPECT_LT((pred.pose.rotation - Mat3::Identity()).norm(), 1e-3);
  EXPECT_LT((pred.pose.translation - (f.min + shift)).norm(), 1e-3);
  EXPECT_LT((pred.pose.scale - f.extent).norm(), 1e-3);
}

TEST(Predict, Deterministic) {
  const TriMesh l = l_bracket();
  const CanonicalModel m = build_canonical({l, l}, {"a", "b"}, {.sample_radius = 0.001});
  Pose9D place;
  place.rotation = axis_angle(Vec3(0.3, 1, 0).normalized(), 1.1);
  const PointCloud cam = transform_cloud(poisson_disk_sample(l, 0.0012, 4), place);
  const auto a = predict_nunocs(cam, m, AlignParams{}, 1);
  const auto b = predict_nunocs(cam, m, AlignParams{}, 3);
  EXPECT_EQ(a.pose.linear(), b.pose.linear());
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.score, b.score);
}

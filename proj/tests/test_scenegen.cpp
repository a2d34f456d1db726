#include <gtest/gtest.h>

#include <set>

#include "catgrasp/scenegen.hpp"
#include "catgrasp/shapes.hpp"
#include "oracles.hpp"

using namespace catgrasp;

namespace {

std::vector<ModelEntry> screw_models() {
  shapes::ScrewParams a, b;
  b.shaft_length = 0.036;
  b.head_radius = 0.0065;
  return {{"screw_a", shapes::screw(a)}, {"screw_b", shapes::screw(b)}};
}

// Camera at the world origin looking along +z; the bin is parked behind it.
Scene open_scene() {
  Scene s;
  s.camera.intrinsics = Intrinsics{50.0, 50.0, 50.0, 40.0, 101, 81};
  s.camera.pose = Pose6D::identity();
  s.bin_pose.translation = Vec3(0, 0, -10.0);
  return s;
}

}  // namespace

TEST(GenerateScene, SpheresRestOnTheFloor) {
  const double r = 0.01;
  const std::vector<ModelEntry> models{{"ball", shapes::icosphere(r, 3)}};
  SceneGenParams prm;
  prm.count_min = prm.count_max = 3;
  prm.bin.size_x = prm.bin.size_y = 0.4;
  const Scene s = generate_scene(models, prm, 11);
  ASSERT_EQ(s.instances.size(), 3u);
  for (const auto& inst : s.instances) {
    // Convex body on a plane rests on its lowest support point.
    double lowest = 0.0;
    for (const auto& v : models[0].mesh.vertices) lowest = std::min(lowest, (inst.pose.rotation * v).z());
    EXPECT_NEAR(inst.pose.translation.z(), -lowest, 1e-7);
    EXPECT_NEAR(inst.pose.translation.z(), r, 0.02 * r);
  }
}

TEST(GenerateScene, SingleInstanceInsideWalls) {
  const auto models = screw_models();
  SceneGenParams prm;
  prm.count_min = prm.count_max = 1;
  const Scene s = generate_scene(models, prm, 3);
  ASSERT_EQ(s.instances.size(), 1u);
  EXPECT_TRUE(scene_collision_free(s, models));
  const auto meshes = instance_meshes(s, models);
  const Aabb b = bounds(meshes[0].vertices);
  EXPECT_GT(b.lo.x(), -0.5 * prm.bin.size_x);
  EXPECT_LT(b.hi.x(), 0.5 * prm.bin.size_x);
  EXPECT_GT(b.lo.y(), -0.5 * prm.bin.size_y);
  EXPECT_LT(b.hi.y(), 0.5 * prm.bin.size_y);
  EXPECT_GT(b.lo.z(), 0.0);
  EXPECT_LT(b.lo.z(), 0.002);  // settled, not floating
}

TEST(GenerateScene, ClutterIsCollisionFreeAndScaled) {
  const auto models = screw_models();
  SceneGenParams prm;
  prm.scale_min = Vec3(1.0, 1.0, 2.0);
  prm.scale_max = Vec3(1.0, 1.0, 3.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Scene s = generate_scene(models, prm, seed);
    EXPECT_GE(s.instances.size(), 4u);
    EXPECT_LE(s.instances.size(), 6u);
    EXPECT_TRUE(scene_collision_free(s, models));
    for (const auto& inst : s.instances) {
      EXPECT_DOUBLE_EQ(inst.scale.x(), 1.0);
      EXPECT_GE(inst.scale.z(), 2.0);
      EXPECT_LE(inst.scale.z(), 3.0);
    }
  }
}

TEST(GenerateScene, Deterministic) {
  const auto models = screw_models();
  const SceneGenParams prm;
  const Scene a = generate_scene(models, prm, 42), b = generate_scene(models, prm, 42);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    EXPECT_EQ(a.instances[i].model_id, b.instances[i].model_id);
    EXPECT_EQ(a.instances[i].pose.rotation, b.instances[i].pose.rotation);
    EXPECT_EQ(a.instances[i].pose.translation, b.instances[i].pose.translation);
    EXPECT_EQ(a.instances[i].scale, b.instances[i].scale);
  }
  EXPECT_EQ(a.camera.pose.translation, b.camera.pose.translation);
}

TEST(GenerateScene, RejectsBadInput) {
  EXPECT_THROW(generate_scene({}, SceneGenParams{}, 0), Error);
  SceneGenParams prm;
  prm.count_min = 3;
  prm.count_max = 2;
  EXPECT_THROW(generate_scene(screw_models(), prm, 0), Error);
  // Object larger than the bin can never be placed.
  SceneGenParams tiny;
  tiny.bin.size_x = tiny.bin.size_y = 0.005;
  tiny.placement_attempts = 3;
  tiny.scene_retries = 2;
  int warnings = 0;
  const auto old = set_warning_sink([&](const std::string&) { ++warnings; });
  EXPECT_THROW(generate_scene(screw_models(), tiny, 0), Error);
  set_warning_sink(old);
  EXPECT_EQ(warnings, 2);
}

TEST(RenderDepth, CubeOnAxis) {
  Scene s = open_scene();
  const std::vector<ModelEntry> models{{"cube", shapes::box(Vec3::Ones())}};
  s.instances.push_back({"cube", Pose6D{Mat3::Identity(), Vec3(0, 0, 1.5)}, Vec3::Ones()});
  const Rendered r = render_depth(s, models);
  EXPECT_DOUBLE_EQ(r.depth.at(50, 40), 1.0);
  EXPECT_EQ(r.gt.pixel_instance[40 * 101 + 50], 0);
  // Corner ray leaves at x/z = -1 and misses the unit cube.
  EXPECT_EQ(r.depth.at(0, 0), 0.0);
}

TEST(RenderDepth, EmptySceneIsZero) {
  const Scene s = open_scene();
  const Rendered r = render_depth(s, {});
  for (double d : r.depth.data) EXPECT_EQ(d, 0.0);
  EXPECT_TRUE(r.cloud.empty());
}

TEST(RenderDepth, CameraInsideThrows) {
  Scene s = open_scene();
  const std::vector<ModelEntry> models{{"cube", shapes::box(Vec3::Ones())}};
  s.instances.push_back({"cube", Pose6D::identity(), Vec3::Ones()});
  EXPECT_THROW(render_depth(s, models), Error);
}

TEST(RenderDepth, MatchesBruteForceRaycast) {
  const auto models = screw_models();
  const Scene s = generate_scene(models, SceneGenParams{}, 5);
  const Rendered r = render_depth(s, models);
  const CameraGeometry geo = camera_geometry(s, models);
  const Intrinsics& K = s.camera.intrinsics;
  Rng rng(9);
  int hits = 0;
  for (int k = 0; k < 50; ++k) {
    const int u = std::uniform_int_distribution<int>(0, K.width - 1)(rng);
    const int v = std::uniform_int_distribution<int>(0, K.height - 1)(rng);
    const Vec3 dir = Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0).normalized();
    const double t = oracle::raycast({geo.mesh}, Vec3::Zero(), dir);
    const double expect = std::isfinite(t) ? t * dir.z() : 0.0;
    EXPECT_NEAR(r.depth.at(u, v), expect, 1e-9) << u << "," << v;
    hits += expect > 0.0;
  }
  EXPECT_GT(hits, 15);
}

TEST(RenderDepth, GroundTruthInvariants) {
  const auto models = screw_models();
  SceneGenParams prm;
  prm.scale_max = Vec3(1.0, 1.5, 2.0);
  const Scene s = generate_scene(models, prm, 8);
  const Rendered r = render_depth(s, models);
  const auto& gt = r.gt;
  const std::size_t n = r.cloud.size();
  ASSERT_EQ(gt.instance.size(), n);
  ASSERT_EQ(gt.offsets.size(), n);
  ASSERT_EQ(gt.nunocs.size(), n);
  ASSERT_EQ(gt.poses.size(), s.instances.size());
  std::set<int> seen;
  const Intrinsics& K = s.camera.intrinsics;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = r.cloud.points[i];
    const int pix = gt.point_pixel[i];
    const int u = pix % K.width, v = pix / K.width;
    // Back-projection consistency.
    EXPECT_NEAR(K.fx * p.x() / p.z() + K.cx, u, 1e-9);
    EXPECT_NEAR(K.fy * p.y() / p.z() + K.cy, v, 1e-9);
    EXPECT_NEAR(r.depth.at(u, v), p.z(), 1e-9);
    EXPECT_EQ(gt.pixel_instance[pix], gt.instance[i]);
    const int id = gt.instance[i];
    if (id < 0) continue;
    seen.insert(id);
    EXPECT_LT((p + gt.offsets[i] - gt.centers[id]).norm(), 1e-12);
    EXPECT_TRUE((gt.nunocs[i].array() >= 0.0).all() && (gt.nunocs[i].array() <= 1.0).all());
    EXPECT_LT((gt.poses[id].apply(gt.nunocs[i]) - p).norm(), 1e-9);
  }
  EXPECT_GE(seen.size(), 3u);
  // Centers are surface centroids of the posed meshes.
  const CameraGeometry geo = camera_geometry(s, models);
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    Rng rng(derive_seed(1, i));
    const PointCloud pc = sample_surface_uniform(geo.instances[i], 200000, rng);
    Vec3 mean = Vec3::Zero();
    for (const auto& q : pc.points) mean += q;
    mean /= static_cast<double>(pc.size());
    EXPECT_LT((mean - gt.centers[i]).norm(), 3e-4);
  }
}

TEST(RenderDepth, ThreadCountInvariant) {
  const auto models = screw_models();
  const Scene s = generate_scene(models, SceneGenParams{}, 2);
  const Rendered a = render_depth(s, models, {}, 1), b = render_depth(s, models, {}, 3);
  EXPECT_EQ(a.depth.data, b.depth.data);
  EXPECT_EQ(a.gt.instance, b.gt.instance);
}

TEST(RenderDepth, NoiseAndDropout) {
  const auto models = screw_models();
  const Scene s = generate_scene(models, SceneGenParams{}, 2);
  const Rendered clean = render_depth(s, models);
  RenderParams rp;
  rp.noise_sigma = 0.001;
  rp.dropout = 0.2;
  rp.seed = 4;
  const Rendered noisy = render_depth(s, models, rp);
  const double kept = static_cast<double>(noisy.cloud.size()) / clean.cloud.size();
  EXPECT_NEAR(kept, 0.8, 0.02);
  double sq = 0.0;
  int cnt = 0;
  for (std::size_t p = 0; p < clean.depth.data.size(); ++p) {
    if (noisy.depth.data[p] > 0.0) {
      sq += std::pow(noisy.depth.data[p] - clean.depth.data[p], 2);
      ++cnt;
    }
  }
  EXPECT_NEAR(std::sqrt(sq / cnt), 0.001, 1e-4);
  // Offsets still reconstruct centers for the noisy points.
  for (std::size_t i = 0; i < noisy.cloud.size(); ++i) {
    if (noisy.gt.instance[i] < 0) continue;
    EXPECT_LT((noisy.cloud.points[i] + noisy.gt.offsets[i] - noisy.gt.centers[noisy.gt.instance[i]]).norm(), 1e-12);
  }
}

TEST(Pfm, RoundTrip) {
  const auto models = screw_models();
  const Scene s = generate_scene(models, SceneGenParams{}, 1);
  const Rendered r = render_depth(s, models);
  const auto path = std::filesystem::temp_directory_path() / "catgrasp_test_depth.pfm";
  write_pfm(path, r.depth);
  const DepthImage back = read_pfm(path, s.camera.intrinsics);
  ASSERT_EQ(back.data.size(), r.depth.data.size());
  for (std::size_t i = 0; i < back.data.size(); ++i) {
    EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(r.depth.data[i])));
  }
  Intrinsics wrong = s.camera.intrinsics;
  wrong.width += 1;
  EXPECT_THROW(read_pfm(path, wrong), ParseError);
  write_file_atomic(path, "P6\n1 1\n255\n");
  EXPECT_THROW(read_pfm(path, s.camera.intrinsics), ParseError);
  std::filesystem::remove(path);
}

TEST(DepthToCloud, MatchesRenderedCloud) {
  const auto models = screw_models();
  const Scene s = generate_scene(models, SceneGenParams{}, 6);
  const Rendered r = render_depth(s, models);
  std::vector<int> pixels;
  const PointCloud pc = depth_to_cloud(r.depth, &pixels);
  EXPECT_EQ(pixels, r.gt.point_pixel);
  ASSERT_EQ(pc.size(), r.cloud.size());
  for (std::size_t i = 0; i < pc.size(); ++i) EXPECT_EQ(pc.points[i], r.cloud.points[i]);
}

#include <gtest/gtest.h>

#include <random>

#include "catgrasp/demo.hpp"
#include "catgrasp/pipeline.hpp"

using namespace catgrasp;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("catgrasp_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void expect_mat_near(const Mat3& a, const Mat3& b, double tol) { EXPECT_LT((a - b).norm(), tol); }

const CanonicalModel& screws_canonical() {
  static const CanonicalModel c = [] {
    Config cfg;
    cfg.axial_symmetry = 4;
    sync_config(cfg);
    return run_build_canonical(demo_screws(), cfg);
  }();
  return c;
}

PointCloud template_points() {
  const NunocsCloud& t = screws_canonical().template_cloud;
  PointCloud pc;
  pc.points = t.points;
  pc.normals = t.normals;
  return pc;
}

}  // namespace

TEST(Io, CanonicalRoundTrip) {
  const CanonicalModel& c = screws_canonical();
  const fs::path dir = scratch("canonical");
  save_canonical(dir / "canonical.json", c);
  const CanonicalModel back = load_canonical(dir / "canonical.json");
  EXPECT_EQ(back.category, c.category);
  EXPECT_EQ(back.template_index, c.template_index);
  EXPECT_EQ(back.instance_ids, c.instance_ids);
  EXPECT_EQ(back.chamfer_sums, c.chamfer_sums);
  ASSERT_EQ(back.symmetries.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.symmetries[i], c.symmetries[i]);
  for (const auto& [id, f] : c.instance_frames) {
    EXPECT_EQ(back.instance_frames.at(id).min, f.min);
    EXPECT_EQ(back.instance_frames.at(id).extent, f.extent);
    const Pose9D& p = c.instance_poses.at(id);
    const Pose9D& q = back.instance_poses.at(id);
    EXPECT_EQ(q.rotation, p.rotation);
    EXPECT_EQ(q.translation, p.translation);
    EXPECT_EQ(q.scale, p.scale);
  }
  ASSERT_EQ(back.template_cloud.points.size(), c.template_cloud.points.size());
  for (std::size_t i = 0; i < c.template_cloud.points.size(); ++i) {
    EXPECT_EQ(back.template_cloud.points[i], c.template_cloud.points[i]);
    EXPECT_EQ(back.template_cloud.normals[i], c.template_cloud.normals[i]);
  }
  EXPECT_EQ(back.template_mesh.faces.size(), c.template_mesh.faces.size());
  EXPECT_EQ(back.template_cloud.source_extents, c.template_cloud.source_extents);
}

TEST(Io, CodebookRoundTrip) {
  GraspCodebook b;
  b.category = "screw";
  b.seed = 1234567890123ull;
  b.sampled = {{"a", 10}, {"b", 12}};
  b.kept = {{"a", 3}, {"b", 0}};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 25; ++i) {
    Grasp g;
    g.pose.rotation = exp_so3(Vec3(u(rng), u(rng), u(rng)) * 2.0);
    g.pose.translation = Vec3(u(rng), u(rng), u(rng));
    g.width = 0.02 + 0.01 * u(rng);
    g.quality = 0.5 + 0.5 * u(rng);
    b.grasps.push_back(g);
  }
  const fs::path dir = scratch("codebook");
  save_codebook(dir / "book.json", b);
  const GraspCodebook back = load_codebook(dir / "book.json");
  EXPECT_EQ(back.category, b.category);
  EXPECT_EQ(back.seed, b.seed);
  EXPECT_EQ(back.sampled, b.sampled);
  EXPECT_EQ(back.kept, b.kept);
  ASSERT_EQ(back.grasps.size(), b.grasps.size());
  for (std::size_t i = 0; i < b.grasps.size(); ++i) {
    expect_mat_near(back.grasps[i].pose.rotation, b.grasps[i].pose.rotation, 1e-12);
    EXPECT_EQ(back.grasps[i].pose.translation, b.grasps[i].pose.translation);
    EXPECT_EQ(back.grasps[i].width, b.grasps[i].width);
    EXPECT_EQ(back.grasps[i].quality, b.grasps[i].quality);
  }
}

TEST(Io, HeatmapRoundTrip) {
  HeatmapArtifact h;
  h.category = "screw";
  h.mode = "pool";
  h.stats["screw_a"] = DiscoverStats{100, 40, 12};
  h.heatmap = ContactHeatmap(template_points());
  for (std::size_t i = 0; i < h.heatmap.size(); ++i) {
    h.heatmap.n_g[i] = static_cast<int>(i % 7);
    h.heatmap.n_gt[i] = static_cast<int>(i % 7) / 2;
  }
  h.heatmap.update_ratio();
  const fs::path dir = scratch("heatmap");
  save_heatmap(dir / "heat.json", h);
  const HeatmapArtifact back = load_heatmap(dir / "heat.json");
  EXPECT_EQ(back.category, "screw");
  EXPECT_EQ(back.mode, "pool");
  EXPECT_EQ(back.stats.at("screw_a").placed, 12u);
  EXPECT_EQ(back.heatmap.n_g, h.heatmap.n_g);
  EXPECT_EQ(back.heatmap.n_gt, h.heatmap.n_gt);
  EXPECT_EQ(back.heatmap.p, h.heatmap.p);
  EXPECT_EQ(back.heatmap.cloud.points, h.heatmap.cloud.points);
}

TEST(Io, GripperAndTaskRoundTrip) {
  const fs::path dir = scratch("gripper");
  const GripperModel g = make_box_gripper();
  save_gripper(dir / "gripper", g);
  const GripperModel gb = load_gripper(dir / "gripper");
  EXPECT_EQ(gb.max_opening, g.max_opening);
  EXPECT_EQ(gb.finger_depth, g.finger_depth);
  EXPECT_EQ(gb.approach, g.approach);
  EXPECT_EQ(gb.closing, g.closing);
  EXPECT_EQ(gb.left_finger.vertices, g.left_finger.vertices);
  EXPECT_EQ(gb.palm.faces, g.palm.faces);

  const PlacementTask t = make_screw_task();
  save_task(dir / "task.json", t);
  const PlacementTask tb = load_task(dir / "task.json");
  EXPECT_EQ(tb.tolerance, t.tolerance);
  ASSERT_EQ(tb.path.size(), t.path.size());
  for (std::size_t i = 0; i < t.path.size(); ++i) {
    EXPECT_EQ(tb.path[i].rotation, t.path[i].rotation);
    EXPECT_EQ(tb.path[i].translation, t.path[i].translation);
  }
  EXPECT_EQ(tb.rest.translation, t.rest.translation);
  EXPECT_EQ(tb.receptacle.faces.size(), t.receptacle.faces.size());
}

TEST(Io, SceneDirectoryRoundTrip) {
  const auto models = demo_screws();
  SceneGenParams sp;
  sp.scale_max = Vec3(1.0, 1.0, 1.5);
  const Scene s = generate_scene(models, sp, 17);
  const Rendered r = render_depth(s, models);
  const fs::path dir = scratch("scene");
  write_scene_dir(dir, s, r);

  const Scene sb = load_scene(dir / "scene.json");
  ASSERT_EQ(sb.instances.size(), s.instances.size());
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    EXPECT_EQ(sb.instances[i].model_id, s.instances[i].model_id);
    EXPECT_EQ(sb.instances[i].pose.rotation, s.instances[i].pose.rotation);
    EXPECT_EQ(sb.instances[i].pose.translation, s.instances[i].pose.translation);
    EXPECT_EQ(sb.instances[i].scale, s.instances[i].scale);
  }
  EXPECT_EQ(sb.camera.pose.rotation, s.camera.pose.rotation);
  EXPECT_EQ(sb.seed, s.seed);

  // Depth goes through float32, so points agree to float precision and labels exactly.
  const Observation live = observe(s, r);
  const Observation disk = load_observation(dir);
  ASSERT_EQ(disk.cloud.size(), live.cloud.size());
  EXPECT_EQ(disk.pixel, live.pixel);
  EXPECT_EQ(disk.instance, live.instance);
  EXPECT_EQ(disk.model_ids, live.model_ids);
  double worst = 0.0;
  for (std::size_t i = 0; i < live.cloud.size(); ++i) {
    worst = std::max(worst, (disk.cloud.points[i] - live.cloud.points[i]).norm());
    EXPECT_LT((disk.offsets[i] - live.offsets[i]).norm(), 1e-5);
    EXPECT_LT((disk.nunocs[i] - live.nunocs[i]).norm(), 1e-9);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Io, RejectsWrongKindAndSchema) {
  const fs::path dir = scratch("errors");
  GraspCodebook b;
  save_codebook(dir / "book.json", b);
  EXPECT_THROW(load_heatmap(dir / "book.json"), ParseError);
  EXPECT_THROW(load_canonical(dir / "book.json"), ParseError);

  json j = read_json(dir / "book.json");
  j["schema_version"] = kSchemaVersion + 1;
  write_file_atomic(dir / "future.json", j.dump());
  EXPECT_THROW(load_codebook(dir / "future.json"), ParseError);

  j = read_json(dir / "book.json");
  j.erase("schema_version");
  write_file_atomic(dir / "bare.json", j.dump());
  EXPECT_THROW(load_codebook(dir / "bare.json"), ParseError);

  write_file_atomic(dir / "broken.json", "{\"kind\": ");
  EXPECT_THROW(load_codebook(dir / "broken.json"), ParseError);

  j = read_json(dir / "book.json");
  j["grasps"] = json::array({{{"quaternion", {0, 0, 0, 0}}, {"translation", {0, 0, 0}}, {"width", 0.01}, {"quality", 1}}});
  write_file_atomic(dir / "zeroq.json", j.dump());
  EXPECT_THROW(load_codebook(dir / "zeroq.json"), ParseError);

  j["grasps"] = json::array({{{"quaternion", {1, 0, 0, 0}}, {"translation", {0, 0}}, {"width", 0.01}, {"quality", 1}}});
  write_file_atomic(dir / "short.json", j.dump());
  EXPECT_THROW(load_codebook(dir / "short.json"), ParseError);

  EXPECT_THROW(load_codebook(dir / "missing.json"), Error);
  EXPECT_THROW(load_gripper(dir / "nowhere"), Error);
}

TEST(Io, RejectsInconsistentHeatmap) {
  HeatmapArtifact h;
  h.heatmap = ContactHeatmap(template_points());
  h.heatmap.n_g[0] = 1;
  h.heatmap.n_gt[0] = 1;
  h.heatmap.update_ratio();
  const fs::path dir = scratch("heat_bad");
  save_heatmap(dir / "heat.json", h);
  // Rewrite the sidecar with n_gt > n_g at the first point.
  PlyData d = load_ply(dir / "heat.ply");
  PointCloud pc;
  pc.points = d.vertices;
  pc.normals = d.normals;
  std::vector<PlyAttribute> attrs = d.attributes;
  for (auto& a : attrs) {
    if (a.name == "n_gt") a.values[0] = 5;
  }
  save_cloud_ply(dir / "heat.ply", pc, attrs, true);
  EXPECT_THROW(load_heatmap(dir / "heat.json"), Error);
}

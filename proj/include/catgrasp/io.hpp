#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "catgrasp/affordance.hpp"
#include "catgrasp/grasping.hpp"
#include "catgrasp/gripper.hpp"
#include "catgrasp/mesh_io.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/scenegen.hpp"

// Artifact files. Every JSON document carries schema_version and kind; bulky arrays
// go to binary PLY sidecars named after the JSON file.

namespace catgrasp {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + ": expected a 3-vector");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) throw ParseError(what + ": non-numeric entry");
    v[k] = j[k].get<double>();
  }
  return v;
}

inline json mat_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
  return rows;
}

inline Mat3 mat_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + ": expected 3x3 rows");
  Mat3 m;
  for (int r = 0; r < 3; ++r) m.row(r) = vec_from(j[r], what).transpose();
  return m;
}

inline json pose_json(const Pose6D& p) { return {{"rotation", mat_json(p.rotation)}, {"translation", vec_json(p.translation)}}; }

inline Pose6D pose_from(const json& j, const std::string& what) {
  Pose6D p;
  p.rotation = mat_from(j.at("rotation"), what + ".rotation");
  p.translation = vec_from(j.at("translation"), what + ".translation");
  if (!is_rotation(p.rotation, 1e-6)) throw ParseError(what + ": rotation is not orthonormal");
  return p;
}

inline json pose9_json(const Pose9D& p) {
  return {{"rotation", mat_json(p.rotation)}, {"scale", vec_json(p.scale)}, {"translation", vec_json(p.translation)}};
}

inline Pose9D pose9_from(const json& j, const std::string& what) {
  Pose9D p;
  p.rotation = mat_from(j.at("rotation"), what + ".rotation");
  p.scale = vec_from(j.at("scale"), what + ".scale");
  p.translation = vec_from(j.at("translation"), what + ".translation");
  if ((p.scale.array() <= 0.0).any()) throw ParseError(what + ": scale must be positive");
  return p;
}

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

inline json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Parses a document and checks its kind and schema version.
inline json read_artifact(const fs::path& path, const std::string& kind) {
  json j = read_json(path);
  if (!j.is_object() || !j.contains("schema_version") || !j.contains("kind")) {
    throw ParseError(path.string() + ": missing schema_version or kind");
  }
  if (j["kind"] != kind) throw ParseError(path.string() + ": expected kind " + kind);
  if (j["schema_version"] != kSchemaVersion) {
    throw ParseError(path.string() + ": schema_version " + j["schema_version"].dump() + " is not supported");
  }
  return j;
}

inline json artifact_header(const std::string& kind) { return {{"schema_version", kSchemaVersion}, {"kind", kind}}; }

inline fs::path sidecar(const fs::path& doc, const std::string& suffix) {
  return doc.parent_path() / (doc.stem().string() + suffix);
}

/// Wraps JSON access errors as parse errors naming the file.
template <class Fn>
auto parse_guard(const fs::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models directory
// ---------------------------------------------------------------------------

/// Every .obj / .ply file in `dir`, sorted by file name; the id is the file stem.
inline std::vector<ModelEntry> load_models(const fs::path& dir, const MeshLoadOptions& opt = {}) {
  if (!fs::is_directory(dir)) throw Error("models directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = lower_extension(e.path());
    if (e.is_regular_file() && (ext == ".obj" || ext == ".ply")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ModelEntry> out;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    for (const auto& m : out) {
      if (m.id == id) throw Error("duplicate model id " + id + " in " + dir.string());
    }
    out.push_back({id, load_mesh(f, opt)});
  }
  if (out.empty()) throw Error("no .obj or .ply models in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// Canonical model
// ---------------------------------------------------------------------------

inline void save_canonical(const fs::path& path, const CanonicalModel& c) {
  json j = artifact_header("canonical_model");
  j["category"] = c.category;
  j["sample_radius"] = c.sample_radius;
  j["template_index"] = c.template_index;
  j["instance_ids"] = c.instance_ids;
  j["chamfer_sums"] = c.chamfer_sums;
  json frames = json::object(), poses = json::object();
  for (const auto& [id, f] : c.instance_frames) frames[id] = {{"min", vec_json(f.min)}, {"extent", vec_json(f.extent)}};
  for (const auto& [id, p] : c.instance_poses) poses[id] = pose9_json(p);
  j["instance_frames"] = frames;
  j["instance_poses"] = poses;
  json syms = json::array();
  for (const auto& s : c.symmetries) syms.push_back(mat_json(s));
  j["symmetries"] = syms;
  j["template_source_min"] = vec_json(c.template_cloud.source_min);
  j["template_source_extents"] = vec_json(c.template_cloud.source_extents);
  const fs::path cloud = sidecar(path, ".cloud.ply"), mesh = sidecar(path, ".mesh.ply");
  j["template_cloud"] = cloud.filename().string();
  j["template_mesh"] = mesh.filename().string();
  PointCloud pc;
  pc.points = c.template_cloud.points;
  pc.normals = c.template_cloud.normals;
  save_cloud_ply(cloud, pc, {}, true);
  save_mesh(mesh, c.template_mesh, true);
  write_file_atomic(path, dump(j));
}

inline CanonicalModel load_canonical(const fs::path& path) {
  const json j = read_artifact(path, "canonical_model");
  return parse_guard(path, [&] {
    CanonicalModel c;
    c.category = j.at("category").get<std::string>();
    c.sample_radius = j.at("sample_radius").get<double>();
    c.instance_ids = j.at("instance_ids").get<std::vector<std::string>>();
    c.template_index = j.at("template_index").get<int>();
    if (c.template_index < 0 || c.template_index >= static_cast<int>(c.instance_ids.size())) {
      throw ParseError(path.string() + ": template_index out of range");
    }
    c.chamfer_sums = j.at("chamfer_sums").get<std::vector<double>>();
    for (const auto& [id, f] : j.at("instance_frames").items()) {
      c.instance_frames[id] = NunocsFrame{vec_from(f.at("min"), id), vec_from(f.at("extent"), id)};
    }
    for (const auto& [id, p] : j.at("instance_poses").items()) c.instance_poses[id] = pose9_from(p, id);
    c.symmetries.clear();
    for (const auto& s : j.at("symmetries")) c.symmetries.push_back(mat_from(s, "symmetries"));
    const PlyData cloud = load_ply(path.parent_path() / j.at("template_cloud").get<std::string>());
    c.template_cloud.points = cloud.vertices;
    c.template_cloud.normals = cloud.normals;
    c.template_cloud.source_min = vec_from(j.at("template_source_min"), "template_source_min");
    c.template_cloud.source_extents = vec_from(j.at("template_source_extents"), "template_source_extents");
    const PlyData mesh = load_ply(path.parent_path() / j.at("template_mesh").get<std::string>());
    c.template_mesh.vertices = mesh.vertices;
    c.template_mesh.faces = mesh.faces;
    if (c.template_cloud.points.empty()) throw ParseError(path.string() + ": empty template cloud");
    return c;
  });
}

// ---------------------------------------------------------------------------
// Grasp codebook (quaternion w, x, y, z + translation)
// ---------------------------------------------------------------------------

inline json grasp_json(const Grasp& g) {
  const Eigen::Vector4d q = rotation_to_quaternion(g.pose.rotation);
  return {{"quaternion", json::array({q[0], q[1], q[2], q[3]})},
          {"translation", vec_json(g.pose.translation)},
          {"width", g.width},
          {"quality", g.quality}};
}

inline Grasp grasp_from(const json& j, const std::string& what) {
  const auto& q = j.at("quaternion");
  if (!q.is_array() || q.size() != 4) throw ParseError(what + ": quaternion needs 4 entries");
  const Eigen::Vector4d qv(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  if (qv.norm() < 1e-9) throw ParseError(what + ": zero quaternion");
  Grasp g;
  g.pose.rotation = quaternion_to_rotation(qv.normalized());
  g.pose.translation = vec_from(j.at("translation"), what);
  g.width = j.at("width").get<double>();
  g.quality = j.at("quality").get<double>();
  if (g.width < 0.0) throw ParseError(what + ": negative width");
  return g;
}

inline void save_codebook(const fs::path& path, const GraspCodebook& b) {
  json j = artifact_header("grasp_codebook");
  j["category"] = b.category;
  j["seed"] = b.seed;
  j["sampled"] = b.sampled;
  j["kept"] = b.kept;
  json gs = json::array();
  for (const auto& g : b.grasps) gs.push_back(grasp_json(g));
  j["grasps"] = gs;
  write_file_atomic(path, dump(j));
}

inline GraspCodebook load_codebook(const fs::path& path) {
  const json j = read_artifact(path, "grasp_codebook");
  return parse_guard(path, [&] {
    GraspCodebook b;
    b.category = j.at("category").get<std::string>();
    b.seed = j.at("seed").get<std::uint64_t>();
    b.sampled = j.at("sampled").get<std::map<std::string, std::size_t>>();
    b.kept = j.at("kept").get<std::map<std::string, std::size_t>>();
    for (const auto& g : j.at("grasps")) b.grasps.push_back(grasp_from(g, path.string()));
    return b;
  });
}

// ---------------------------------------------------------------------------
// Contact heatmap (PLY with n_g, n_gt, p channels)
// ---------------------------------------------------------------------------

struct HeatmapArtifact {
  std::string category;
  std::string mode = "average";
  ContactHeatmap heatmap;
  std::map<std::string, DiscoverStats> stats;
};

inline void save_heatmap(const fs::path& path, const HeatmapArtifact& h) {
  json j = artifact_header("contact_heatmap");
  j["category"] = h.category;
  j["mode"] = h.mode;
  json st = json::object();
  for (const auto& [id, s] : h.stats) st[id] = {{"grasps", s.grasps}, {"stable", s.stable}, {"placed", s.placed}};
  j["instances"] = st;
  const fs::path ply = sidecar(path, ".ply");
  j["cloud"] = ply.filename().string();
  const auto& hm = h.heatmap;
  PlyAttribute ng{"n_g", true, {}}, ngt{"n_gt", true, {}}, p{"p", false, {}};
  for (std::size_t i = 0; i < hm.size(); ++i) {
    ng.values.push_back(hm.n_g[i]);
    ngt.values.push_back(hm.n_gt[i]);
    p.values.push_back(hm.p[i]);
  }
  save_cloud_ply(ply, hm.cloud, {ng, ngt, p}, true);
  write_file_atomic(path, dump(j));
}

inline HeatmapArtifact load_heatmap(const fs::path& path) {
  const json j = read_artifact(path, "contact_heatmap");
  return parse_guard(path, [&] {
    HeatmapArtifact h;
    h.category = j.at("category").get<std::string>();
    h.mode = j.at("mode").get<std::string>();
    for (const auto& [id, s] : j.at("instances").items()) {
      h.stats[id] = DiscoverStats{s.at("grasps").get<std::size_t>(), s.at("stable").get<std::size_t>(),
                                  s.at("placed").get<std::size_t>()};
    }
    const fs::path ply = path.parent_path() / j.at("cloud").get<std::string>();
    const PlyData d = load_ply(ply);
    PointCloud pc;
    pc.points = d.vertices;
    pc.normals = d.normals;
    h.heatmap = ContactHeatmap(pc);
    const auto* ng = d.attribute("n_g");
    const auto* ngt = d.attribute("n_gt");
    const auto* p = d.attribute("p");
    if (!ng || !ngt || !p) throw ParseError(ply.string() + ": missing n_g, n_gt or p");
    for (std::size_t i = 0; i < pc.size(); ++i) {
      h.heatmap.n_g[i] = static_cast<int>(ng->values[i]);
      h.heatmap.n_gt[i] = static_cast<int>(ngt->values[i]);
      h.heatmap.p[i] = p->values[i];
    }
    h.heatmap.check();
    return h;
  });
}

// ---------------------------------------------------------------------------
// Gripper directory: gripper.json + finger and palm meshes
// ---------------------------------------------------------------------------

inline void save_gripper(const fs::path& dir, const GripperModel& g) {
  g.validate();
  json j = artifact_header("gripper");
  j["max_opening"] = g.max_opening;
  j["finger_depth"] = g.finger_depth;
  j["approach"] = vec_json(g.approach);
  j["closing"] = vec_json(g.closing);
  j["friction_mu"] = g.friction_mu;
  j["left_finger"] = "left_finger.ply";
  j["right_finger"] = "right_finger.ply";
  j["palm"] = "palm.ply";
  save_mesh(dir / "left_finger.ply", g.left_finger);
  save_mesh(dir / "right_finger.ply", g.right_finger);
  save_mesh(dir / "palm.ply", g.palm);
  write_file_atomic(dir / "gripper.json", dump(j));
}

inline GripperModel load_gripper(const fs::path& dir) {
  const fs::path doc = dir / "gripper.json";
  const json j = read_artifact(doc, "gripper");
  GripperModel g = parse_guard(doc, [&] {
    GripperModel m;
    m.max_opening = j.at("max_opening").get<double>();
    m.finger_depth = j.at("finger_depth").get<double>();
    m.approach = vec_from(j.at("approach"), "approach");
    m.closing = vec_from(j.at("closing"), "closing");
    m.friction_mu = j.at("friction_mu").get<double>();
    m.left_finger = load_mesh(dir / j.at("left_finger").get<std::string>());
    m.right_finger = load_mesh(dir / j.at("right_finger").get<std::string>());
    m.palm = load_mesh(dir / j.at("palm").get<std::string>());
    return m;
  });
  try {
    g.validate();
  } catch (const Error& e) {
    throw ParseError(doc.string() + ": " + e.what());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Placement task: task.json + receptacle mesh
// ---------------------------------------------------------------------------

inline void save_task(const fs::path& path, const PlacementTask& t) {
  t.validate();
  json j = artifact_header("placement_task");
  const fs::path mesh = sidecar(path, ".receptacle.ply");
  j["receptacle"] = mesh.filename().string();
  j["rest"] = pose_json(t.rest);
  j["tolerance"] = t.tolerance;
  json path_j = json::array();
  for (const auto& p : t.path) path_j.push_back(pose_json(p));
  j["path"] = path_j;
  save_mesh(mesh, t.receptacle);
  write_file_atomic(path, dump(j));
}

inline PlacementTask load_task(const fs::path& path) {
  const json j = read_artifact(path, "placement_task");
  PlacementTask t = parse_guard(path, [&] {
    PlacementTask out;
    out.receptacle = load_mesh(path.parent_path() / j.at("receptacle").get<std::string>());
    out.rest = pose_from(j.at("rest"), "rest");
    out.tolerance = j.at("tolerance").get<double>();
    for (const auto& p : j.at("path")) out.path.push_back(pose_from(p, "path"));
    return out;
  });
  try {
    t.validate();
  } catch (const Error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Scenes and rendered ground truth
// ---------------------------------------------------------------------------

inline json intrinsics_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from(const json& j) {
  Intrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
               j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
  try {
    k.validate();
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
  return k;
}

inline json camera_json(const Camera& c) {
  json j = artifact_header("camera");
  j["intrinsics"] = intrinsics_json(c.intrinsics);
  j["camera_to_world"] = pose_json(c.pose);
  return j;
}

inline Camera camera_from(const json& j) {
  Camera c;
  c.intrinsics = intrinsics_from(j.at("intrinsics"));
  c.pose = pose_from(j.at("camera_to_world"), "camera_to_world");
  return c;
}

inline json scene_json(const Scene& s) {
  json j = artifact_header("scene");
  j["seed"] = s.seed;
  j["bin"] = {{"size_x", s.bin.size_x},
              {"size_y", s.bin.size_y},
              {"wall_height", s.bin.wall_height},
              {"thickness", s.bin.thickness},
              {"pose", pose_json(s.bin_pose)}};
  json inst = json::array();
  for (const auto& i : s.instances) {
    inst.push_back({{"model_id", i.model_id}, {"pose", pose_json(i.pose)}, {"scale", vec_json(i.scale)}});
  }
  j["instances"] = inst;
  j["camera"] = {{"intrinsics", intrinsics_json(s.camera.intrinsics)}, {"camera_to_world", pose_json(s.camera.pose)}};
  return j;
}

inline void save_scene(const fs::path& path, const Scene& s) { write_file_atomic(path, dump(scene_json(s))); }

inline Scene load_scene(const fs::path& path) {
  const json j = read_artifact(path, "scene");
  return parse_guard(path, [&] {
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto& b = j.at("bin");
    s.bin = BinSpec{b.at("size_x").get<double>(), b.at("size_y").get<double>(), b.at("wall_height").get<double>(),
                    b.at("thickness").get<double>()};
    s.bin_pose = pose_from(b.at("pose"), "bin.pose");
    for (const auto& i : j.at("instances")) {
      SceneInstance inst{i.at("model_id").get<std::string>(), pose_from(i.at("pose"), "instance.pose"),
                         vec_from(i.at("scale"), "instance.scale")};
      if ((inst.scale.array() <= 0.0).any()) throw ParseError(path.string() + ": instance scale must be positive");
      s.instances.push_back(inst);
    }
    s.camera = camera_from(j.at("camera"));
    return s;
  });
}

/// Per-point ground truth as PLY channels plus per-instance JSON.
inline void save_ground_truth(const fs::path& dir, const Scene& s, const Rendered& r) {
  const auto& gt = r.gt;
  PlyAttribute inst{"instance", true, {}}, pix{"pixel", true, {}};
  std::array<PlyAttribute, 3> off{PlyAttribute{"offset_x", false, {}}, PlyAttribute{"offset_y", false, {}},
                                  PlyAttribute{"offset_z", false, {}}};
  std::array<PlyAttribute, 3> nc{PlyAttribute{"nunocs_x", false, {}}, PlyAttribute{"nunocs_y", false, {}},
                                 PlyAttribute{"nunocs_z", false, {}}};
  for (std::size_t i = 0; i < r.cloud.size(); ++i) {
    inst.values.push_back(gt.instance[i]);
    pix.values.push_back(gt.point_pixel[i]);
    for (int k = 0; k < 3; ++k) {
      off[k].values.push_back(gt.offsets[i][k]);
      nc[k].values.push_back(gt.nunocs[i][k]);
    }
  }
  PointCloud pc = r.cloud;
  pc.normals = gt.normals;
  save_cloud_ply(dir / "gt.ply", pc, {inst, pix, off[0], off[1], off[2], nc[0], nc[1], nc[2]}, true);

  json j = artifact_header("ground_truth");
  j["points"] = "gt.ply";
  json arr = json::array();
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    arr.push_back({{"model_id", s.instances[i].model_id},
                   {"scale", vec_json(s.instances[i].scale)},
                   {"nunocs_to_camera", pose9_json(gt.poses[i])},
                   {"center", vec_json(gt.centers[i])}});
  }
  j["instances"] = arr;
  write_file_atomic(dir / "gt.json", dump(j));
}

/// Ground truth re-attached to the pixels of a depth image read back from disk.
struct LoadedTruth {
  std::vector<int> pixel_instance;  // per pixel, kNoHit where the file has no point
  std::vector<Vec3> pixel_offset;
  std::vector<Vec3> pixel_nunocs;
  std::vector<Pose9D> poses;
  std::vector<Vec3> centers;
  std::vector<std::string> model_ids;
};

inline LoadedTruth load_ground_truth(const fs::path& dir, const Intrinsics& K) {
  const fs::path doc = dir / "gt.json";
  if (!fs::exists(doc)) throw Error("missing ground truth: " + doc.string());
  const json j = read_artifact(doc, "ground_truth");
  return parse_guard(doc, [&] {
    LoadedTruth t;
    for (const auto& i : j.at("instances")) {
      t.model_ids.push_back(i.at("model_id").get<std::string>());
      t.poses.push_back(pose9_from(i.at("nunocs_to_camera"), "nunocs_to_camera"));
      t.centers.push_back(vec_from(i.at("center"), "center"));
    }
    const PlyData d = load_ply(dir / j.at("points").get<std::string>());
    const std::size_t npx = static_cast<std::size_t>(K.width) * K.height;
    t.pixel_instance.assign(npx, kNoHit);
    t.pixel_offset.assign(npx, Vec3::Zero());
    t.pixel_nunocs.assign(npx, Vec3::Zero());
    const auto* inst = d.attribute("instance");
    const auto* pix = d.attribute("pixel");
    const PlyAttribute* off[3] = {d.attribute("offset_x"), d.attribute("offset_y"), d.attribute("offset_z")};
    const PlyAttribute* nc[3] = {d.attribute("nunocs_x"), d.attribute("nunocs_y"), d.attribute("nunocs_z")};
    if (!inst || !pix || !off[0] || !off[1] || !off[2] || !nc[0] || !nc[1] || !nc[2]) {
      throw ParseError(doc.string() + ": ground-truth PLY lacks required channels");
    }
    for (std::size_t i = 0; i < d.vertices.size(); ++i) {
      const auto p = static_cast<long>(pix->values[i]);
      if (p < 0 || static_cast<std::size_t>(p) >= npx) throw ParseError(doc.string() + ": pixel index out of range");
      const int id = static_cast<int>(inst->values[i]);
      if (id >= static_cast<int>(t.poses.size())) throw ParseError(doc.string() + ": instance id out of range");
      t.pixel_instance[p] = id;
      t.pixel_offset[p] = Vec3(off[0]->values[i], off[1]->values[i], off[2]->values[i]);
      t.pixel_nunocs[p] = Vec3(nc[0]->values[i], nc[1]->values[i], nc[2]->values[i]);
    }
    return t;
  });
}

}  // namespace catgrasp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/mesh_io.hpp"
#include "catgrasp/mesh_query.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/parallel.hpp"
#include "catgrasp/rng.hpp"
#include "catgrasp/shapes.hpp"

namespace catgrasp {

struct ModelEntry {
  std::string id;
  TriMesh mesh;
};

struct Intrinsics {
  double fx = 560.0, fy = 560.0;
  double cx = 199.5, cy = 149.5;
  int width = 400, height = 300;

  void validate() const {
    if (width <= 0 || height <= 0) throw Error("intrinsics: image size must be positive");
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error("intrinsics: focal lengths must be positive");
  }
  /// Camera-frame point of pixel (u, v) at the given depth.
  Vec3 backproject(int u, int v, double depth) const {
    return {depth * (u - cx) / fx, depth * (v - cy) / fy, depth};
  }
};

/// OpenCV convention: +z optical axis, +x right, +y down. `pose` maps camera to world.
struct Camera {
  Intrinsics intrinsics;
  Pose6D pose;
};

struct BinSpec {
  double size_x = 0.16, size_y = 0.12;
  double wall_height = 0.04;
  double thickness = 0.01;

  TriMesh mesh() const { return shapes::bin(size_x, size_y, wall_height, thickness); }
};

struct SceneInstance {
  std::string model_id;
  Pose6D pose;                   // model frame (after scaling) -> world
  Vec3 scale = Vec3::Ones();     // per-axis, applied in the model frame
};

struct Scene {
  BinSpec bin;
  Pose6D bin_pose;
  std::vector<SceneInstance> instances;
  Camera camera;
  std::uint64_t seed = 0;
};

struct CameraParams {
  Intrinsics intrinsics;
  double distance = 0.35;
  double cone_deg = 15.0;
  Vec3 look_at = Vec3::Zero();
};

struct SceneGenParams {
  int count_min = 4, count_max = 6;
  Vec3 scale_min = Vec3::Ones();
  Vec3 scale_max = Vec3::Ones();
  BinSpec bin;
  CameraParams camera;
  double drop_clearance = 0.01;
  int settle_attempts = 20;
  int placement_attempts = 100;
  int scene_retries = 10;
  double settle_rotation_deg = 15.0;
  double settle_slide = 0.005;

  void validate() const {
    if (count_min < 0 || count_max < count_min) throw Error("scenegen: bad count range");
    if ((scale_min.array() <= 0.0).any() || (scale_max.array() < scale_min.array()).any()) {
      throw Error("scenegen: scales must be positive with min <= max");
    }
    if (!(bin.size_x > 0.0) || !(bin.size_y > 0.0) || !(bin.wall_height > 0.0)) throw Error("scenegen: bad bin");
    camera.intrinsics.validate();
  }
};

inline TriMesh scale_mesh(const TriMesh& m, const Vec3& s) {
  TriMesh out = m;
  for (auto& v : out.vertices) v = v.cwiseProduct(s);
  return out;
}

inline const TriMesh& find_model(std::span<const ModelEntry> models, const std::string& id) {
  for (const auto& m : models) {
    if (m.id == id) return m.mesh;
  }
  throw Error("unknown model id: " + id);
}

namespace detail {

struct Obstacle {
  const MeshIndex* index;
  Pose6D pose;
  Aabb world_box;
};

inline Aabb world_box(const Aabb& local, const Pose6D& pose) {
  Aabb out;
  for (int k = 0; k < 8; ++k) {
    const Vec3 c((k & 1) ? local.hi.x() : local.lo.x(), (k & 2) ? local.hi.y() : local.lo.y(),
                 (k & 4) ? local.hi.z() : local.lo.z());
    out.extend(pose.apply(c));
  }
  return out;
}

inline bool hits_any(const MeshIndex& obj, const Pose6D& pose, const std::vector<Obstacle>& obstacles) {
  const Aabb box = world_box(obj.box(), pose);
  for (const auto& o : obstacles) {
    if (!box.overlaps(o.world_box)) continue;
    if (mesh_collision(obj, pose, *o.index, o.pose)) return true;
  }
  return false;
}

struct Dropped {
  bool ok = false;
  Pose6D pose;
  double height = 0.0;  // world z of the surface centroid
};

/// Vertical descent from above every obstacle until first contact.
inline Dropped drop(const MeshIndex& obj, const Vec3& centroid, const Mat3& rot, double x, double y,
                    const std::vector<Obstacle>& obstacles, const BinSpec& bin, double clearance) {
  Dropped out;
  Aabb rb;
  for (const auto& v : obj.mesh().vertices) rb.extend(rot * v);
  const double hx = 0.5 * bin.size_x, hy = 0.5 * bin.size_y;
  if (x + rb.lo.x() <= -hx || x + rb.hi.x() >= hx || y + rb.lo.y() <= -hy || y + rb.hi.y() >= hy) return out;

  double top = bin.wall_height;
  for (const auto& o : obstacles) top = std::max(top, o.world_box.hi.z());
  double z = top + clearance - rb.lo.z();
  const Vec3 ext = rb.extent();
  const double step = std::min(0.002, 0.25 * ext.minCoeff());
  const auto pose_at = [&](double h) { return Pose6D{rot, Vec3(x, y, h)}; };
  if (hits_any(obj, pose_at(z), obstacles)) return out;
  const double floor_limit = -bin.thickness - ext.norm();
  for (;;) {
    if (z - rb.hi.z() < floor_limit) return out;  // fell through
    if (!hits_any(obj, pose_at(z - step), obstacles)) {
      z -= step;
      continue;
    }
    double lo = z - step, hi = z;  // lo collides, hi free
    for (int it = 0; it < 30; ++it) {
      const double mid = 0.5 * (lo + hi);
      (hits_any(obj, pose_at(mid), obstacles) ? lo : hi) = mid;
    }
    z = hi;
    break;
  }
  out.ok = true;
  out.pose = pose_at(z);
  out.height = out.pose.apply(centroid).z();
  return out;
}

struct PlacedInstance {
  SceneInstance inst;
  MeshIndex index;
};

inline std::vector<Obstacle> obstacles_of(const MeshIndex& bin_index, const Pose6D& bin_pose,
                                          const std::vector<PlacedInstance>& placed) {
  std::vector<Obstacle> obs;
  obs.push_back({&bin_index, bin_pose, world_box(bin_index.box(), bin_pose)});
  for (const auto& p : placed) obs.push_back({&p.index, p.inst.pose, world_box(p.index.box(), p.inst.pose)});
  return obs;
}

}  // namespace detail

/// Camera on a cone above the bin looking at `look_at`.
inline Camera sample_camera(const CameraParams& prm, Rng& rng) {
  const double cmin = std::cos(deg2rad(prm.cone_deg));
  const double c = uniform(rng, cmin, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double phi = uniform(rng, 0.0, 2.0 * kPi);
  const Vec3 v(s * std::cos(phi), s * std::sin(phi), c);
  const Vec3 z = -v;
  const Vec3 x = (Vec3::UnitX() - Vec3::UnitX().dot(z) * z).normalized();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.intrinsics = prm.intrinsics;
  cam.pose.rotation.col(0) = x;
  cam.pose.rotation.col(1) = y;
  cam.pose.rotation.col(2) = z;
  cam.pose.translation = prm.look_at + prm.distance * v;
  return cam;
}

/// Mesh of every instance (world frame), in instance order.
inline std::vector<TriMesh> instance_meshes(const Scene& scene, std::span<const ModelEntry> models) {
  std::vector<TriMesh> out;
  for (const auto& inst : scene.instances) {
    out.push_back(transform_mesh(scale_mesh(find_model(models, inst.model_id), inst.scale), inst.pose));
  }
  return out;
}

/// Post-hoc check: no pair of instances and no instance and the bin touch.
inline bool scene_collision_free(const Scene& scene, std::span<const ModelEntry> models) {
  const MeshIndex bin(scene.bin.mesh());
  std::vector<MeshIndex> idx;
  for (const auto& inst : scene.instances) idx.emplace_back(scale_mesh(find_model(models, inst.model_id), inst.scale));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Pose6D& pi = scene.instances[i].pose;
    if (mesh_collision(idx[i], pi, bin, scene.bin_pose)) return false;
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      if (mesh_collision(idx[i], pi, idx[j], scene.instances[j].pose)) return false;
    }
  }
  return true;
}

inline Scene generate_scene(std::span<const ModelEntry> models, const SceneGenParams& prm, std::uint64_t seed) {
  if (models.empty()) throw Error("generate_scene: empty model set");
  prm.validate();
  const MeshIndex bin_index(prm.bin.mesh());
  const Pose6D bin_pose = Pose6D::identity();
  const double hx = 0.5 * prm.bin.size_x, hy = 0.5 * prm.bin.size_y;

  for (int attempt = 0; attempt < prm.scene_retries; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    Scene scene;
    scene.bin = prm.bin;
    scene.bin_pose = bin_pose;
    scene.seed = seed;
    scene.camera = sample_camera(prm.camera, rng);
    const int count = std::uniform_int_distribution<int>(prm.count_min, prm.count_max)(rng);

    std::vector<detail::PlacedInstance> placed;
    bool failed = false;
    for (int k = 0; k < count && !failed; ++k) {
      const std::size_t mi = std::uniform_int_distribution<std::size_t>(0, models.size() - 1)(rng);
      Vec3 scale;
      for (int a = 0; a < 3; ++a) scale[a] = uniform(rng, prm.scale_min[a], prm.scale_max[a]);
      MeshIndex index(scale_mesh(models[mi].mesh, scale));
      const Vec3 centroid = surface_centroid(index.mesh());
      const auto obstacles = detail::obstacles_of(bin_index, bin_pose, placed);

      detail::Dropped best;
      for (int a = 0; a < prm.placement_attempts && !best.ok; ++a) {
        const Mat3 rot = random_rotation(rng);
        const double x = uniform(rng, -hx, hx), y = uniform(rng, -hy, hy);
        best = detail::drop(index, centroid, rot, x, y, obstacles, prm.bin, prm.drop_clearance);
      }
      if (!best.ok) {
        failed = true;
        break;
      }
      for (int s = 0; s < prm.settle_attempts; ++s) {
        const Vec3 w = random_unit_vector(rng) * uniform(rng, 0.0, deg2rad(prm.settle_rotation_deg));
        const Mat3 rot = exp_so3(w) * best.pose.rotation;
        const double x = best.pose.translation.x() + uniform(rng, -prm.settle_slide, prm.settle_slide);
        const double y = best.pose.translation.y() + uniform(rng, -prm.settle_slide, prm.settle_slide);
        const auto cand = detail::drop(index, centroid, rot, x, y, obstacles, prm.bin, prm.drop_clearance);
        if (cand.ok && cand.height < best.height) best = cand;
      }
      placed.push_back({SceneInstance{models[mi].id, best.pose, scale}, std::move(index)});
    }
    if (failed) {
      log_warning("generate_scene: placement failed, retrying with next sub-seed");
      continue;
    }
    for (const auto& p : placed) scene.instances.push_back(p.inst);
    if (!scene_collision_free(scene, models)) {
      log_warning("generate_scene: post-hoc collision check failed, retrying");
      continue;
    }
    return scene;
  }
  throw Error("generate_scene: no valid scene after " + std::to_string(prm.scene_retries) + " attempts");
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct DepthImage {
  Intrinsics intrinsics;
  std::vector<double> data;  // row-major, 0 = no return

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  double at(int u, int v) const { return data[static_cast<std::size_t>(v) * intrinsics.width + u]; }
  double& at(int u, int v) { return data[static_cast<std::size_t>(v) * intrinsics.width + u]; }
};

inline constexpr int kBinLabel = -1;
inline constexpr int kNoHit = -2;

struct GroundTruth {
  std::vector<int> pixel_instance;  // H*W: instance index, kBinLabel, or kNoHit
  std::vector<int> point_pixel;     // per scene-cloud point
  std::vector<int> instance;        // per point
  std::vector<Vec3> offsets;        // per point: center - point (zero on the bin)
  std::vector<Vec3> nunocs;         // per point (zero on the bin)
  std::vector<Vec3> normals;        // per point, camera frame, facing the camera
  std::vector<Pose9D> poses;        // per instance: NUNOCS of its model -> camera
  std::vector<Vec3> centers;        // per instance, camera frame
};

struct Rendered {
  DepthImage depth;
  PointCloud cloud;  // camera frame, one point per valid pixel in row-major order
  GroundTruth gt;
};

struct RenderParams {
  double noise_sigma = 0.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};

/// All scene geometry in the camera frame. `owner[f]` is the instance of face f or kBinLabel.
struct CameraGeometry {
  TriMesh mesh;
  std::vector<int> owner;
  std::vector<TriMesh> instances;  // camera frame
  TriMesh bin;
};

inline CameraGeometry camera_geometry(const Scene& scene, std::span<const ModelEntry> models) {
  const Pose6D w2c = scene.camera.pose.inverse();
  CameraGeometry g;
  g.bin = transform_mesh(scene.bin.mesh(), w2c * scene.bin_pose);
  for (const auto& m : instance_meshes(scene, models)) g.instances.push_back(transform_mesh(m, w2c));
  std::vector<TriMesh> parts{g.bin};
  g.owner.assign(g.bin.faces.size(), kBinLabel);
  for (std::size_t i = 0; i < g.instances.size(); ++i) {
    parts.push_back(g.instances[i]);
    g.owner.insert(g.owner.end(), g.instances[i].faces.size(), static_cast<int>(i));
  }
  g.mesh = merge_meshes(parts);
  return g;
}

/// Point cloud of the valid pixels of a depth image, with their pixel indices.
inline PointCloud depth_to_cloud(const DepthImage& depth, std::vector<int>* pixels = nullptr) {
  PointCloud pc;
  if (pixels) pixels->clear();
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      const double d = depth.at(u, v);
      if (d <= 0.0) continue;
      pc.points.push_back(depth.intrinsics.backproject(u, v, d));
      if (pixels) pixels->push_back(v * depth.width() + u);
    }
  }
  return pc;
}

inline Rendered render_depth(const Scene& scene, std::span<const ModelEntry> models, const RenderParams& rp = {},
                             std::size_t threads = 1) {
  const Intrinsics& K = scene.camera.intrinsics;
  K.validate();
  const CameraGeometry geo = camera_geometry(scene, models);

  const Vec3 origin = Vec3::Zero();
  for (std::size_t i = 0; i < geo.instances.size(); ++i) {
    if (MeshIndex(geo.instances[i]).inside(origin)) throw Error("render_depth: camera inside instance " + std::to_string(i));
  }
  if (MeshIndex(geo.bin).inside(origin)) throw Error("render_depth: camera inside the bin");

  const MeshIndex index(geo.mesh);
  const std::size_t W = K.width, H = K.height;
  std::vector<double> depth(W * H, 0.0);
  std::vector<int> face(W * H, -1);
  parallel_for(H, threads, [&](std::size_t v) {
    for (std::size_t u = 0; u < W; ++u) {
      const Vec3 dir = Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0).normalized();
      const auto hit = index.raycast(origin, dir);
      if (hit.face < 0) continue;
      depth[v * W + u] = hit.t * dir.z();
      face[v * W + u] = hit.face;
    }
  });

  if (rp.noise_sigma > 0.0 || rp.dropout > 0.0) {
    Rng rng(derive_seed(rp.seed, "depth_noise"));
    for (std::size_t p = 0; p < depth.size(); ++p) {
      if (depth[p] <= 0.0) continue;
      const double n = gaussian(rng, rp.noise_sigma);
      const bool drop = uniform01(rng) < rp.dropout;
      depth[p] = drop ? 0.0 : std::max(0.0, depth[p] + n);
      if (depth[p] == 0.0) face[p] = -1;
    }
  }

  Rendered out;
  out.depth.intrinsics = K;
  out.depth.data = depth;
  GroundTruth& gt = out.gt;
  gt.pixel_instance.assign(W * H, kNoHit);

  // Per-instance truth from the known poses.
  const Pose6D w2c = scene.camera.pose.inverse();
  std::vector<NunocsFrame> frames;
  std::vector<Pose6D> inst_to_cam;
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& inst = scene.instances[i];
    const TriMesh& model = find_model(models, inst.model_id);
    frames.push_back(nunocs_frame(model.vertices));
    inst_to_cam.push_back(w2c * inst.pose);
    Pose9D p;
    p.rotation = inst_to_cam.back().rotation;
    p.scale = inst.scale.cwiseProduct(frames.back().extent);
    p.translation = inst_to_cam.back().apply(inst.scale.cwiseProduct(frames.back().min));
    gt.poses.push_back(p);
    gt.centers.push_back(surface_centroid(geo.instances[i]));
  }

  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const std::size_t p = v * W + u;
      if (face[p] < 0) continue;
      const int owner = geo.owner[face[p]];
      gt.pixel_instance[p] = owner;
      const Vec3 pt = K.backproject(static_cast<int>(u), static_cast<int>(v), depth[p]);
      out.cloud.points.push_back(pt);
      gt.point_pixel.push_back(static_cast<int>(p));
      gt.instance.push_back(owner);
      Vec3 n = geo.mesh.face_normal(face[p]);
      if (n.dot(pt) > 0.0) n = -n;
      gt.normals.push_back(n);
      if (owner < 0) {
        gt.offsets.push_back(Vec3::Zero());
        gt.nunocs.push_back(Vec3::Zero());
        continue;
      }
      gt.offsets.push_back(gt.centers[owner] - pt);
      const auto& inst = scene.instances[owner];
      const Vec3 local = inst_to_cam[owner].inverse().apply(pt).cwiseQuotient(inst.scale);
      gt.nunocs.push_back(frames[owner].normalize(local).cwiseMax(0.0).cwiseMin(1.0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PFM (single channel, little-endian, bottom row first)
// ---------------------------------------------------------------------------

inline void write_pfm(const std::filesystem::path& path, const DepthImage& img) {
  std::ostringstream os(std::ios::binary);
  os << "Pf\n" << img.width() << " " << img.height() << "\n-1.0\n";
  std::vector<float> row(img.width());
  for (int v = img.height() - 1; v >= 0; --v) {
    for (int u = 0; u < img.width(); ++u) row[u] = static_cast<float>(img.at(u, v));
    // Hosts here are little-endian; PFM scale -1 declares that.
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  write_file_atomic(path, os.str());
}

inline DepthImage read_pfm(const std::filesystem::path& path, const Intrinsics& K) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf") throw ParseError(path.string() + ": not a single-channel PFM");
  if (w <= 0 || h <= 0) throw ParseError(path.string() + ": bad PFM size");
  if (scale >= 0.0) throw ParseError(path.string() + ": big-endian PFM not supported");
  in.get();
  if (w != K.width || h != K.height) throw ParseError(path.string() + ": size does not match intrinsics");
  DepthImage img;
  img.intrinsics = K;
  img.data.assign(static_cast<std::size_t>(w) * h, 0.0);
  std::vector<float> row(w);
  for (int v = h - 1; v >= 0; --v) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw ParseError(path.string() + ": truncated PFM");
    for (int u = 0; u < w; ++u) {
      const double d = row[u];
      if (!std::isfinite(d) || d < 0.0) throw ParseError(path.string() + ": invalid depth value");
      img.at(u, v) = d;
    }
  }
  return img;
}

}  // namespace catgrasp

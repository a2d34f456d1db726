#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <type_traits>

#include "catgrasp/affordance.hpp"
#include "catgrasp/grasping.hpp"
#include "catgrasp/io.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/scenegen.hpp"
#include "catgrasp/segmentation.hpp"

namespace catgrasp {

struct HeatmapParams {
  std::size_t grasps_per_instance = 600;
  std::string aggregate = "average";  // or "pool"
};

struct PlanParams {
  std::size_t n_direct = 40;
  int score_samples = 10;  // perturbations behind P(G) at planning time
  bool exhaustive = false;
  bool no_affordance = false;
  bool uniform_scale = false;
};

struct EvalParams {
  int plans_per_scene = 1;
};

/// Every tunable of the pipeline. Unknown keys in a config file are errors.
struct Config {
  std::uint64_t seed = 0;
  CanonicalBuildParams canonical;
  int axial_symmetry = 1;  // n-fold symmetry about the canonical z axis, used in pose error
  GraspParams grasp;
  CodebookParams codebook;
  HeatmapParams heatmap;
  SceneGenParams scenes;
  RenderParams render;
  SegmentParams segmentation;
  AlignParams align;
  ProposalParams proposals;
  RelevanceParams relevance;
  PlanParams plan;
  EvalParams eval;
};

namespace detail {

inline void to_js(json& j, const Vec3& v) { j = vec_json(v); }
inline void from_js(const json& j, Vec3& v, const std::string& what) { v = vec_from(j, what); }
template <class T>
void to_js(json& j, const T& v) {
  j = v;
}
template <class T>
void from_js(const json& j, T& v, const std::string& what) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.is_number_unsigned()) throw ParseError("config: " + what + " must be a non-negative integer");
  }
  try {
    v = j.get<T>();
  } catch (const json::exception&) {
    throw ParseError("config: bad value for " + what + ": " + j.dump());
  }
}

struct ConfigWriter {
  json root = json::object();
  json* cur = &root;
  template <class Fn>
  void section(const char* name, Fn&& fn) {
    json* saved = cur;
    cur = &(*cur)[name];
    *cur = json::object();
    fn();
    cur = saved;
  }
  template <class T>
  void operator()(const char* key, T& v) {
    to_js((*cur)[key], v);
  }
};

struct ConfigReader {
  const json* cur;
  std::string path;
  template <class Fn>
  void section(const char* name, Fn&& fn) {
    if (!cur->contains(name)) return;
    const json& sub = cur->at(name);
    if (!sub.is_object()) throw ParseError("config: section " + path + name + " must be an object");
    const json* saved = cur;
    const std::string saved_path = path;
    cur = &sub;
    path += std::string(name) + ".";
    std::set<std::string> known;
    known_stack.push_back(&known);
    fn();
    known_stack.pop_back();
    for (const auto& [k, v] : sub.items()) {
      if (!known.count(k)) throw ParseError("config: unknown key " + path + k);
    }
    cur = saved;
    path = saved_path;
    if (!known_stack.empty()) known_stack.back()->insert(name);
  }
  template <class T>
  void operator()(const char* key, T& v) {
    if (!known_stack.empty()) known_stack.back()->insert(key);
    if (cur->contains(key)) from_js(cur->at(key), v, path + key);
  }
  std::vector<std::set<std::string>*> known_stack;
};

}  // namespace detail

/// Single list of config fields, used for reading and for dumping defaults.
template <class V>
void visit_config(Config& c, V& v) {
  v("seed", c.seed);
  v.section("canonical", [&] {
    v("category", c.canonical.category);
    v("sample_radius", c.canonical.sample_radius);
    v("ransac_iterations", c.canonical.ransac.iterations);
    v("ransac_threshold", c.canonical.ransac.inlier_threshold);
    v("axial_symmetry", c.axial_symmetry);
  });
  v.section("grasp", [&] {
    v("contact_eps", c.grasp.contact_eps);
    v("clearance", c.grasp.clearance);
    v("antipodal_tol_deg", c.grasp.antipodal_tol_deg);
    v("pregrasp_margin", c.grasp.pregrasp_margin);
    v("antipodal_line_radius", c.grasp.antipodal_line_radius);
    v("attempts_per_grasp", c.grasp.attempts_per_grasp);
  });
  v.section("codebook", [&] {
    v("grasps_per_instance", c.codebook.grasps_per_instance);
    v("keep_threshold", c.codebook.keep_threshold);
    v("score_samples", c.codebook.neighbors);
    v("sample_radius", c.codebook.sample_radius);
    v("perturb_sigma_t", c.codebook.perturb.sigma_t);
    v("perturb_sigma_r_deg", c.codebook.perturb.sigma_r_deg);
  });
  v.section("heatmap", [&] {
    v("grasps_per_instance", c.heatmap.grasps_per_instance);
    v("aggregate", c.heatmap.aggregate);
  });
  v.section("scenes", [&] {
    v("count_min", c.scenes.count_min);
    v("count_max", c.scenes.count_max);
    v("scale_min", c.scenes.scale_min);
    v("scale_max", c.scenes.scale_max);
    v("bin_size_x", c.scenes.bin.size_x);
    v("bin_size_y", c.scenes.bin.size_y);
    v("bin_wall_height", c.scenes.bin.wall_height);
    v("bin_thickness", c.scenes.bin.thickness);
    v("camera_distance", c.scenes.camera.distance);
    v("camera_cone_deg", c.scenes.camera.cone_deg);
    v("fx", c.scenes.camera.intrinsics.fx);
    v("fy", c.scenes.camera.intrinsics.fy);
    v("cx", c.scenes.camera.intrinsics.cx);
    v("cy", c.scenes.camera.intrinsics.cy);
    v("width", c.scenes.camera.intrinsics.width);
    v("height", c.scenes.camera.intrinsics.height);
    v("drop_clearance", c.scenes.drop_clearance);
    v("settle_attempts", c.scenes.settle_attempts);
    v("placement_attempts", c.scenes.placement_attempts);
    v("scene_retries", c.scenes.scene_retries);
    v("settle_rotation_deg", c.scenes.settle_rotation_deg);
    v("settle_slide", c.scenes.settle_slide);
    v("depth_noise_sigma", c.render.noise_sigma);
    v("depth_dropout", c.render.dropout);
  });
  v.section("segmentation", [&] {
    v("eps", c.segmentation.eps);
    v("min_pts", c.segmentation.min_pts);
    v("offset_noise", c.segmentation.offset_noise);
  });
  v.section("align", [&] {
    v("view_directions", c.align.view_directions);
    v("inplane_steps", c.align.inplane_steps);
    v("percentile_lo", c.align.percentile_lo);
    v("percentile_hi", c.align.percentile_hi);
    v("refine_iterations", c.align.refine_iterations);
    v("refine_top_k", c.align.refine_top_k);
    v("max_score_points", c.align.max_score_points);
    v("accept_chamfer", c.align.accept_chamfer);
    v("ransac_iterations", c.align.ransac.iterations);
    v("ransac_threshold", c.align.ransac.inlier_threshold);
    v("view_completion", c.align.view_completion);
    v("pca_hypotheses", c.align.pca_hypotheses);
    v("free_space_weight", c.align.free_space_weight);
    v("free_space_tol", c.align.free_space_tol);
  });
  v.section("proposals", [&] {
    v("max_approach_angle_deg", c.proposals.max_approach_angle_deg);
    v("collision_margin", c.proposals.collision_margin);
    v("approach_distance", c.proposals.approach_distance);
    v("normal_neighbors", c.proposals.normal_neighbors);
  });
  v.section("plan", [&] {
    v("n_direct", c.plan.n_direct);
    v("score_samples", c.plan.score_samples);
    v("exhaustive", c.plan.exhaustive);
    v("no_affordance", c.plan.no_affordance);
    v("uniform_scale", c.plan.uniform_scale);
  });
  v.section("eval", [&] { v("plans_per_scene", c.eval.plans_per_scene); });
}

/// Shared grasp parameters are copied into every module that uses them.
inline void sync_config(Config& c) {
  c.codebook.grasp = c.grasp;
  c.proposals.grasp = c.grasp;
  c.relevance.grasp = c.grasp;
  c.align.uniform_scale = c.plan.uniform_scale;
  if (c.heatmap.aggregate != "average" && c.heatmap.aggregate != "pool") {
    throw ParseError("config: heatmap.aggregate must be \"average\" or \"pool\"");
  }
  if (c.axial_symmetry < 1) throw ParseError("config: canonical.axial_symmetry must be >= 1");
  c.canonical.symmetries.clear();
  for (int k = 0; k < c.axial_symmetry; ++k) {
    c.canonical.symmetries.push_back(axis_angle(Vec3::UnitZ(), 2.0 * kPi * k / c.axial_symmetry));
  }
  if (c.plan.score_samples < 1) throw ParseError("config: plan.score_samples must be >= 1");
  if (c.eval.plans_per_scene < 1) throw ParseError("config: eval.plans_per_scene must be >= 1");
  if (!(c.segmentation.eps > 0.0)) throw ParseError("config: segmentation.eps must be positive");
  try {
    c.scenes.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

inline Config config_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("config: top level must be an object");
  Config c;
  detail::ConfigReader r{&j, "", {}};
  std::set<std::string> top;
  r.known_stack.push_back(&top);
  visit_config(c, r);
  for (const auto& [k, v] : j.items()) {
    if (!top.count(k)) throw ParseError("config: unknown key " + k);
  }
  sync_config(c);
  return c;
}

inline Config load_config(const fs::path& path) {
  try {
    return config_from_json(read_json(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline json config_to_json(Config c) {
  detail::ConfigWriter w;
  visit_config(c, w);
  return w.root;
}

}  // namespace catgrasp

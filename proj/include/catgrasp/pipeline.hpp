#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "catgrasp/affordance.hpp"
#include "catgrasp/config.hpp"
#include "catgrasp/grasping.hpp"
#include "catgrasp/io.hpp"
#include "catgrasp/log.hpp"
#include "catgrasp/nunocs.hpp"
#include "catgrasp/sampling.hpp"
#include "catgrasp/scenegen.hpp"
#include "catgrasp/segmentation.hpp"

namespace catgrasp {

// ---------------------------------------------------------------------------
// Offline artifacts
// ---------------------------------------------------------------------------

inline CanonicalModel run_build_canonical(const std::vector<ModelEntry>& models, const Config& cfg) {
  std::vector<TriMesh> meshes;
  std::vector<std::string> ids;
  for (const auto& m : models) {
    meshes.push_back(m.mesh);
    ids.push_back(m.id);
  }
  CanonicalBuildParams prm = cfg.canonical;
  prm.seed = derive_seed(cfg.seed, "canonical");
  return build_canonical(meshes, ids, prm);
}

/// Models of the canonical set, in canonical order. Missing ones are an error.
inline std::vector<ModelEntry> canonical_members(const std::vector<ModelEntry>& models, const CanonicalModel& canon) {
  std::vector<ModelEntry> out;
  for (const auto& id : canon.instance_ids) out.push_back({id, find_model(models, id)});
  return out;
}

inline GraspCodebook run_build_codebook(const std::vector<ModelEntry>& models, const CanonicalModel& canon,
                                        const GripperModel& gripper, const Config& cfg, std::size_t threads) {
  std::vector<TriMesh> meshes;
  std::vector<std::string> ids;
  for (const auto& m : canonical_members(models, canon)) {
    meshes.push_back(m.mesh);
    ids.push_back(m.id);
  }
  GraspCodebook book = build_codebook(meshes, ids, canon, gripper, cfg.codebook, derive_seed(cfg.seed, "codebook"), threads);
  book.category = canon.category;
  return book;
}

/// Per-instance discovery with codebook grasps carried onto the instance plus freshly
/// sampled ones, then aggregation onto the template.
inline HeatmapArtifact run_build_heatmap(const std::vector<ModelEntry>& models, const CanonicalModel& canon,
                                         const GraspCodebook& book, const GripperModel& gripper,
                                         const PlacementTask& task, const Config& cfg, std::size_t threads) {
  const GripperIndex gi(gripper);
  const std::uint64_t root = derive_seed(cfg.seed, "heatmap");
  HeatmapArtifact out;
  out.category = canon.category;
  out.mode = cfg.heatmap.aggregate;
  std::vector<InstanceHeatmap> per;
  for (const auto& m : canonical_members(models, canon)) {
    const std::uint64_t s = derive_seed(root, m.id);
    const PointCloud cloud = poisson_disk_sample(m.mesh, canon.sample_radius, derive_seed(s, "sample"));
    const GraspTarget target(m.mesh, cloud);
    const AffineMap to_c = instance_to_canonical(canon, m.id);
    const Mat3 rot = instance_to_canonical_rotation(canon, m.id);
    std::vector<Grasp> grasps;
    for (const auto& g : book.grasps) {
      Grasp t = transfer_grasp_inverse(g, to_c, rot, gripper);
      t.width = std::clamp(t.width, 0.0, gripper.max_opening);
      grasps.push_back(t);
    }
    const auto sampled = sample_grasps(cloud, gripper, cfg.heatmap.grasps_per_instance, derive_seed(s, "grasps"), cfg.grasp);
    grasps.insert(grasps.end(), sampled.begin(), sampled.end());
    const PlacementContext ctx(m.mesh, task);
    DiscoverStats st;
    ContactHeatmap hm = discover_heatmap(target, grasps, gi, ctx, cfg.grasp, threads, &st);
    out.stats[m.id] = st;
    log_info("heatmap " + m.id + ": " + std::to_string(st.grasps) + " grasps, " + std::to_string(st.stable) +
             " stable, " + std::to_string(st.placed) + " placed");
    per.push_back({m.id, std::move(hm)});
  }
  out.heatmap = aggregate_heatmaps(per, canon, out.mode == "pool" ? AggregateMode::pool : AggregateMode::average);
  out.heatmap.check();
  return out;
}

// ---------------------------------------------------------------------------
// Scene datasets
// ---------------------------------------------------------------------------

inline std::string scene_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", i);
  return buf;
}

inline void write_scene_dir(const fs::path& dir, const Scene& scene, const Rendered& r) {
  fs::create_directories(dir);
  save_scene(dir / "scene.json", scene);
  write_pfm(dir / "depth.pfm", r.depth);
  write_file_atomic(dir / "camera.json", dump(camera_json(scene.camera)));
  save_ground_truth(dir, scene, r);
}

inline void run_gen_scenes(const std::vector<ModelEntry>& models, std::size_t n, const fs::path& out,
                           const Config& cfg, std::size_t threads) {
  const std::uint64_t root = derive_seed(cfg.seed, "scenes");
  json names = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Scene scene = generate_scene(models, cfg.scenes, derive_seed(root, i));
    RenderParams rp = cfg.render;
    rp.seed = derive_seed(derive_seed(root, i), "render");
    write_scene_dir(out / scene_dir_name(i), scene, render_depth(scene, models, rp, threads));
    names.push_back(scene_dir_name(i));
  }
  json j = artifact_header("dataset");
  j["seed"] = cfg.seed;
  j["scenes"] = names;
  json ids = json::array();
  for (const auto& m : models) ids.push_back(m.id);
  j["models"] = ids;
  write_file_atomic(out / "dataset.json", dump(j));
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// What the planner sees: a depth image, its cloud, and the per-point offsets and
/// foreground mask that stand in for the segmentation network.
struct Observation {
  Camera camera;
  DepthImage depth;
  PointCloud cloud;
  std::vector<int> pixel;
  std::vector<int> instance;  // ground-truth id per point (kBinLabel on the bin)
  std::vector<Vec3> offsets;
  std::vector<Vec3> nunocs;   // ground-truth instance NUNOCS per point
  std::vector<std::string> model_ids;
};

inline Observation observe(const Scene& scene, const Rendered& r) {
  Observation o;
  o.camera = scene.camera;
  o.depth = r.depth;
  o.cloud = r.cloud;
  o.pixel = r.gt.point_pixel;
  o.instance = r.gt.instance;
  o.offsets = r.gt.offsets;
  o.nunocs = r.gt.nunocs;
  for (const auto& i : scene.instances) o.model_ids.push_back(i.model_id);
  return o;
}

/// Observation read back from a dataset scene directory.
inline Observation load_observation(const fs::path& dir) {
  Observation o;
  o.camera = parse_guard(dir / "camera.json", [&] { return camera_from(read_artifact(dir / "camera.json", "camera")); });
  o.depth = read_pfm(dir / "depth.pfm", o.camera.intrinsics);
  const LoadedTruth t = load_ground_truth(dir, o.camera.intrinsics);
  o.model_ids = t.model_ids;
  const PointCloud pc = depth_to_cloud(o.depth, &o.pixel);
  o.cloud = pc;
  for (int p : o.pixel) {
    o.instance.push_back(t.pixel_instance[p] == kNoHit ? kBinLabel : t.pixel_instance[p]);
    o.offsets.push_back(t.pixel_offset[p]);
    o.nunocs.push_back(t.pixel_nunocs[p]);
  }
  return o;
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

struct Artifacts {
  CanonicalModel canon;
  GraspCodebook book;
  ContactHeatmap heatmap;
  GripperModel gripper;
};

struct RankedGrasp {
  Grasp grasp;  // camera frame; quality = P(G)
  double p_g = 0.0;
  double p_tg = 0.0;
  double joint = 0.0;
  int segment = -1;
  GraspSource source = GraspSource::codebook;
  std::size_t order = 0;  // position before ranking
};

struct SegmentReport {
  int cluster = -1;
  int visibility = 0;
  std::vector<int> points;  // indices into the observation cloud
  bool pose_ok = false;
  std::string error;
  NunocsPrediction prediction;
  std::size_t from_codebook = 0, from_direct = 0;
  std::size_t rejected_reach = 0, rejected_collision = 0, rejected_no_contact = 0;
  std::size_t accepted = 0;
};

struct PlanResult {
  std::vector<RankedGrasp> ranked;
  std::vector<SegmentReport> segments;
  std::size_t foreground_points = 0;
  std::size_t noise_points = 0;
  bool found() const { return !ranked.empty(); }
};

inline const char* source_name(GraspSource s) { return s == GraspSource::codebook ? "codebook" : "direct"; }

/// Joint score descending, then P(G), then proposal order.
inline void rank_grasps(std::vector<RankedGrasp>& g) {
  std::stable_sort(g.begin(), g.end(), [](const RankedGrasp& a, const RankedGrasp& b) {
    if (a.joint != b.joint) return a.joint > b.joint;
    if (a.p_g != b.p_g) return a.p_g > b.p_g;
    return a.order < b.order;
  });
}

inline void debug_exports(const fs::path& dir, const Observation& obs, const PlanResult& res, const Artifacts& art) {
  fs::create_directories(dir);
  for (const auto& s : res.segments) {
    PointCloud pc;
    for (int i : s.points) pc.points.push_back(obs.cloud.points[i]);
    const std::string stem = "segment_" + std::to_string(s.cluster);
    save_cloud_ply(dir / (stem + ".ply"), pc);
    if (!s.pose_ok) continue;
    const TriMesh m = transform_mesh(art.canon.template_mesh, s.prediction.pose);
    save_mesh(dir / (stem + "_template.ply"), m);
  }
  PointCloud centers;
  PlyAttribute joint{"joint", false, {}}, pg{"p_g", false, {}}, ptg{"p_tg", false, {}};
  for (const auto& r : res.ranked) {
    centers.points.push_back(r.grasp.pose.translation);
    centers.normals.push_back(r.grasp.pose.rotation * art.gripper.approach);
    joint.values.push_back(r.joint);
    pg.values.push_back(r.p_g);
    ptg.values.push_back(r.p_tg);
  }
  save_cloud_ply(dir / "proposals.ply", centers, {joint, pg, ptg});
}

inline PlanResult run_plan(const Observation& obs, const Artifacts& art, const Config& cfg, std::size_t threads,
                           const fs::path& debug_dir = {}) {
  PlanResult res;
  const GripperIndex gi(art.gripper);
  const std::uint64_t root = derive_seed(cfg.seed, "plan");
  if (art.heatmap.size() != art.canon.template_cloud.points.size()) {
    throw Error("plan: heatmap does not belong to this canonical model");
  }

  // Foreground points and their offsets stand in for the network output.
  PointCloud fg;
  std::vector<int> fg_index;
  std::vector<Vec3> offsets;
  for (std::size_t i = 0; i < obs.cloud.size(); ++i) {
    if (obs.instance[i] < 0) continue;
    fg.points.push_back(obs.cloud.points[i]);
    offsets.push_back(obs.offsets[i]);
    fg_index.push_back(static_cast<int>(i));
  }
  res.foreground_points = fg.size();
  offsets = noisy_offsets(offsets, cfg.segmentation.offset_noise, derive_seed(root, "offsets"));
  SegmentResult seg = cluster_offsets(fg, offsets, cfg.segmentation.eps, cfg.segmentation.min_pts);
  seg = order_by_visibility(seg, fg, obs.depth);
  res.noise_points = static_cast<std::size_t>(std::count(seg.labels.begin(), seg.labels.end(), kNoiseLabel));

  const KdTree scene_tree(obs.cloud.points);
  ProposalParams pp = cfg.proposals;
  pp.world_up = obs.camera.pose.rotation.transpose() * Vec3::UnitZ();
  AlignParams ap = cfg.align;
  ap.uniform_scale = cfg.plan.uniform_scale;

  for (int c : seg.order) {
    SegmentReport rep;
    rep.cluster = c;
    rep.visibility = seg.visibility[c];
    PointCloud segment;
    for (int k : seg.clusters[c]) {
      rep.points.push_back(fg_index[k]);
      segment.points.push_back(fg.points[k]);
    }
    const std::uint64_t s = derive_seed(root, static_cast<std::uint64_t>(c));
    ap.seed = derive_seed(s, "align");
    try {
      rep.prediction = predict_nunocs(segment, art.canon, ap, threads);
      rep.pose_ok = true;
    } catch (const PredictionError& e) {
      rep.error = e.what();
      res.segments.push_back(std::move(rep));
      continue;
    }
    const Pose9D& pose = rep.prediction.pose;
    const ProposalReport pr =
        propose_grasps(segment, pose, art.book, gi, obs.cloud, scene_tree, cfg.plan.n_direct, derive_seed(s, "direct"), pp, threads);
    rep.from_codebook = pr.from_codebook;
    rep.from_direct = pr.from_direct;
    rep.rejected_reach = pr.rejected_reach;
    rep.rejected_collision = pr.rejected_collision;

    const GraspTarget target = transformed_template(art.canon, pose);
    std::vector<RankedGrasp> scored(pr.proposals.size());
    std::vector<char> touches(pr.proposals.size(), 0);
    parallel_for(pr.proposals.size(), threads, [&](std::size_t i) {
      const Grasp& g = pr.proposals[i].grasp;
      std::vector<int> contacts;
      const double rel = task_relevance(g, target, art.heatmap, gi, cfg.relevance, &contacts);
      if (contacts.empty()) return;
      touches[i] = 1;
      RankedGrasp& r = scored[i];
      r.grasp = g;
      r.p_tg = cfg.plan.no_affordance ? 1.0 : rel;
      r.p_g = score_grasp(target, g, gi, cfg.plan.score_samples, cfg.codebook.perturb, derive_seed(s, i), cfg.grasp);
      r.joint = joint_score(r.p_g, r.p_tg);
      r.grasp.quality = r.p_g;
      r.segment = c;
      r.source = pr.proposals[i].source;
    });
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (!touches[i]) {
        ++rep.rejected_no_contact;
        continue;
      }
      scored[i].order = res.ranked.size();
      res.ranked.push_back(scored[i]);
      ++rep.accepted;
    }
    const bool done = rep.accepted > 0 && !cfg.plan.exhaustive;
    res.segments.push_back(std::move(rep));
    if (done) break;
  }
  rank_grasps(res.ranked);
  if (!debug_dir.empty()) debug_exports(debug_dir, obs, res, art);
  return res;
}

inline json plan_json(const PlanResult& r) {
  json j = artifact_header("plan_result");
  j["found"] = r.found();
  j["foreground_points"] = r.foreground_points;
  j["noise_points"] = r.noise_points;
  json ranked = json::array();
  for (const auto& g : r.ranked) {
    ranked.push_back({{"pose", pose_json(g.grasp.pose)},
                      {"width", g.grasp.width},
                      {"p_g", g.p_g},
                      {"p_tg", g.p_tg},
                      {"joint", g.joint},
                      {"segment", g.segment},
                      {"source", source_name(g.source)}});
  }
  j["ranked"] = ranked;
  j["chosen"] = r.found() ? json(0) : json(nullptr);
  json segs = json::array();
  for (const auto& s : r.segments) {
    json e = {{"cluster", s.cluster},
              {"visibility", s.visibility},
              {"points", s.points.size()},
              {"pose_ok", s.pose_ok},
              {"from_codebook", s.from_codebook},
              {"from_direct", s.from_direct},
              {"rejected_reach", s.rejected_reach},
              {"rejected_collision", s.rejected_collision},
              {"rejected_no_contact", s.rejected_no_contact},
              {"accepted", s.accepted}};
    if (s.pose_ok) {
      e["pose"] = pose9_json(s.prediction.pose);
      e["fit_score"] = s.prediction.score;
    } else {
      e["error"] = s.error;
    }
    segs.push_back(e);
  }
  j["segments"] = segs;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct OutcomeCounts {
  int failures = 0;
  int stable_irrelevant = 0;
  int task_relevant = 0;
  int no_grasp = 0;

  int attempts() const { return failures + stable_irrelevant + task_relevant + no_grasp; }
  double task_relevant_rate() const { return attempts() ? static_cast<double>(task_relevant) / attempts() : 0.0; }
};

enum class GraspClass { failure, stable_irrelevant, task_relevant };

struct PlanEvaluation {
  GraspClass verdict = GraspClass::failure;
  int instance = -1;
  std::string model_id;
  std::vector<int> contacts;   // indices into `object_cloud`
  PointCloud object_cloud;     // surface samples of the target, model frame (scaled)
};

/// Executes a chosen grasp on the true object with the grasp oracle, then the placement.
inline PlanEvaluation evaluate_grasp(const Scene& scene, const std::vector<ModelEntry>& models, const Observation& obs,
                                     const RankedGrasp& chosen, const SegmentReport& seg, const GripperIndex& gi,
                                     const PlacementTask& task, const Config& cfg, std::uint64_t seed) {
  PlanEvaluation ev;
  std::map<int, int> votes;
  for (int i : seg.points) ++votes[obs.instance[i]];
  int best = 0;
  for (const auto& [id, n] : votes) {
    if (n > best) {
      best = n;
      ev.instance = id;
    }
  }
  if (ev.instance < 0) return ev;
  const SceneInstance& inst = scene.instances[ev.instance];
  ev.model_id = inst.model_id;
  const TriMesh object = scale_mesh(find_model(models, inst.model_id), inst.scale);
  ev.object_cloud = poisson_disk_sample(object, cfg.codebook.sample_radius, seed);
  const GraspTarget target(object, ev.object_cloud);
  Grasp g = chosen.grasp;
  g.pose = inst.pose.inverse() * scene.camera.pose * chosen.grasp.pose;
  const GraspOutcome out = grasp_oracle(target, g, gi, cfg.grasp);
  ev.contacts = out.contact_points;
  if (!out.success) return ev;
  Grasp held = g;
  held.width = out.closing_width;
  ev.verdict = placement_check(PlacementContext(object, task), held, gi) ? GraspClass::task_relevant
                                                                          : GraspClass::stable_irrelevant;
  return ev;
}

/// Mean distance between predicted canonical coordinates and the truth carried into
/// the template's canonical frame, minimised over the category symmetries.
inline double correspondence_error(const Observation& obs, const SegmentReport& seg, const CanonicalModel& canon) {
  if (!seg.pose_ok || seg.points.empty()) return 0.0;
  std::vector<Vec3> truth;
  truth.reserve(seg.points.size());
  for (int i : seg.points) {
    Vec3 t = obs.nunocs[i];
    const int id = obs.instance[i];
    if (id >= 0) {
      const auto it = canon.instance_poses.find(obs.model_ids[id]);
      if (it != canon.instance_poses.end()) t = it->second.apply(t);
    }
    truth.push_back(t);
  }
  return symmetric_coordinate_error(seg.prediction.canonical_points, truth, canon.symmetries);
}

struct SceneEval {
  std::string name;
  std::vector<GraspClass> plans;
  int no_grasp = 0;
  double correspondence_error = 0.0;  // mean over predicted segments of the first plan
  int segments_predicted = 0;
};

struct EvalReport {
  std::map<std::string, OutcomeCounts> per_model;
  OutcomeCounts total;
  std::vector<SceneEval> scenes;
};

inline SceneEval evaluate_scene(const std::string& name, Scene scene, Observation obs,
                                const std::vector<ModelEntry>& models, const Artifacts& art, const PlacementTask& task,
                                const Config& cfg, std::size_t threads, EvalReport& report) {
  SceneEval se;
  se.name = name;
  const GripperIndex gi(art.gripper);
  for (int k = 0; k < cfg.eval.plans_per_scene; ++k) {
    Config c = cfg;
    c.seed = derive_seed(derive_seed(cfg.seed, name), static_cast<std::uint64_t>(k));
    const PlanResult pr = run_plan(obs, art, c, threads);
    if (k == 0) {
      double sum = 0.0;
      for (const auto& s : pr.segments) {
        if (!s.pose_ok) continue;
        sum += correspondence_error(obs, s, art.canon);
        ++se.segments_predicted;
      }
      se.correspondence_error = se.segments_predicted ? sum / se.segments_predicted : 0.0;
    }
    if (!pr.found()) {
      ++se.no_grasp;
      ++report.total.no_grasp;
      break;
    }
    const RankedGrasp& chosen = pr.ranked.front();
    const SegmentReport* seg = nullptr;
    for (const auto& s : pr.segments) {
      if (s.cluster == chosen.segment) seg = &s;
    }
    const PlanEvaluation ev = evaluate_grasp(scene, models, obs, chosen, *seg, gi, task, cfg, derive_seed(c.seed, "object"));
    se.plans.push_back(ev.verdict);
    OutcomeCounts& pm = report.per_model[ev.model_id.empty() ? "(background)" : ev.model_id];
    for (OutcomeCounts* oc : {&pm, &report.total}) {
      if (ev.verdict == GraspClass::failure) ++oc->failures;
      if (ev.verdict == GraspClass::stable_irrelevant) ++oc->stable_irrelevant;
      if (ev.verdict == GraspClass::task_relevant) ++oc->task_relevant;
    }
    if (k + 1 == cfg.eval.plans_per_scene || ev.instance < 0) break;
    // The object leaves the bin whatever the outcome; the rest is re-observed.
    scene.instances.erase(scene.instances.begin() + ev.instance);
    if (scene.instances.empty()) break;
    RenderParams rp = cfg.render;
    rp.seed = derive_seed(c.seed, "render");
    obs = observe(scene, render_depth(scene, models, rp, threads));
  }
  return se;
}

inline EvalReport run_eval(const fs::path& dataset, const std::vector<ModelEntry>& models, const Artifacts& art,
                           const PlacementTask& task, const Config& cfg, std::size_t threads) {
  EvalReport report;
  const json j = read_artifact(dataset / "dataset.json", "dataset");
  const auto names = parse_guard(dataset / "dataset.json", [&] { return j.at("scenes").get<std::vector<std::string>>(); });
  for (const auto& name : names) {
    const fs::path dir = dataset / name;
    const Scene scene = load_scene(dir / "scene.json");
    const Observation obs = load_observation(dir);
    report.scenes.push_back(evaluate_scene(name, scene, obs, models, art, task, cfg, threads, report));
  }
  return report;
}

inline json eval_json(const EvalReport& r) {
  const auto counts = [](const OutcomeCounts& c) {
    return json{{"failures", c.failures},
                {"stable_task_irrelevant", c.stable_irrelevant},
                {"task_relevant", c.task_relevant},
                {"no_grasp", c.no_grasp},
                {"task_relevant_rate", c.task_relevant_rate()}};
  };
  json j = artifact_header("eval_report");
  j["total"] = counts(r.total);
  json pm = json::object();
  for (const auto& [id, c] : r.per_model) pm[id] = counts(c);
  j["per_model"] = pm;
  json scenes = json::array();
  std::vector<double> errs;
  for (const auto& s : r.scenes) {
    json plans = json::array();
    for (auto v : s.plans) {
      plans.push_back(v == GraspClass::failure ? "failure" : v == GraspClass::task_relevant ? "task_relevant" : "stable_task_irrelevant");
    }
    scenes.push_back({{"name", s.name},
                      {"plans", plans},
                      {"no_grasp", s.no_grasp},
                      {"segments_predicted", s.segments_predicted},
                      {"correspondence_error", s.correspondence_error}});
    if (s.segments_predicted) errs.push_back(s.correspondence_error);
  }
  j["scenes"] = scenes;
  json pose = {{"scenes", errs.size()}};
  if (!errs.empty()) {
    std::sort(errs.begin(), errs.end());
    pose["mean_correspondence_error"] = std::accumulate(errs.begin(), errs.end(), 0.0) / errs.size();
    pose["median_correspondence_error"] = errs[errs.size() / 2];
    pose["max_correspondence_error"] = errs.back();
  }
  j["nunocs"] = pose;
  return j;
}

}  // namespace catgrasp

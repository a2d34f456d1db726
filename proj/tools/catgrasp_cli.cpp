#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "catgrasp/demo.hpp"
#include "catgrasp/pipeline.hpp"

using namespace catgrasp;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
  std::string debug_dir;
  bool verbose = false;
};

Config load(const Globals& g) {
  Config c = g.config.empty() ? Config{} : load_config(g.config);
  if (g.seed_set) c.seed = g.seed;
  sync_config(c);
  return c;
}

Artifacts load_artifacts(const std::string& canonical, const std::string& codebook, const std::string& heatmap,
                         const std::string& gripper) {
  Artifacts a;
  a.canon = load_canonical(canonical);
  a.book = load_codebook(codebook);
  a.heatmap = load_heatmap(heatmap).heatmap;
  a.gripper = load_gripper(gripper);
  if (a.book.category != a.canon.category) {
    throw Error("codebook category " + a.book.category + " does not match canonical " + a.canon.category);
  }
  return a;
}

void check_in(CLI::App& app, std::string& s, const char* flag, const char* help) {
  app.add_option(flag, s, help)->required()->check(CLI::ExistingPath);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-relevant grasp planning for categories of objects in a bin"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON config file (defaults for missing keys)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "root seed, overrides the config")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");
  app.add_option("--debug-dir", g.debug_dir, "where plan writes segment and proposal PLYs");
  app.add_flag("-v,--verbose", g.verbose, "progress messages on stderr");

  std::string models, out, canonical, codebook, heatmap, gripper, task, scene, dataset;
  std::size_t n_scenes = 10;
  bool no_affordance = false, uniform_scale = false, exhaustive = false;

  auto* c_canon = app.add_subcommand("build-canonical", "pick the category template and per-instance NUNOCS frames");
  check_in(*c_canon, models, "--models", "directory of .obj/.ply instances");
  c_canon->add_option("--out", out, "canonical model JSON")->required();

  auto* c_book = app.add_subcommand("build-codebook", "stable grasps on every instance, pooled in the canonical frame");
  check_in(*c_book, models, "--models", "directory of .obj/.ply instances");
  check_in(*c_book, canonical, "--canonical", "canonical model JSON");
  check_in(*c_book, gripper, "--gripper", "gripper directory");
  c_book->add_option("--out", out, "codebook JSON")->required();

  auto* c_heat = app.add_subcommand("build-heatmap", "task-relevance heatmap on the template");
  check_in(*c_heat, models, "--models", "directory of .obj/.ply instances");
  check_in(*c_heat, canonical, "--canonical", "canonical model JSON");
  check_in(*c_heat, codebook, "--codebook", "codebook JSON");
  check_in(*c_heat, gripper, "--gripper", "gripper directory");
  check_in(*c_heat, task, "--task", "placement task JSON");
  c_heat->add_option("--out", out, "heatmap JSON")->required();

  auto* c_scenes = app.add_subcommand("gen-scenes", "cluttered bins, depth images and ground truth");
  check_in(*c_scenes, models, "--models", "directory of .obj/.ply instances");
  c_scenes->add_option("-n,--n-scenes", n_scenes, "number of scenes")->check(CLI::NonNegativeNumber);
  c_scenes->add_option("--out", out, "dataset directory")->required();

  const auto ablations = [&](CLI::App* a) {
    a->add_flag("--no-affordance", no_affordance, "rank by P(G) alone");
    a->add_flag("--uniform-scale", uniform_scale, "fit poses with one isotropic scale");
    a->add_flag("--exhaustive", exhaustive, "rank grasps across all segments");
  };
  auto* c_plan = app.add_subcommand("plan", "ranked grasps for one observed scene");
  check_in(*c_plan, scene, "--scene", "scene directory (depth.pfm, camera.json, gt.*)");
  check_in(*c_plan, canonical, "--canonical", "canonical model JSON");
  check_in(*c_plan, codebook, "--codebook", "codebook JSON");
  check_in(*c_plan, heatmap, "--heatmap", "heatmap JSON");
  check_in(*c_plan, gripper, "--gripper", "gripper directory");
  c_plan->add_option("--out", out, "plan result JSON")->required();
  ablations(c_plan);

  auto* c_eval = app.add_subcommand("eval", "plan on every dataset scene and classify the outcomes");
  check_in(*c_eval, dataset, "--dataset", "dataset directory from gen-scenes");
  check_in(*c_eval, models, "--models", "directory of .obj/.ply instances");
  check_in(*c_eval, canonical, "--canonical", "canonical model JSON");
  check_in(*c_eval, codebook, "--codebook", "codebook JSON");
  check_in(*c_eval, heatmap, "--heatmap", "heatmap JSON");
  check_in(*c_eval, gripper, "--gripper", "gripper directory");
  check_in(*c_eval, task, "--task", "placement task JSON");
  c_eval->add_option("--out", out, "report JSON")->required();
  ablations(c_eval);

  auto* c_demo = app.add_subcommand("demo-assets", "write a screw category, a gripper and a screw-in-hole task");
  c_demo->add_option("--out", out, "output directory")->required();

  auto* c_cfg = app.add_subcommand("dump-config", "print the effective config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  info_enabled() = g.verbose;

  try {
    Config cfg = load(g);
    const auto apply_ablations = [&] {
      cfg.plan.no_affordance = cfg.plan.no_affordance || no_affordance;
      cfg.plan.uniform_scale = cfg.plan.uniform_scale || uniform_scale;
      cfg.plan.exhaustive = cfg.plan.exhaustive || exhaustive;
      sync_config(cfg);
    };

    if (c_canon->parsed()) {
      save_canonical(out, run_build_canonical(load_models(models), cfg));
    } else if (c_book->parsed()) {
      const CanonicalModel canon = load_canonical(canonical);
      save_codebook(out, run_build_codebook(load_models(models), canon, load_gripper(gripper), cfg, g.threads));
    } else if (c_heat->parsed()) {
      const CanonicalModel canon = load_canonical(canonical);
      const GraspCodebook book = load_codebook(codebook);
      save_heatmap(out, run_build_heatmap(load_models(models), canon, book, load_gripper(gripper), load_task(task), cfg,
                                          g.threads));
    } else if (c_scenes->parsed()) {
      run_gen_scenes(load_models(models), n_scenes, out, cfg, g.threads);
    } else if (c_plan->parsed()) {
      apply_ablations();
      const Artifacts art = load_artifacts(canonical, codebook, heatmap, gripper);
      const PlanResult r = run_plan(load_observation(scene), art, cfg, g.threads, g.debug_dir);
      write_file_atomic(out, dump(plan_json(r)));
      if (!r.found()) {
        std::cerr << "no grasp found\n";
        return 2;
      }
    } else if (c_eval->parsed()) {
      apply_ablations();
      const Artifacts art = load_artifacts(canonical, codebook, heatmap, gripper);
      const EvalReport r = run_eval(dataset, load_models(models), art, load_task(task), cfg, g.threads);
      write_file_atomic(out, dump(eval_json(r)));
    } else if (c_demo->parsed()) {
      write_demo_assets(out);
    } else if (c_cfg->parsed()) {
      std::cout << dump(config_to_json(cfg));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

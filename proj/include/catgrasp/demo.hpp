#pragma once

#include <string>
#include <vector>

#include "catgrasp/affordance.hpp"
#include "catgrasp/gripper.hpp"
#include "catgrasp/io.hpp"
#include "catgrasp/shapes.hpp"

namespace catgrasp {

/// A small screw category: varied head and shaft proportions, same topology.
inline std::vector<ModelEntry> demo_screws() {
  std::vector<ModelEntry> out;
  const struct {
    const char* id;
    double head_r, head_h, shaft_r, shaft_l;
  } rows[] = {
      {"screw_a", 0.0095, 0.010, 0.004, 0.030},
      {"screw_b", 0.0100, 0.009, 0.0042, 0.036},
      {"screw_c", 0.0090, 0.011, 0.0038, 0.026},
      {"screw_d", 0.0105, 0.009, 0.0045, 0.032},
  };
  for (const auto& r : rows) {
    shapes::ScrewParams p;
    p.head_radius = r.head_r;
    p.head_height = r.head_h;
    p.shaft_radius = r.shaft_r;
    p.shaft_length = r.shaft_l;
    p.segments = 32;
    out.push_back({r.id, shapes::screw(p)});
  }
  return out;
}

/// models/, gripper/ and task.json under `dir`.
inline void write_demo_assets(const fs::path& dir) {
  fs::create_directories(dir / "models");
  for (const auto& m : demo_screws()) save_mesh(dir / "models" / (m.id + ".obj"), m.mesh);
  save_gripper(dir / "gripper", make_box_gripper());
  save_task(dir / "task.json", make_screw_task());
}

}  // namespace catgrasp

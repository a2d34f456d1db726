#pragma once

#include <map>
#include <utility>
#include <vector>

#include "catgrasp/geometry.hpp"

// Closed, outward-oriented primitive meshes used for grippers, bins and the
// synthetic object categories.

namespace catgrasp::shapes {

/// Axis-aligned box with the given full extents, centered at `center`.
inline TriMesh box(const Vec3& extents, const Vec3& center = Vec3::Zero()) {
  const Vec3 h = 0.5 * extents;
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.push_back(center + Vec3((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                                       (i & 4) ? h.z() : -h.z()));
  }
  m.faces = {{0, 2, 1}, {1, 2, 3},   // -z
             {4, 5, 6}, {5, 7, 6},   // +z
             {0, 1, 4}, {1, 5, 4},   // -y
             {2, 6, 3}, {3, 6, 7},   // +y
             {0, 4, 2}, {2, 4, 6},   // -x
             {1, 3, 5}, {3, 7, 5}};  // +x
  return m;
}

inline TriMesh box_between(const Vec3& lo, const Vec3& hi) { return box(hi - lo, 0.5 * (lo + hi)); }

/// Surface of revolution about +z. `profile` is a list of (radius, z); the first and
/// last entries must have radius 0 (poles). Profile runs bottom pole to top pole.
inline TriMesh revolve(const std::vector<std::pair<double, double>>& profile, int segments) {
  TriMesh m;
  std::vector<std::vector<int>> rings;
  for (const auto& [r, z] : profile) {
    std::vector<int> ring;
    if (r == 0.0) {
      ring.assign(segments, static_cast<int>(m.vertices.size()));
      m.vertices.emplace_back(0.0, 0.0, z);
    } else {
      for (int j = 0; j < segments; ++j) {
        const double th = 2.0 * kPi * j / segments;
        ring.push_back(static_cast<int>(m.vertices.size()));
        m.vertices.emplace_back(r * std::cos(th), r * std::sin(th), z);
      }
    }
    rings.push_back(std::move(ring));
  }
  for (std::size_t i = 0; i + 1 < rings.size(); ++i) {
    const auto& lo = rings[i];
    const auto& hi = rings[i + 1];
    for (int j = 0; j < segments; ++j) {
      const int jn = (j + 1) % segments;
      const int a = lo[j], b = lo[jn], c = hi[jn], d = hi[j];
      if (a != b) m.faces.push_back({a, b, c});
      if (c != d) m.faces.push_back({a, c, d});
    }
  }
  return m;
}

inline TriMesh cylinder(double radius, double height, int segments = 24, double z0 = 0.0) {
  return revolve({{0.0, z0}, {radius, z0}, {radius, z0 + height}, {0.0, z0 + height}}, segments);
}

inline TriMesh icosphere(double radius, int subdivisions = 2) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    const auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const int id = static_cast<int>(m.vertices.size());
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> faces;
    for (const auto& f : m.faces) {
      const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
      faces.push_back({f[0], ab, ca});
      faces.push_back({f[1], bc, ab});
      faces.push_back({f[2], ca, bc});
      faces.push_back({ab, bc, ca});
    }
    m.faces = std::move(faces);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

struct ScrewParams {
  double head_radius = 0.007;
  double head_height = 0.010;
  double shaft_radius = 0.004;
  double shaft_length = 0.030;
  double tip_length = 0.003;
  int segments = 12;
};

/// Screw along +z with the underside of the head at z = 0: head occupies z in
/// [0, head_height], shaft and tip hang below to z = -shaft_length.
inline TriMesh screw(const ScrewParams& p = {}) {
  return revolve({{0.0, -p.shaft_length},
                  {p.shaft_radius * 0.5, -p.shaft_length + p.tip_length * 0.5},
                  {p.shaft_radius, -p.shaft_length + p.tip_length},
                  {p.shaft_radius, 0.0},
                  {p.head_radius, 0.0},
                  {p.head_radius, p.head_height},
                  {0.0, p.head_height}},
                 p.segments);
}

/// Square plate in z in [-thickness, 0] with a round through-hole at the origin.
inline TriMesh plate_with_hole(double side, double thickness, double hole_radius, int segments = 16) {
  TriMesh m;
  const double h = 0.5 * side;
  std::vector<int> in_top, in_bot, out_top, out_bot;
  for (int j = 0; j < segments; ++j) {
    const double th = 2.0 * kPi * j / segments;
    const Vec3 dir(std::cos(th), std::sin(th), 0.0);
    const double s = h / std::max(std::abs(dir.x()), std::abs(dir.y()));
    const Vec3 inner = hole_radius * dir;
    const Vec3 outer = s * dir;
    in_top.push_back(static_cast<int>(m.vertices.size()));
    m.vertices.push_back(inner);
    in_bot.push_back(static_cast<int>(m.vertices.size()));
    m.vertices.push_back(inner - Vec3(0, 0, thickness));
    out_top.push_back(static_cast<int>(m.vertices.size()));
    m.vertices.push_back(outer);
    out_bot.push_back(static_cast<int>(m.vertices.size()));
    m.vertices.push_back(outer - Vec3(0, 0, thickness));
  }
  for (int j = 0; j < segments; ++j) {
    const int k = (j + 1) % segments;
    // top (+z)
    m.faces.push_back({in_top[j], out_top[j], out_top[k]});
    m.faces.push_back({in_top[j], out_top[k], in_top[k]});
    // bottom (-z)
    m.faces.push_back({in_bot[j], out_bot[k], out_bot[j]});
    m.faces.push_back({in_bot[j], in_bot[k], out_bot[k]});
    // outer wall
    m.faces.push_back({out_bot[j], out_bot[k], out_top[k]});
    m.faces.push_back({out_bot[j], out_top[k], out_top[j]});
    // hole wall, facing the axis
    m.faces.push_back({in_bot[j], in_top[k], in_bot[k]});
    m.faces.push_back({in_bot[j], in_top[j], in_top[k]});
  }
  return m;
}

/// Open-top bin: floor top at z = 0, interior [-sx/2, sx/2] x [-sy/2, sy/2].
inline TriMesh bin(double sx, double sy, double wall_height, double thickness = 0.01) {
  const double hx = 0.5 * sx, hy = 0.5 * sy, t = thickness;
  std::vector<TriMesh> parts{
      box_between({-hx - t, -hy - t, -t}, {hx + t, hy + t, 0.0}),
      box_between({-hx - t, -hy - t, 0.0}, {-hx, hy + t, wall_height}),
      box_between({hx, -hy - t, 0.0}, {hx + t, hy + t, wall_height}),
      box_between({-hx, -hy - t, 0.0}, {hx, -hy, wall_height}),
      box_between({-hx, hy, 0.0}, {hx, hy + t, wall_height}),
  };
  return merge_meshes(parts);
}

}  // namespace catgrasp::shapes

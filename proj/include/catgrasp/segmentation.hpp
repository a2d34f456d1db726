#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/kdtree.hpp"
#include "catgrasp/rng.hpp"
#include "catgrasp/scenegen.hpp"

namespace catgrasp {

inline constexpr int kNoiseLabel = -1;

struct SegmentResult {
  std::vector<int> labels;                // per point, kNoiseLabel for noise
  std::vector<std::vector<int>> clusters; // point indices, ascending
  std::vector<int> visibility;            // per cluster pixel count (after order_by_visibility)
  std::vector<int> order;                 // cluster indices, most visible first
};

struct SegmentParams {
  double eps = 0.005;
  std::size_t min_pts = 30;
  double offset_noise = 0.0;  // Gaussian sigma added to the offsets
};

/// DBSCAN over p + offset. Neighbour lists are visited in index order, so border
/// points go to the first cluster (lowest seed index) that reaches them.
inline SegmentResult cluster_offsets(const PointCloud& cloud, std::span<const Vec3> offsets, double eps,
                                     std::size_t min_pts) {
  if (offsets.size() != cloud.size()) throw Error("cluster_offsets: offsets and cloud differ in length");
  SegmentResult out;
  const std::size_t n = cloud.size();
  out.labels.assign(n, kNoiseLabel);
  if (n == 0) return out;
  std::vector<Vec3> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = cloud.points[i] + offsets[i];
  const KdTree tree(shifted);
  const auto neighbours = [&](std::size_t i) {
    auto nb = tree.radius(shifted[i], eps);
    std::sort(nb.begin(), nb.end());
    return nb;
  };

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int cluster = 0;
  std::vector<int> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    const auto nb = neighbours(i);
    if (nb.size() < min_pts) {
      label[i] = kNoiseLabel;
      continue;
    }
    label[i] = cluster;
    queue.clear();
    const auto claim = [&](const std::vector<int>& list) {
      for (int q : list) {
        if (label[q] == kNoiseLabel) {
          label[q] = cluster;  // border point
        } else if (label[q] == kUnvisited) {
          label[q] = cluster;
          queue.push_back(q);
        }
      }
    };
    claim(nb);
    for (std::size_t k = 0; k < queue.size(); ++k) {
      const auto qn = neighbours(queue[k]);
      if (qn.size() >= min_pts) claim(qn);
    }
    ++cluster;
  }
  out.labels = label;
  out.clusters.assign(cluster, {});
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] >= 0) out.clusters[label[i]].push_back(static_cast<int>(i));
  }
  return out;
}

/// Pixel count per cluster. A pixel hit by points of several clusters goes to the
/// point nearest the camera.
inline SegmentResult order_by_visibility(SegmentResult seg, const PointCloud& cloud, const DepthImage& depth) {
  const Intrinsics& K = depth.intrinsics;
  std::map<long, std::pair<double, int>> owner;  // pixel -> (depth, cluster)
  for (std::size_t c = 0; c < seg.clusters.size(); ++c) {
    for (int i : seg.clusters[c]) {
      const Vec3& p = cloud.points[i];
      if (!(p.z() > 0.0)) continue;
      const long u = std::lround(K.fx * p.x() / p.z() + K.cx);
      const long v = std::lround(K.fy * p.y() / p.z() + K.cy);
      if (u < 0 || v < 0 || u >= K.width || v >= K.height) continue;
      const long key = v * K.width + u;
      auto it = owner.find(key);
      const std::pair<double, int> cand{p.z(), static_cast<int>(c)};
      if (it == owner.end()) {
        owner.emplace(key, cand);
      } else if (cand < it->second) {
        it->second = cand;
      }
    }
  }
  seg.visibility.assign(seg.clusters.size(), 0);
  for (const auto& [key, dc] : owner) ++seg.visibility[dc.second];
  seg.order.resize(seg.clusters.size());
  std::iota(seg.order.begin(), seg.order.end(), 0);
  std::stable_sort(seg.order.begin(), seg.order.end(),
                   [&](int a, int b) { return seg.visibility[a] > seg.visibility[b]; });
  return seg;
}

inline std::vector<Vec3> noisy_offsets(std::span<const Vec3> offsets, double sigma, std::uint64_t seed) {
  std::vector<Vec3> out(offsets.begin(), offsets.end());
  if (sigma <= 0.0) return out;
  Rng rng(derive_seed(seed, "offset_noise"));
  for (auto& o : out) o += Vec3(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma));
  return out;
}

/// Fraction of points whose label matches the truth under the best one-to-one
/// relabeling (greedy on the confusion counts). Noise never matches.
inline double label_agreement(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error("label_agreement: length mismatch");
  if (pred.empty()) return 1.0;
  std::map<std::pair<int, int>, long> counts;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= 0 && truth[i] >= 0) ++counts[{pred[i], truth[i]}];
  }
  std::vector<std::pair<long, std::pair<int, int>>> cells;
  for (const auto& [k, c] : counts) cells.push_back({c, k});
  std::stable_sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::map<int, int> used_p, used_t;
  long matched = 0;
  for (const auto& [c, k] : cells) {
    if (used_p.count(k.first) || used_t.count(k.second)) continue;
    used_p[k.first] = k.second;
    used_t[k.second] = k.first;
    matched += c;
  }
  return static_cast<double>(matched) / static_cast<double>(pred.size());
}

/// Foreground part of a rendered scene: instance points with their offsets.
struct Foreground {
  PointCloud cloud;
  std::vector<Vec3> offsets;
  std::vector<int> instance;
  std::vector<int> source_index;  // into the full scene cloud
};

inline Foreground foreground(const Rendered& r) {
  Foreground fg;
  for (std::size_t i = 0; i < r.cloud.size(); ++i) {
    if (r.gt.instance[i] < 0) continue;
    fg.cloud.points.push_back(r.cloud.points[i]);
    fg.offsets.push_back(r.gt.offsets[i]);
    fg.instance.push_back(r.gt.instance[i]);
    fg.source_index.push_back(static_cast<int>(i));
  }
  return fg;
}

}  // namespace catgrasp

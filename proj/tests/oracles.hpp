// Independent reference implementations the unit and acceptance suites check
// against. These deliberately use different algorithms than the library.
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "abus/geometry.hpp"
#include "abus/inference.hpp"

namespace oracles {

/// Voxel-counting IoU for boxes whose corners lie on the integer lattice:
/// count unit cells inside each box and inside both.
inline double voxel_count_iou(const abus::Box3& a, const abus::Box3& b) {
  long long inter = 1, va = 1, vb = 1;
  for (int axis = 0; axis < 3; ++axis) {
    const long long alo = std::llround(a.lo(axis)), ahi = std::llround(a.hi(axis));
    const long long blo = std::llround(b.lo(axis)), bhi = std::llround(b.hi(axis));
    va *= ahi - alo;
    vb *= bhi - blo;
    const long long lo = std::max(alo, blo), hi = std::min(ahi, bhi);
    inter *= std::max(0LL, hi - lo);
  }
  const long long uni = va + vb - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Random box with integer corners inside [0, span]^3.
inline abus::Box3 random_lattice_box(std::mt19937_64& rng, int span = 20,
                                     int max_size = 10) {
  std::uniform_int_distribution<int> size_dist(1, max_size);
  abus::Box3 b;
  int lo[3], size[3];
  for (int axis = 0; axis < 3; ++axis) {
    size[axis] = size_dist(rng);
    std::uniform_int_distribution<int> lo_dist(0, span - size[axis]);
    lo[axis] = lo_dist(rng);
  }
  b.cx = lo[0] + 0.5 * size[0];
  b.cy = lo[1] + 0.5 * size[1];
  b.cz = lo[2] + 0.5 * size[2];
  b.w = size[0];
  b.h = size[1];
  b.d = size[2];
  return b;
}

inline abus::Box3 random_box(std::mt19937_64& rng, double span = 40.0,
                             double min_size = 1.0, double max_size = 15.0) {
  std::uniform_real_distribution<double> center(0.0, span);
  std::uniform_real_distribution<double> size(min_size, max_size);
  abus::Box3 b;
  b.cx = center(rng);
  b.cy = center(rng);
  b.cz = center(rng);
  b.w = size(rng);
  b.h = size(rng);
  b.d = size(rng);
  return b;
}

/// Reference greedy NMS: repeatedly scan for the best-scored unsuppressed
/// detection (earliest index on ties) instead of sorting.
inline std::vector<abus::Detection> reference_nms(
    const std::vector<abus::Detection>& dets, double iou_threshold) {
  std::vector<bool> used(dets.size(), false);
  std::vector<abus::Detection> kept;
  while (true) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (used[i]) continue;
      if (best < 0 || dets[i].score > dets[best].score) best = static_cast<int>(i);
    }
    if (best < 0) break;
    used[best] = true;
    kept.push_back(dets[best]);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (used[i]) continue;
      if (abus::iou3d(dets[best].box, dets[i].box) > iou_threshold) used[i] = true;
    }
  }
  return kept;
}

/// O(n^2) pairwise concordance: P(s+ > s-) + 0.5 P(s+ = s-), accumulated in
/// integer half-units.
inline double pairwise_auc(const std::vector<double>& scores,
                           const std::vector<bool>& labels) {
  long long twice_concordant = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) twice_concordant += 2;
      else if (scores[i] == scores[j]) twice_concordant += 1;
    }
  }
  for (bool l : labels)
    if (!l) ++n_neg;
  return static_cast<double>(twice_concordant) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline bool same_box(const abus::Box3& a, const abus::Box3& b) {
  return a.cx == b.cx && a.cy == b.cy && a.cz == b.cz && a.w == b.w &&
         a.h == b.h && a.d == b.d;
}

}  // namespace oracles

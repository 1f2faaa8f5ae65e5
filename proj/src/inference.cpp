#include "abus/inference.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace abus {

std::vector<Index3> tile_volume(const Index3& volume_shape, const Index3& patch_shape) {
  std::array<std::vector<int>, 3> offsets;
  for (int axis = 0; axis < 3; ++axis) {
    if (patch_shape[axis] < 1 || volume_shape[axis] < 1)
      throw std::invalid_argument("tile_volume: shapes must be >= 1 per axis");
    const int slack = volume_shape[axis] - patch_shape[axis];
    if (slack < 0)
      throw std::invalid_argument("tile_volume: patch exceeds volume");
    if (slack == 0) {
      offsets[axis] = {0};
    } else if (slack * 10 <= patch_shape[axis]) {
      // negligible slack: one centered window, the sliver stays uncovered
      offsets[axis] = {slack / 2};
    } else {
      offsets[axis] = {0, slack};
    }
  }

  std::vector<Index3> origins;
  origins.reserve(offsets[0].size() * offsets[1].size() * offsets[2].size());
  for (int z : offsets[2])
    for (int y : offsets[1])
      for (int x : offsets[0]) origins.push_back({x, y, z});
  return origins;
}

Detection patch_to_volume(const Detection& det, const Index3& origin) {
  Detection out = det;
  out.box.cx += origin[0];
  out.box.cy += origin[1];
  out.box.cz += origin[2];
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: threshold must be in (0, 1)");

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;  // ties keep input order
  });

  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (int idx : order) {
    if (suppressed[idx]) continue;
    kept.push_back(dets[idx]);
    for (int other : order) {
      if (suppressed[other] || other == idx) continue;
      if (iou3d(dets[idx].box, dets[other].box) > iou_threshold)
        suppressed[other] = true;
    }
  }
  return kept;
}

std::vector<Detection> size_filter(const std::vector<Detection>& dets,
                                   double min_volume, double max_volume) {
  if (!(min_volume < max_volume))
    throw std::invalid_argument("size_filter: need min_volume < max_volume");
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const auto& d : dets) {
    if (is_degenerate(d.box)) continue;
    const double v = d.box.volume();
    if (v >= min_volume && v <= max_volume) kept.push_back(d);
  }
  return kept;
}

VolumeResult run_inference(const std::vector<PatchDetections>& per_patch,
                           const PipelineConfig& config,
                           const std::vector<GroundTruth>& gts) {
  std::vector<Detection> pooled;
  for (const auto& patch : per_patch) {
    auto surviving = nms(patch.detections, config.nms_iou_threshold);
    if (static_cast<int>(surviving.size()) > config.per_patch_top_k)
      surviving.resize(config.per_patch_top_k);  // nms output is score-sorted
    for (const auto& det : surviving)
      pooled.push_back(patch_to_volume(det, patch.origin));
  }

  pooled = size_filter(pooled, config.min_volume, config.max_volume);

  VolumeResult result;
  result.gts = gts;
  result.detections = nms(pooled, config.nms_iou_threshold);
  for (auto& det : result.detections) {
    det.max_gt_iou = 0.0;
    for (const auto& gt : gts)
      det.max_gt_iou = std::max(det.max_gt_iou, iou3d(det.box, gt.box));
  }
  return result;
}

}  // namespace abus

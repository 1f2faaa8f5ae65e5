#pragma once

#include <string>
#include <vector>

#include "abus/assignment.hpp"
#include "abus/geometry.hpp"
#include "abus/losses.hpp"

namespace abus {

struct Detection {
  Box3 box;                         // patch-local until patch_to_volume
  double score = 0.0;               // foreground confidence
  std::vector<double> class_probs;  // {benign, malignant}, sums to 1
  Embedding embedding;              // optional, may be empty
  double max_gt_iou = 0.0;          // annotated by run_inference when gts given
};

struct PipelineConfig {
  Index3 patch_shape{320, 96, 320};
  int per_patch_top_k = 3;
  double nms_iou_threshold = 0.1;
  double min_volume = 0.0;  // voxels^3
  double max_volume = 0.0;
};

struct PatchDetections {
  Index3 origin{0, 0, 0};
  std::vector<Detection> detections;
};

/// Per-volume matching unit: ground truths plus the final detections.
struct VolumeResult {
  std::string volume_id;
  std::vector<GroundTruth> gts;
  std::vector<Detection> detections;
  std::array<double, 3> voxel_spacing_mm{1.0, 1.0, 1.0};
};

/// Patch origins of the regular test-time tiling. Per axis: slack 0 -> {0};
/// slack <= patch/10 -> one centered origin (the uncovered sliver is
/// negligible); otherwise the two corner origins {0, slack}. Origins are
/// enumerated z-major (z slowest, x fastest). Throws std::invalid_argument
/// when the patch exceeds the volume.
std::vector<Index3> tile_volume(const Index3& volume_shape, const Index3& patch_shape);

/// Translate a patch-local detection into volume coordinates.
Detection patch_to_volume(const Detection& det, const Index3& origin);

/// Greedy score-descending suppression; discards boxes with IoU strictly
/// above the threshold against a kept box. Ties keep input order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

/// Keep detections with min_volume <= w*h*d <= max_volume; degenerate boxes
/// are always removed. Order preserved.
std::vector<Detection> size_filter(const std::vector<Detection>& dets,
                                   double min_volume, double max_volume);

/// Fixed pipeline: per patch NMS -> top-k -> translate -> pool -> size filter
/// -> final NMS -> max-IoU annotation against gts (when provided). The caller
/// fills volume_id and voxel spacing.
VolumeResult run_inference(const std::vector<PatchDetections>& per_patch,
                           const PipelineConfig& config,
                           const std::vector<GroundTruth>& gts = {});

}  // namespace abus

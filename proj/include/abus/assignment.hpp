#pragma once

#include <vector>

#include "abus/geometry.hpp"

namespace abus {

inline constexpr int kNumForegroundClasses = 2;           // benign, malignant
inline constexpr int kNumClasses = kNumForegroundClasses + 1;  // + background

enum class LesionCategory { benign = 0, malignant = 1 };

/// Class index used by the classification heads: 0 = background,
/// 1 = benign, 2 = malignant.
inline int class_index(LesionCategory c) { return static_cast<int>(c) + 1; }

struct GroundTruth {
  Box3 box;
  LesionCategory category = LesionCategory::benign;
};

struct AssignmentConfig {
  double positive_iou_threshold = 0.2;
  double negative_iou_threshold = 0.1;
  bool force_best_match = true;
};

enum class AnchorLabel { positive, negative, ignore };

struct AnchorAssignment {
  int anchor_index = -1;
  AnchorLabel label = AnchorLabel::negative;
  int gt_index = -1;   // valid iff label == positive
  double iou = 0.0;    // IoU with the matched gt; 0 for negatives
};

/// Label every anchor against the ground truths.
///   - max IoU over gts > positive threshold (strict)  -> positive, matched
///     to the argmax gt (IoU ties: lowest gt index);
///   - with force_best_match, each gt's best-IoU anchor (ties: lowest anchor
///     index) is positive even below threshold, provided the IoU is > 0;
///   - max IoU < negative threshold (strict)           -> negative;
///   - everything else                                 -> ignore.
/// Empty gt list labels every anchor negative.
std::vector<AnchorAssignment> assign_anchors(const std::vector<Box3>& anchors,
                                             const std::vector<GroundTruth>& gts,
                                             const AssignmentConfig& config);

}  // namespace abus

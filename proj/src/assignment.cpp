#include "abus/assignment.hpp"

#include <stdexcept>

namespace abus {

static void validate_config(const AssignmentConfig& c) {
  if (!(0.0 <= c.negative_iou_threshold &&
        c.negative_iou_threshold <= c.positive_iou_threshold &&
        c.positive_iou_threshold <= 1.0))
    throw std::invalid_argument(
        "AssignmentConfig: need 0 <= negative <= positive <= 1");
}

std::vector<AnchorAssignment> assign_anchors(const std::vector<Box3>& anchors,
                                             const std::vector<GroundTruth>& gts,
                                             const AssignmentConfig& config) {
  validate_config(config);

  const int n_anchors = static_cast<int>(anchors.size());
  const int n_gts = static_cast<int>(gts.size());
  std::vector<AnchorAssignment> out(anchors.size());

  if (n_gts == 0) {
    for (int a = 0; a < n_anchors; ++a)
      out[a] = {a, AnchorLabel::negative, -1, 0.0};
    return out;
  }

  // Per-anchor argmax over gts (ties: lowest gt index) and per-gt best anchor
  // (ties: lowest anchor index), from one pass over the IoU matrix.
  std::vector<double> anchor_best_iou(anchors.size(), 0.0);
  std::vector<int> anchor_best_gt(anchors.size(), 0);
  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<int> gt_best_anchor(gts.size(), 0);

  for (int a = 0; a < n_anchors; ++a)
    for (int g = 0; g < n_gts; ++g) {
      const double iou = iou3d(anchors[a], gts[g].box);
      if (iou > anchor_best_iou[a]) {
        anchor_best_iou[a] = iou;
        anchor_best_gt[a] = g;
      }
      if (iou > gt_best_iou[g]) {
        gt_best_iou[g] = iou;
        gt_best_anchor[g] = a;
      }
    }

  for (int a = 0; a < n_anchors; ++a) {
    AnchorAssignment& asg = out[a];
    asg.anchor_index = a;
    if (anchor_best_iou[a] > config.positive_iou_threshold) {
      asg.label = AnchorLabel::positive;
      asg.gt_index = anchor_best_gt[a];
      asg.iou = anchor_best_iou[a];
    } else if (anchor_best_iou[a] < config.negative_iou_threshold) {
      asg.label = AnchorLabel::negative;
    } else {
      asg.label = AnchorLabel::ignore;
    }
  }

  if (config.force_best_match) {
    // Each gt's best anchor becomes positive even below threshold; the match
    // stays the anchor's argmax gt. Zero-overlap "bests" are not claimed.
    for (int g = 0; g < n_gts; ++g) {
      if (gt_best_iou[g] <= 0.0) continue;
      const int a = gt_best_anchor[g];
      if (out[a].label != AnchorLabel::positive) {
        out[a].label = AnchorLabel::positive;
        out[a].gt_index = anchor_best_gt[a];
        out[a].iou = anchor_best_iou[a];
      }
    }
  }

  return out;
}

}  // namespace abus

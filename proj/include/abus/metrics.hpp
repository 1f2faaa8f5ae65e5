#pragma once

#include <array>
#include <optional>
#include <vector>

#include "abus/inference.hpp"

namespace abus {

struct MetricsOptions {
  // A gt is hit when some detection exceeds this IoU (strict). The default 0
  // is the complement of the FP rule (max IoU exactly 0).
  double hit_iou_threshold = 0.0;
  // false: mIoU averages matched IoU over hit lesions; true: misses count as 0.
  bool miou_over_all_lesions = false;
};

struct MatchResult {
  std::vector<int> hit_gt_indices;
  std::vector<double> matched_ious;  // aligned with hit_gt_indices
  std::vector<int> false_positive_detections;
};

/// Per-volume matching. A detection is a false positive iff its max IoU over
/// every gt is exactly 0; a gt is hit iff some detection exceeds the hit
/// threshold; matched IoU is the best any detection achieves on that gt.
MatchResult match_volume(const VolumeResult& r, const MetricsOptions& options = {});

struct CategoryStats {
  int lesions = 0;
  int hits = 0;
  double sensitivity = 0.0;
  double mean_matched_iou = 0.0;
};

struct MetricsReport {
  double sensitivity = 0.0;
  double fps_per_volume = 0.0;
  double miou = 0.0;  // macro average over lesion categories
  std::array<CategoryStats, kNumForegroundClasses> per_class{};
  int n_volumes = 0;
  int n_lesions = 0;
  int n_hits = 0;
  int n_false_positives = 0;
};

/// Aggregate matching over volumes. Throws std::domain_error when the result
/// set carries no lesions at all (sensitivity undefined).
MetricsReport aggregate(const std::vector<VolumeResult>& results,
                        const MetricsOptions& options = {});

struct FrocPoint {
  double threshold = 0.0;
  double fps_per_volume = 0.0;
  double sensitivity = 0.0;
};

/// Aggregate at each score threshold (keep score >= threshold). Thresholds
/// must be sorted ascending.
std::vector<FrocPoint> froc(const std::vector<VolumeResult>& results,
                            const std::vector<double>& thresholds,
                            const MetricsOptions& options = {});

/// Sensitivity per lesion-volume bin. Edges are interior bin boundaries in
/// cm^3: bins are (0, e0], (e0, e1], ..., (eN, inf). Empty bins report
/// nullopt.
std::vector<std::optional<double>> size_stratified_sensitivity(
    const std::vector<VolumeResult>& results,
    const std::vector<double>& bin_edges_cm3,
    const MetricsOptions& options = {});

/// Lesion volume in cm^3 given voxel extents and spacing in mm.
double lesion_volume_cm3(const Box3& box, const std::array<double, 3>& spacing_mm);

/// w * det_score + (1 - w) * cls_score.
double fuse_scores(double det_score, double cls_score, double w);

/// Area under the ROC curve (trapezoidal over all distinct thresholds); equal
/// to the pairwise concordance P(s+ > s-) + 0.5 P(s+ = s-). Throws
/// std::domain_error unless both classes are present.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct ClassificationReport {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  int n_positive = 0;
  int n_negative = 0;
};

/// Confusion-matrix rates at the threshold (score >= threshold predicts
/// positive) plus AUC.
ClassificationReport classification_report(const std::vector<double>& scores,
                                           const std::vector<bool>& labels,
                                           double threshold);

}  // namespace abus

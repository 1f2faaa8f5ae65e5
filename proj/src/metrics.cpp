#include "abus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace abus {

MatchResult match_volume(const VolumeResult& r, const MetricsOptions& options) {
  MatchResult m;
  std::vector<double> gt_best(r.gts.size(), 0.0);

  for (std::size_t d = 0; d < r.detections.size(); ++d) {
    double max_iou = 0.0;
    for (std::size_t g = 0; g < r.gts.size(); ++g) {
      const double iou = iou3d(r.detections[d].box, r.gts[g].box);
      max_iou = std::max(max_iou, iou);
      gt_best[g] = std::max(gt_best[g], iou);
    }
    if (max_iou == 0.0) m.false_positive_detections.push_back(static_cast<int>(d));
  }

  for (std::size_t g = 0; g < r.gts.size(); ++g) {
    if (gt_best[g] > options.hit_iou_threshold) {
      m.hit_gt_indices.push_back(static_cast<int>(g));
      m.matched_ious.push_back(gt_best[g]);
    }
  }
  return m;
}

MetricsReport aggregate(const std::vector<VolumeResult>& results,
                        const MetricsOptions& options) {
  if (results.empty()) throw std::domain_error("aggregate: no volumes");

  MetricsReport report;
  report.n_volumes = static_cast<int>(results.size());

  std::array<double, kNumForegroundClasses> iou_sum{};
  for (const auto& r : results) {
    const auto m = match_volume(r, options);
    report.n_lesions += static_cast<int>(r.gts.size());
    report.n_hits += static_cast<int>(m.hit_gt_indices.size());
    report.n_false_positives += static_cast<int>(m.false_positive_detections.size());
    for (const auto& gt : r.gts)
      ++report.per_class[static_cast<int>(gt.category)].lesions;
    for (std::size_t k = 0; k < m.hit_gt_indices.size(); ++k) {
      const int cls = static_cast<int>(r.gts[m.hit_gt_indices[k]].category);
      ++report.per_class[cls].hits;
      iou_sum[cls] += m.matched_ious[k];
    }
  }

  if (report.n_lesions == 0)
    throw std::domain_error("aggregate: no lesions, sensitivity undefined");

  report.sensitivity = static_cast<double>(report.n_hits) / report.n_lesions;
  report.fps_per_volume =
      static_cast<double>(report.n_false_positives) / report.n_volumes;

  double miou_total = 0.0;
  int miou_classes = 0;
  for (int c = 0; c < kNumForegroundClasses; ++c) {
    auto& stats = report.per_class[c];
    if (stats.lesions > 0)
      stats.sensitivity = static_cast<double>(stats.hits) / stats.lesions;
    const int denom = options.miou_over_all_lesions ? stats.lesions : stats.hits;
    if (denom > 0) {
      stats.mean_matched_iou = iou_sum[c] / denom;
      miou_total += stats.mean_matched_iou;
      ++miou_classes;
    }
  }
  if (miou_classes > 0) report.miou = miou_total / miou_classes;
  return report;
}

std::vector<FrocPoint> froc(const std::vector<VolumeResult>& results,
                            const std::vector<double>& thresholds,
                            const MetricsOptions& options) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("froc: thresholds must be sorted ascending");

  std::vector<FrocPoint> points;
  points.reserve(thresholds.size());
  for (double t : thresholds) {
    std::vector<VolumeResult> filtered = results;
    for (auto& r : filtered) {
      std::vector<Detection> kept;
      for (const auto& d : r.detections)
        if (d.score >= t) kept.push_back(d);
      r.detections = std::move(kept);
    }
    const auto report = aggregate(filtered, options);
    points.push_back({t, report.fps_per_volume, report.sensitivity});
  }
  return points;
}

double lesion_volume_cm3(const Box3& box, const std::array<double, 3>& spacing_mm) {
  return box.volume() * spacing_mm[0] * spacing_mm[1] * spacing_mm[2] / 1000.0;
}

std::vector<std::optional<double>> size_stratified_sensitivity(
    const std::vector<VolumeResult>& results,
    const std::vector<double>& bin_edges_cm3,
    const MetricsOptions& options) {
  for (std::size_t i = 1; i < bin_edges_cm3.size(); ++i)
    if (bin_edges_cm3[i] <= bin_edges_cm3[i - 1])
      throw std::invalid_argument("size_stratified_sensitivity: edges must ascend");

  const std::size_t n_bins = bin_edges_cm3.size() + 1;
  std::vector<int> lesions(n_bins, 0), hits(n_bins, 0);

  for (const auto& r : results) {
    const auto m = match_volume(r, options);
    std::vector<bool> hit(r.gts.size(), false);
    for (int g : m.hit_gt_indices) hit[g] = true;
    for (std::size_t g = 0; g < r.gts.size(); ++g) {
      const double v = lesion_volume_cm3(r.gts[g].box, r.voxel_spacing_mm);
      std::size_t bin = 0;
      while (bin < bin_edges_cm3.size() && v > bin_edges_cm3[bin]) ++bin;
      ++lesions[bin];
      if (hit[g]) ++hits[bin];
    }
  }

  std::vector<std::optional<double>> out(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b)
    if (lesions[b] > 0)
      out[b] = static_cast<double>(hits[b]) / lesions[b];
  return out;
}

double fuse_scores(double det_score, double cls_score, double w) {
  if (w < 0.0 || w > 1.0) throw std::invalid_argument("fuse_scores: w must be in [0,1]");
  return w * det_score + (1.0 - w) * cls_score;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("roc_auc: scores and labels must align");

  long long n_pos = 0, n_neg = 0;
  for (bool l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::domain_error("roc_auc: both classes must be present");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] > scores[b]; });

  // Trapezoid over tie-grouped thresholds, accumulated in exact integer
  // counts: twice the unnormalized area is sum of dfp * (tp_before + tp_after).
  double area2 = 0.0;
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    long long dtp = 0, dfp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? dtp : dfp)++;
      ++j;
    }
    area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationReport classification_report(const std::vector<double>& scores,
                                           const std::vector<bool>& labels,
                                           double threshold) {
  ClassificationReport r;
  r.auc = roc_auc(scores, labels);

  long long tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i]) {
      (predicted ? tp : fn)++;
    } else {
      (predicted ? fp : tn)++;
    }
  }
  r.n_positive = static_cast<int>(tp + fn);
  r.n_negative = static_cast<int>(fp + tn);
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return r;
}

}  // namespace abus

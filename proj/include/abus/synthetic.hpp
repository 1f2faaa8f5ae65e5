#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abus/assignment.hpp"
#include "abus/geometry.hpp"
#include "abus/inference.hpp"
#include "abus/losses.hpp"
#include "abus/metrics.hpp"

namespace abus {

/// Desk-scale synthetic volume family: noisy background plus ellipsoidal
/// high-intensity blobs. Benign blobs are smooth; malignant blobs get a
/// perturbed boundary and internal texture so the two classes are separable
/// from intensity statistics.
struct SyntheticSpec {
  Index3 volume_shape{80, 24, 80};
  int min_lesions = 1;
  int max_lesions = 2;
  double min_lesion_size = 6.0;   // full extent, voxels
  double max_lesion_size = 14.0;
  double background_mean = 0.10;
  double foreground_mean = 0.85;
  double noise_level = 0.05;
  double malignant_texture = 0.18;      // multiplicative intensity jitter
  double malignant_boundary_amp = 0.25; // radial boundary perturbation
  std::array<double, 3> voxel_spacing_mm{0.511, 0.082, 0.200};
  std::uint64_t seed = 42;
};

/// Dense intensity grid, x fastest / z slowest (index (z*ny + y)*nx + x).
struct Volume {
  Index3 shape{0, 0, 0};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  std::vector<float> data;

  float at(int x, int y, int z) const {
    return data[static_cast<std::size_t>((z * shape[1] + y)) * shape[0] + x];
  }
};

struct SyntheticVolume {
  Volume volume;
  std::vector<GroundTruth> gts;
};

/// Deterministic for a given (spec, seed). Ground-truth boxes are the tight
/// bounds of the rasterized blobs. Throws std::runtime_error when a lesion
/// cannot be placed.
SyntheticVolume generate_volume(const SyntheticSpec& spec, std::uint64_t seed);

/// splitmix64-style mix for deriving per-volume / per-step seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Anchor features

/// Intensity statistics over an anchor's clipped region, O(1) per anchor via
/// summed-volume tables. Statistics are centered against whole-volume values
/// (dominated by background) so a background anchor maps near zero. Layout
/// (dimension kDim = 14):
///   0  mean intensity, centered
///   1  intensity standard deviation, centered, x4
///   2  center-vs-border contrast (inner half-extent box mean - shell mean)
///   3  mean gradient magnitude, centered, x4
///   4..6   intensity-centroid offset per axis, normalized by anchor size
///   7..9   intensity spread per axis (2*sigma/size - 1/sqrt(3))
///   10..12 0.5 * ln(anchor size / volume extent) per axis
///   13 0.25 * ln(anchor volume / volume volume)
/// Zero-overlap anchors produce the all-background (zero-statistics) vector.
class FeatureExtractor {
 public:
  static constexpr int kDim = 14;
  using Features = std::array<double, kDim>;

  explicit FeatureExtractor(const Volume& volume);

  Features features(const Box3& anchor) const;

 private:
  double box_sum(const std::vector<double>& table, int x0, int x1, int y0,
                 int y1, int z0, int z1) const;

  Index3 shape_;
  // Summed-volume tables over: I, I^2, |grad I|, I*x, I*y, I*z, I*x^2, I*y^2,
  // I*z^2 (voxel-center coordinates).
  std::vector<double> s_i_, s_ii_, s_g_, s_ix_, s_iy_, s_iz_, s_ixx_, s_iyy_, s_izz_;
  double global_mean_ = 0.0, global_var_ = 0.0, global_grad_ = 0.0;
};

using AnchorFeatures = FeatureExtractor::Features;

/// Convenience single-anchor path (builds the extractor; prefer the class
/// when scoring many anchors).
AnchorFeatures extract_features(const Volume& volume, const Box3& anchor);

// ---------------------------------------------------------------------------
// Toy scorer

/// Linear heads from anchor features to class logits, box deltas and an
/// embedding; the stand-in for the paper-scale backbone.
struct ToyScorer {
  int feature_dim = FeatureExtractor::kDim;
  int num_classes = kNumClasses;
  int embedding_dim = 64;
  std::vector<double> w_cls, b_cls;  // [num_classes x feature_dim]
  std::vector<double> w_reg, b_reg;  // [6 x feature_dim]
  std::vector<double> w_emb, b_emb;  // [embedding_dim x feature_dim]

  static ToyScorer zeros(int feature_dim, int num_classes, int embedding_dim);
  /// Small random weights; biases zero. Deterministic for a seed.
  static ToyScorer random_init(int feature_dim, int num_classes,
                               int embedding_dim, std::uint64_t seed);

  ClassScores class_scores(const AnchorFeatures& f) const;
  BoxDelta box_delta(const AnchorFeatures& f) const;
  Embedding embedding(const AnchorFeatures& f) const;

  std::size_t parameter_count() const;
};

// ---------------------------------------------------------------------------
// Training / evaluation

struct TrainOptions {
  AnchorSpec anchors;
  AssignmentConfig assignment;
  LossParams loss;
  int steps = 2500;
  double learning_rate = 0.1;
  // Per-step batches carry every positive plus a seeded uniform sample of
  // negatives; unchecked all-anchor batches drown the positive gradient at
  // desk-scale imbalance (~200 background anchors per lesion anchor).
  double negatives_per_positive = 3.0;
  int min_negatives_per_step = 128;
  std::uint64_t seed = 0;
};

struct StepLosses {
  double l_rpn = 0.0, l_cls = 0.0, l_reg = 0.0, l_sim = 0.0;
};

struct TrainResult {
  ToyScorer scorer;
  std::vector<StepLosses> history;
};

/// Plain gradient descent on the scorer parameters; step t trains on volume
/// t mod n. Throws std::runtime_error naming the step when the loss turns
/// non-finite.
TrainResult train_toy(const std::vector<SyntheticVolume>& dataset,
                      const ToyScorer& scorer, const TrainOptions& options);

struct EvalOptions {
  AnchorSpec anchors;
  PipelineConfig pipeline;
  MetricsOptions metrics;
  double fusion_weight = 0.5;          // detection vs second-pass class score
  double classification_threshold = 0.5;
};

struct EvalOutcome {
  MetricsReport detection;
  bool classification_valid = false;   // both classes present among hit gts
  ClassificationReport classification;
  std::vector<VolumeResult> volumes;
};

/// Score all anchors of every tiled patch, decode, run the inference
/// pipeline, fuse the second-pass class score on the final boxes and
/// aggregate. Detections are emitted for anchors whose argmax class is
/// foreground.
EvalOutcome evaluate_toy(const ToyScorer& scorer,
                         const std::vector<SyntheticVolume>& test_volumes,
                         const EvalOptions& options);

/// Per-patch detections for one volume; exposed for the CLI infer path.
/// Anchors whose argmax class is background emit nothing.
std::vector<PatchDetections> score_volume(const ToyScorer& scorer,
                                          const Volume& volume,
                                          const AnchorSpec& anchor_spec,
                                          const PipelineConfig& pipeline);

/// Apply the second-stage rescoring + fusion to the final detections of a
/// volume result (features re-extracted on the detection boxes).
void fuse_detection_scores(const ToyScorer& scorer, const Volume& volume,
                           VolumeResult& result, double fusion_weight);

/// Mean pairwise embedding cosine similarity over the positive anchors the
/// similarity loss selects (gt-IoU above min_gt_iou), pooled across volumes;
/// the ablation measurement for the similarity loss.
double mean_positive_embedding_similarity(const ToyScorer& scorer,
                                          const std::vector<SyntheticVolume>& dataset,
                                          const AnchorSpec& anchor_spec,
                                          const AssignmentConfig& assignment,
                                          double min_gt_iou = 0.3);

}  // namespace abus

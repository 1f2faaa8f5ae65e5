#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "abus/assignment.hpp"
#include "abus/geometry.hpp"

namespace abus {

/// Raw classification head output for one anchor; probabilities are derived
/// via a numerically stable softmax.
struct ClassScores {
  std::vector<double> logits;  // length K+1: background, benign, malignant

  std::vector<double> probabilities() const;
};

struct Embedding {
  std::vector<double> z;
};

struct LossParams {
  double eta = 1.5;     // IoU-balance exponent
  double lambda = 0.7;  // similarity-loss weight in the total RPN loss
  double pair_gt_iou_threshold = 0.3;
  double pair_anchor_iou_threshold = 0.2;
  double smooth_l1_beta = 1.0;
};

// ---------------------------------------------------------------------------
// Cross entropy

double cross_entropy(const ClassScores& scores, int target_class);

struct CrossEntropyGrad {
  double value = 0.0;
  std::vector<double> d_logits;
};

CrossEntropyGrad cross_entropy_grad(const ClassScores& scores, int target_class);

// ---------------------------------------------------------------------------
// IoU-balanced classification loss

/// w_i = iou_i^eta * (sum ce) / (sum iou^eta * ce). eta == 0 short-circuits
/// to all-ones. Throws std::domain_error on a degenerate batch (non-positive
/// denominator with eta > 0).
std::vector<double> iou_balance_weights(const std::vector<double>& ious,
                                        const std::vector<double>& ces,
                                        double eta);

struct PositiveSample {
  ClassScores scores;
  int target_class = 0;
  double iou = 0.0;
};

struct ClsLossResult {
  double value = 0.0;
  std::vector<double> weights;                       // per positive
  std::vector<std::vector<double>> d_pos_logits;     // weights frozen
  std::vector<std::vector<double>> d_neg_logits;
};

/// Raw Eq.-style sum: weighted positive CE plus unweighted negative CE
/// (negatives target the background class). Gradients treat the balance
/// weights as constants.
ClsLossResult iou_balanced_cls_loss(const std::vector<PositiveSample>& positives,
                                    const std::vector<ClassScores>& negatives,
                                    double eta);

/// Value-only evaluation with externally fixed weights; the finite-difference
/// gradient checks use this so perturbations do not re-derive the weights.
double cls_loss_with_weights(const std::vector<PositiveSample>& positives,
                             const std::vector<ClassScores>& negatives,
                             const std::vector<double>& weights);

// ---------------------------------------------------------------------------
// Similarity loss

/// Cosine of the angle between embeddings. Throws std::domain_error on a
/// zero-norm input.
double cosine_similarity(const Embedding& a, const Embedding& b);

struct SimilarityPairs {
  std::vector<std::pair<int, int>> positive_pairs;     // anchor indices, i < j
  std::vector<std::pair<int, int>> negative_partners;  // (positive i, negative k)
};

/// Pair selection per the training protocol: positives with gt-IoU above the
/// gt threshold form pairs when their mutual anchor IoU exceeds the anchor
/// threshold; each pair draws one negative partner (without replacement when
/// enough negatives exist). No qualifying pairs or no negatives -> empty.
SimilarityPairs select_similarity_pairs(const std::vector<AnchorAssignment>& assignments,
                                        const std::vector<Box3>& anchors,
                                        const LossParams& params,
                                        std::mt19937_64& rng);

struct SimilarityLossResult {
  double value = 0.0;
  double s_pos = 0.0, s_neg = 0.0;  // mean cosine similarities
  // Gradients aligned with the input pair lists (first, second element).
  std::vector<std::pair<std::vector<double>, std::vector<double>>> d_pos;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> d_neg;
};

/// (2 - (S_pp - S_pn)) / 4 with S_pp / S_pn the mean cosine similarity over
/// the positive / negative pairs. Either list empty -> 0 with no gradients.
SimilarityLossResult similarity_loss(
    const std::vector<std::pair<Embedding, Embedding>>& pos_pairs,
    const std::vector<std::pair<Embedding, Embedding>>& neg_pairs);

// ---------------------------------------------------------------------------
// Smooth L1

struct SmoothL1Result {
  double value = 0.0;
  BoxDelta d_pred;
};

SmoothL1Result smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta);

// ---------------------------------------------------------------------------
// Composite RPN loss

/// One training batch: anchors with their assignments plus the per-anchor
/// model outputs. pair_seed drives the similarity-pair negative sampling.
struct RpnBatch {
  std::vector<Box3> anchors;
  std::vector<AnchorAssignment> assignments;
  std::vector<GroundTruth> gts;
  std::vector<ClassScores> logits;
  std::vector<BoxDelta> deltas;
  std::vector<Embedding> embeddings;
  std::uint64_t pair_seed = 0;
};

struct LossBundle {
  double l_cls = 0.0, l_reg = 0.0, l_sim = 0.0, l_rpn = 0.0;
  // Partials of l_rpn with respect to the per-anchor model outputs.
  std::vector<std::vector<double>> d_logits;
  std::vector<BoxDelta> d_deltas;
  std::vector<std::vector<double>> d_embeddings;
};

/// State captured at the batch point so the loss can be re-evaluated under
/// the frozen-weights gradient contract.
struct FrozenRpnEval {
  std::vector<double> pos_weights;  // Eq.-2 weights of the positive anchors
  SimilarityPairs pairs;
};

FrozenRpnEval freeze_rpn_eval(const RpnBatch& batch, const LossParams& params);

struct RpnComponents {
  double l_cls = 0.0, l_reg = 0.0, l_sim = 0.0, l_rpn = 0.0;
};

/// Loss values with weights and pair selection fixed; used by the
/// finite-difference checks and internally by rpn_loss.
RpnComponents rpn_components_frozen(const RpnBatch& batch, const LossParams& params,
                                    const FrozenRpnEval& frozen);

/// L_reg averaged over positives, L_cls normalized by |Pos|+|Neg|, L_sim from
/// the selected pairs; l_rpn = l_reg + l_cls + lambda * l_sim.
LossBundle rpn_loss(const RpnBatch& batch, const LossParams& params);

}  // namespace abus

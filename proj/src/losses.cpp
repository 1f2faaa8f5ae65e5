#include "abus/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abus {

// ---------------------------------------------------------------------------
// Cross entropy

static double log_sum_exp(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return m + std::log(s);
}

std::vector<double> ClassScores::probabilities() const {
  if (logits.empty()) throw std::invalid_argument("ClassScores: empty logits");
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double cross_entropy(const ClassScores& scores, int target_class) {
  if (target_class < 0 || target_class >= static_cast<int>(scores.logits.size()))
    throw std::invalid_argument("cross_entropy: target class out of range");
  return log_sum_exp(scores.logits) - scores.logits[target_class];
}

CrossEntropyGrad cross_entropy_grad(const ClassScores& scores, int target_class) {
  CrossEntropyGrad g;
  g.value = cross_entropy(scores, target_class);
  g.d_logits = scores.probabilities();
  g.d_logits[target_class] -= 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// IoU-balanced classification loss

std::vector<double> iou_balance_weights(const std::vector<double>& ious,
                                        const std::vector<double>& ces,
                                        double eta) {
  if (ious.size() != ces.size() || ious.empty())
    throw std::invalid_argument("iou_balance_weights: lists must align and be nonempty");
  if (eta < 0.0) throw std::invalid_argument("iou_balance_weights: eta must be >= 0");

  if (eta == 0.0) return std::vector<double>(ious.size(), 1.0);

  double ce_sum = 0.0, weighted_sum = 0.0;
  for (std::size_t i = 0; i < ious.size(); ++i) {
    ce_sum += ces[i];
    weighted_sum += std::pow(ious[i], eta) * ces[i];
  }
  if (weighted_sum <= 0.0)
    throw std::domain_error("iou_balance_weights: degenerate batch (sum iou^eta * ce is 0)");

  std::vector<double> w(ious.size());
  const double scale = ce_sum / weighted_sum;
  for (std::size_t i = 0; i < ious.size(); ++i) w[i] = std::pow(ious[i], eta) * scale;
  return w;
}

ClsLossResult iou_balanced_cls_loss(const std::vector<PositiveSample>& positives,
                                    const std::vector<ClassScores>& negatives,
                                    double eta) {
  ClsLossResult r;
  std::vector<double> ious, ces;
  std::vector<CrossEntropyGrad> pos_grads;
  ious.reserve(positives.size());
  ces.reserve(positives.size());
  pos_grads.reserve(positives.size());
  for (const auto& p : positives) {
    pos_grads.push_back(cross_entropy_grad(p.scores, p.target_class));
    ious.push_back(p.iou);
    ces.push_back(pos_grads.back().value);
  }

  if (!positives.empty()) r.weights = iou_balance_weights(ious, ces, eta);

  for (std::size_t i = 0; i < positives.size(); ++i) {
    r.value += r.weights[i] * ces[i];
    auto& g = pos_grads[i].d_logits;
    for (double& v : g) v *= r.weights[i];
    r.d_pos_logits.push_back(std::move(g));
  }
  for (const auto& n : negatives) {
    auto g = cross_entropy_grad(n, 0);
    r.value += g.value;
    r.d_neg_logits.push_back(std::move(g.d_logits));
  }
  return r;
}

double cls_loss_with_weights(const std::vector<PositiveSample>& positives,
                             const std::vector<ClassScores>& negatives,
                             const std::vector<double>& weights) {
  if (weights.size() != positives.size())
    throw std::invalid_argument("cls_loss_with_weights: weights misaligned");
  double v = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i)
    v += weights[i] * cross_entropy(positives[i].scores, positives[i].target_class);
  for (const auto& n : negatives) v += cross_entropy(n, 0);
  return v;
}

// ---------------------------------------------------------------------------
// Similarity loss

static double norm(const std::vector<double>& z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.z.size() != b.z.size() || a.z.empty())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double na = norm(a.z), nb = norm(b.z);
  if (na <= 0.0 || nb <= 0.0)
    throw std::domain_error("cosine_similarity: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.z.size(); ++i) dot += a.z[i] * b.z[i];
  return dot / (na * nb);
}

SimilarityPairs select_similarity_pairs(const std::vector<AnchorAssignment>& assignments,
                                        const std::vector<Box3>& anchors,
                                        const LossParams& params,
                                        std::mt19937_64& rng) {
  std::vector<int> qualified, negatives;
  for (const auto& a : assignments) {
    if (a.label == AnchorLabel::positive && a.iou > params.pair_gt_iou_threshold)
      qualified.push_back(a.anchor_index);
    else if (a.label == AnchorLabel::negative)
      negatives.push_back(a.anchor_index);
  }

  SimilarityPairs out;
  for (std::size_t i = 0; i < qualified.size(); ++i)
    for (std::size_t j = i + 1; j < qualified.size(); ++j)
      if (iou3d(anchors[qualified[i]], anchors[qualified[j]]) >
          params.pair_anchor_iou_threshold)
        out.positive_pairs.emplace_back(qualified[i], qualified[j]);

  if (out.positive_pairs.empty() || negatives.empty()) return {};

  const std::size_t m = out.positive_pairs.size();
  out.negative_partners.reserve(m);
  if (negatives.size() >= m) {
    // without replacement: partial Fisher-Yates over the negative pool
    std::vector<int> pool = negatives;
    for (std::size_t t = 0; t < m; ++t) {
      std::uniform_int_distribution<std::size_t> dist(t, pool.size() - 1);
      std::swap(pool[t], pool[dist(rng)]);
      out.negative_partners.emplace_back(out.positive_pairs[t].first, pool[t]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> dist(0, negatives.size() - 1);
    for (std::size_t t = 0; t < m; ++t)
      out.negative_partners.emplace_back(out.positive_pairs[t].first,
                                         negatives[dist(rng)]);
  }
  return out;
}

namespace {

struct CosineGrad {
  double value = 0.0;
  std::vector<double> d_a, d_b;
};

CosineGrad cosine_grad(const Embedding& a, const Embedding& b) {
  CosineGrad g;
  const double na = norm(a.z), nb = norm(b.z);
  if (na <= 0.0 || nb <= 0.0)
    throw std::domain_error("cosine_similarity: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.z.size(); ++i) dot += a.z[i] * b.z[i];
  const double c = dot / (na * nb);
  g.value = c;
  g.d_a.resize(a.z.size());
  g.d_b.resize(b.z.size());
  for (std::size_t i = 0; i < a.z.size(); ++i) {
    g.d_a[i] = b.z[i] / (na * nb) - c * a.z[i] / (na * na);
    g.d_b[i] = a.z[i] / (na * nb) - c * b.z[i] / (nb * nb);
  }
  return g;
}

}  // namespace

SimilarityLossResult similarity_loss(
    const std::vector<std::pair<Embedding, Embedding>>& pos_pairs,
    const std::vector<std::pair<Embedding, Embedding>>& neg_pairs) {
  SimilarityLossResult r;
  if (pos_pairs.empty() || neg_pairs.empty()) return r;

  const double np = static_cast<double>(pos_pairs.size());
  const double nn = static_cast<double>(neg_pairs.size());

  std::vector<CosineGrad> pos_grads, neg_grads;
  pos_grads.reserve(pos_pairs.size());
  neg_grads.reserve(neg_pairs.size());
  for (const auto& [a, b] : pos_pairs) {
    pos_grads.push_back(cosine_grad(a, b));
    r.s_pos += std::clamp(pos_grads.back().value, -1.0, 1.0) / np;
  }
  for (const auto& [a, b] : neg_pairs) {
    neg_grads.push_back(cosine_grad(a, b));
    r.s_neg += std::clamp(neg_grads.back().value, -1.0, 1.0) / nn;
  }

  r.value = (2.0 - (r.s_pos - r.s_neg)) / 4.0;

  for (auto& g : pos_grads) {
    for (double& v : g.d_a) v *= -1.0 / (4.0 * np);
    for (double& v : g.d_b) v *= -1.0 / (4.0 * np);
    r.d_pos.emplace_back(std::move(g.d_a), std::move(g.d_b));
  }
  for (auto& g : neg_grads) {
    for (double& v : g.d_a) v *= 1.0 / (4.0 * nn);
    for (double& v : g.d_b) v *= 1.0 / (4.0 * nn);
    r.d_neg.emplace_back(std::move(g.d_a), std::move(g.d_b));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Smooth L1

SmoothL1Result smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("smooth_l1: beta must be > 0");
  const double p[6] = {pred.dx, pred.dy, pred.dz, pred.dw, pred.dh, pred.dd};
  const double t[6] = {target.dx, target.dy, target.dz, target.dw, target.dh, target.dd};
  double v = 0.0, g[6];
  for (int i = 0; i < 6; ++i) {
    const double x = p[i] - t[i];
    if (std::abs(x) < beta) {
      v += 0.5 * x * x / beta;
      g[i] = x / beta;
    } else {
      v += std::abs(x) - 0.5 * beta;
      g[i] = x > 0.0 ? 1.0 : -1.0;
    }
  }
  SmoothL1Result r;
  r.value = v;
  r.d_pred = {g[0], g[1], g[2], g[3], g[4], g[5]};
  return r;
}

// ---------------------------------------------------------------------------
// Composite RPN loss

static void validate_batch(const RpnBatch& batch) {
  const std::size_t n = batch.anchors.size();
  if (batch.assignments.size() != n || batch.logits.size() != n ||
      batch.deltas.size() != n || batch.embeddings.size() != n)
    throw std::invalid_argument("RpnBatch: per-anchor arrays misaligned");
}

static std::vector<PositiveSample> positive_samples(const RpnBatch& batch) {
  std::vector<PositiveSample> pos;
  for (const auto& a : batch.assignments)
    if (a.label == AnchorLabel::positive)
      pos.push_back({batch.logits[a.anchor_index],
                     class_index(batch.gts[a.gt_index].category), a.iou});
  return pos;
}

static std::vector<ClassScores> negative_samples(const RpnBatch& batch) {
  std::vector<ClassScores> neg;
  for (const auto& a : batch.assignments)
    if (a.label == AnchorLabel::negative) neg.push_back(batch.logits[a.anchor_index]);
  return neg;
}

FrozenRpnEval freeze_rpn_eval(const RpnBatch& batch, const LossParams& params) {
  validate_batch(batch);
  FrozenRpnEval frozen;

  const auto pos = positive_samples(batch);
  if (!pos.empty()) {
    std::vector<double> ious, ces;
    for (const auto& p : pos) {
      ious.push_back(p.iou);
      ces.push_back(cross_entropy(p.scores, p.target_class));
    }
    frozen.pos_weights = iou_balance_weights(ious, ces, params.eta);
  }

  std::mt19937_64 rng(batch.pair_seed);
  frozen.pairs = select_similarity_pairs(batch.assignments, batch.anchors, params, rng);
  return frozen;
}

static std::vector<std::pair<Embedding, Embedding>> gather_pairs(
    const RpnBatch& batch, const std::vector<std::pair<int, int>>& idx) {
  std::vector<std::pair<Embedding, Embedding>> pairs;
  pairs.reserve(idx.size());
  for (const auto& [i, j] : idx)
    pairs.emplace_back(batch.embeddings[i], batch.embeddings[j]);
  return pairs;
}

RpnComponents rpn_components_frozen(const RpnBatch& batch, const LossParams& params,
                                    const FrozenRpnEval& frozen) {
  validate_batch(batch);
  RpnComponents c;

  const auto pos = positive_samples(batch);
  const auto neg = negative_samples(batch);
  const std::size_t labeled = pos.size() + neg.size();
  if (labeled > 0)
    c.l_cls = cls_loss_with_weights(pos, neg, frozen.pos_weights) /
              static_cast<double>(labeled);

  std::size_t n_pos = 0;
  for (const auto& a : batch.assignments)
    if (a.label == AnchorLabel::positive) {
      const BoxDelta target = encode(batch.anchors[a.anchor_index],
                                     batch.gts[a.gt_index].box);
      c.l_reg += smooth_l1(batch.deltas[a.anchor_index], target,
                           params.smooth_l1_beta).value;
      ++n_pos;
    }
  if (n_pos > 0) c.l_reg /= static_cast<double>(n_pos);

  c.l_sim = similarity_loss(gather_pairs(batch, frozen.pairs.positive_pairs),
                            gather_pairs(batch, frozen.pairs.negative_partners)).value;

  c.l_rpn = c.l_reg + c.l_cls + params.lambda * c.l_sim;
  return c;
}

LossBundle rpn_loss(const RpnBatch& batch, const LossParams& params) {
  validate_batch(batch);
  const FrozenRpnEval frozen = freeze_rpn_eval(batch, params);

  LossBundle bundle;
  const std::size_t n = batch.anchors.size();
  bundle.d_logits.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    bundle.d_logits[i].assign(batch.logits[i].logits.size(), 0.0);
  bundle.d_deltas.assign(n, BoxDelta{});
  bundle.d_embeddings.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    bundle.d_embeddings[i].assign(batch.embeddings[i].z.size(), 0.0);

  // Classification: weighted positive CE + negative CE over |Pos| + |Neg|.
  std::vector<int> pos_idx, neg_idx;
  for (const auto& a : batch.assignments) {
    if (a.label == AnchorLabel::positive) pos_idx.push_back(a.anchor_index);
    else if (a.label == AnchorLabel::negative) neg_idx.push_back(a.anchor_index);
  }
  const double labeled = static_cast<double>(pos_idx.size() + neg_idx.size());
  if (labeled > 0) {
    for (std::size_t k = 0; k < pos_idx.size(); ++k) {
      const int i = pos_idx[k];
      const auto& asg = batch.assignments[i];
      auto g = cross_entropy_grad(batch.logits[i],
                                  class_index(batch.gts[asg.gt_index].category));
      bundle.l_cls += frozen.pos_weights[k] * g.value;
      for (std::size_t j = 0; j < g.d_logits.size(); ++j)
        bundle.d_logits[i][j] += frozen.pos_weights[k] * g.d_logits[j] / labeled;
    }
    for (int i : neg_idx) {
      auto g = cross_entropy_grad(batch.logits[i], 0);
      bundle.l_cls += g.value;
      for (std::size_t j = 0; j < g.d_logits.size(); ++j)
        bundle.d_logits[i][j] += g.d_logits[j] / labeled;
    }
    bundle.l_cls /= labeled;
  }

  // Regression, averaged over positives.
  if (!pos_idx.empty()) {
    const double inv = 1.0 / static_cast<double>(pos_idx.size());
    for (int i : pos_idx) {
      const auto& asg = batch.assignments[i];
      const BoxDelta target = encode(batch.anchors[i], batch.gts[asg.gt_index].box);
      auto r = smooth_l1(batch.deltas[i], target, params.smooth_l1_beta);
      bundle.l_reg += r.value * inv;
      bundle.d_deltas[i].dx += r.d_pred.dx * inv;
      bundle.d_deltas[i].dy += r.d_pred.dy * inv;
      bundle.d_deltas[i].dz += r.d_pred.dz * inv;
      bundle.d_deltas[i].dw += r.d_pred.dw * inv;
      bundle.d_deltas[i].dh += r.d_pred.dh * inv;
      bundle.d_deltas[i].dd += r.d_pred.dd * inv;
    }
  }

  // Similarity over the frozen pair selection.
  auto sim = similarity_loss(gather_pairs(batch, frozen.pairs.positive_pairs),
                             gather_pairs(batch, frozen.pairs.negative_partners));
  bundle.l_sim = sim.value;
  for (std::size_t k = 0; k < frozen.pairs.positive_pairs.size(); ++k) {
    const auto& [i, j] = frozen.pairs.positive_pairs[k];
    for (std::size_t t = 0; t < sim.d_pos[k].first.size(); ++t) {
      bundle.d_embeddings[i][t] += params.lambda * sim.d_pos[k].first[t];
      bundle.d_embeddings[j][t] += params.lambda * sim.d_pos[k].second[t];
    }
  }
  for (std::size_t k = 0; k < frozen.pairs.negative_partners.size(); ++k) {
    const auto& [i, j] = frozen.pairs.negative_partners[k];
    for (std::size_t t = 0; t < sim.d_neg[k].first.size(); ++t) {
      bundle.d_embeddings[i][t] += params.lambda * sim.d_neg[k].first[t];
      bundle.d_embeddings[j][t] += params.lambda * sim.d_neg[k].second[t];
    }
  }

  bundle.l_rpn = bundle.l_reg + bundle.l_cls + params.lambda * bundle.l_sim;
  return bundle;
}

}  // namespace abus

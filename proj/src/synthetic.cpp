#include "abus/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace abus {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Volume generation

namespace {

struct LesionShape {
  std::array<double, 3> center{};
  std::array<double, 3> semi{};
  LesionCategory category = LesionCategory::benign;
  double boundary_amp = 0.0;
  std::array<double, 3> wave_freq{};
  std::array<double, 3> wave_phase{};
};

double boundary_bump(const LesionShape& l, const std::array<double, 3>& dir) {
  if (l.boundary_amp == 0.0) return 0.0;
  double s = 0.0;
  for (int axis = 0; axis < 3; ++axis)
    s += std::sin(l.wave_freq[axis] * dir[axis] * M_PI + l.wave_phase[axis]);
  return l.boundary_amp * s / 3.0;
}

bool boxes_apart(const LesionShape& a, const LesionShape& b, double margin) {
  for (int axis = 0; axis < 3; ++axis) {
    const double ext_a = a.semi[axis] * (1.0 + a.boundary_amp);
    const double ext_b = b.semi[axis] * (1.0 + b.boundary_amp);
    if (std::abs(a.center[axis] - b.center[axis]) >= ext_a + ext_b + margin)
      return true;
  }
  return false;
}

}  // namespace

SyntheticVolume generate_volume(const SyntheticSpec& spec, std::uint64_t seed) {
  for (int axis = 0; axis < 3; ++axis)
    if (spec.volume_shape[axis] < 1)
      throw std::invalid_argument("SyntheticSpec: volume_shape components must be >= 1");
  if (spec.min_lesions < 0 || spec.max_lesions < spec.min_lesions)
    throw std::invalid_argument("SyntheticSpec: bad lesion count range");
  if (spec.min_lesion_size <= 0.0 || spec.max_lesion_size < spec.min_lesion_size)
    throw std::invalid_argument("SyntheticSpec: bad lesion size range");
  if (spec.noise_level < 0.0)
    throw std::invalid_argument("SyntheticSpec: noise level must be >= 0");

  const int nx = spec.volume_shape[0], ny = spec.volume_shape[1], nz = spec.volume_shape[2];

  SyntheticVolume out;
  out.volume.shape = spec.volume_shape;
  out.volume.spacing_mm = spec.voxel_spacing_mm;
  out.volume.seed = seed;
  out.volume.data.resize(static_cast<std::size_t>(nx) * ny * nz);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (auto& v : out.volume.data)
    v = static_cast<float>(spec.background_mean + spec.noise_level * gauss(rng));

  std::uniform_int_distribution<int> count_dist(spec.min_lesions, spec.max_lesions);
  const int n_lesions = count_dist(rng);

  std::vector<LesionShape> lesions;
  for (int l = 0; l < n_lesions; ++l) {
    LesionShape shape;
    shape.category = (rng() & 1) ? LesionCategory::malignant : LesionCategory::benign;
    if (shape.category == LesionCategory::malignant) {
      shape.boundary_amp = spec.malignant_boundary_amp;
      std::uniform_int_distribution<int> freq(2, 5);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
      for (int axis = 0; axis < 3; ++axis) {
        shape.wave_freq[axis] = freq(rng);
        shape.wave_phase[axis] = phase(rng);
      }
    }

    std::uniform_real_distribution<double> size_dist(spec.min_lesion_size,
                                                     spec.max_lesion_size);
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      for (int axis = 0; axis < 3; ++axis) {
        shape.semi[axis] = 0.5 * size_dist(rng);
        const double margin = shape.semi[axis] * (1.0 + shape.boundary_amp) + 1.0;
        const double hi = spec.volume_shape[axis] - margin;
        if (margin >= hi)
          throw std::runtime_error("generate_volume: lesion does not fit in the volume");
        std::uniform_real_distribution<double> center_dist(margin, hi);
        shape.center[axis] = center_dist(rng);
      }
      placed = true;
      for (const auto& other : lesions)
        if (!boxes_apart(shape, other, 1.0)) {
          placed = false;
          break;
        }
    }
    if (!placed)
      throw std::runtime_error("generate_volume: could not place lesion " +
                               std::to_string(l) + " without overlap");
    lesions.push_back(shape);
  }

  for (const auto& lesion : lesions) {
    const bool malignant = lesion.category == LesionCategory::malignant;
    const double reach = 1.0 + lesion.boundary_amp;
    int lo[3], hi[3];
    for (int axis = 0; axis < 3; ++axis) {
      lo[axis] = std::max(0, static_cast<int>(std::floor(
                                 lesion.center[axis] - lesion.semi[axis] * reach)) - 1);
      hi[axis] = std::min(spec.volume_shape[axis],
                          static_cast<int>(std::ceil(
                              lesion.center[axis] + lesion.semi[axis] * reach)) + 1);
    }

    int min_v[3] = {nx, ny, nz}, max_v[3] = {-1, -1, -1};
    for (int z = lo[2]; z < hi[2]; ++z)
      for (int y = lo[1]; y < hi[1]; ++y)
        for (int x = lo[0]; x < hi[0]; ++x) {
          const std::array<double, 3> u = {
              (x + 0.5 - lesion.center[0]) / lesion.semi[0],
              (y + 0.5 - lesion.center[1]) / lesion.semi[1],
              (z + 0.5 - lesion.center[2]) / lesion.semi[2]};
          const double r = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
          double limit = 1.0;
          if (malignant && r > 1e-9) {
            const std::array<double, 3> dir = {u[0] / r, u[1] / r, u[2] / r};
            limit += boundary_bump(lesion, dir);
          }
          if (r > limit) continue;

          double intensity = spec.foreground_mean;
          if (malignant) intensity *= 1.0 + spec.malignant_texture * gauss(rng);
          intensity += spec.noise_level * gauss(rng);
          out.volume.data[(static_cast<std::size_t>(z) * ny + y) * nx + x] =
              static_cast<float>(intensity);

          const int v[3] = {x, y, z};
          for (int axis = 0; axis < 3; ++axis) {
            min_v[axis] = std::min(min_v[axis], v[axis]);
            max_v[axis] = std::max(max_v[axis], v[axis]);
          }
        }

    if (max_v[0] < 0)
      throw std::runtime_error("generate_volume: lesion rasterized to no voxels");

    GroundTruth gt;
    gt.box = Box3::from_corners(
        {static_cast<double>(min_v[0]), static_cast<double>(min_v[1]),
         static_cast<double>(min_v[2])},
        {static_cast<double>(max_v[0] + 1), static_cast<double>(max_v[1] + 1),
         static_cast<double>(max_v[2] + 1)});
    gt.category = lesion.category;
    out.gts.push_back(gt);
  }

  return out;
}

// ---------------------------------------------------------------------------
// Feature extraction

FeatureExtractor::FeatureExtractor(const Volume& volume) : shape_(volume.shape) {
  const int nx = shape_[0], ny = shape_[1], nz = shape_[2];
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("FeatureExtractor: empty volume");

  // Gradient magnitude, central differences (one-sided at the border).
  std::vector<float> grad(volume.data.size());
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const auto v = [&](int xi, int yi, int zi) {
          return volume.at(std::clamp(xi, 0, nx - 1), std::clamp(yi, 0, ny - 1),
                           std::clamp(zi, 0, nz - 1));
        };
        const double gx = 0.5 * (v(x + 1, y, z) - v(x - 1, y, z));
        const double gy = 0.5 * (v(x, y + 1, z) - v(x, y - 1, z));
        const double gz = 0.5 * (v(x, y, z + 1) - v(x, y, z - 1));
        grad[(static_cast<std::size_t>(z) * ny + y) * nx + x] =
            static_cast<float>(std::sqrt(gx * gx + gy * gy + gz * gz));
      }

  const std::size_t table_size =
      static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1);
  for (auto* t : {&s_i_, &s_ii_, &s_g_, &s_ix_, &s_iy_, &s_iz_, &s_ixx_, &s_iyy_, &s_izz_})
    t->assign(table_size, 0.0);

  const auto tidx = [&](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * (ny + 1) + y) * (nx + 1) + x;
  };
  for (int z = 1; z <= nz; ++z)
    for (int y = 1; y <= ny; ++y)
      for (int x = 1; x <= nx; ++x) {
        const double i = volume.at(x - 1, y - 1, z - 1);
        const double g = grad[(static_cast<std::size_t>(z - 1) * ny + (y - 1)) * nx + (x - 1)];
        const double cx = x - 0.5, cy = y - 0.5, cz = z - 0.5;
        const double cell[9] = {i,       i * i,        g,
                                i * cx,  i * cy,       i * cz,
                                i * cx * cx, i * cy * cy, i * cz * cz};
        std::vector<double>* tables[9] = {&s_i_, &s_ii_, &s_g_, &s_ix_, &s_iy_,
                                          &s_iz_, &s_ixx_, &s_iyy_, &s_izz_};
        for (int t = 0; t < 9; ++t) {
          auto& s = *tables[t];
          s[tidx(x, y, z)] = cell[t] + s[tidx(x - 1, y, z)] + s[tidx(x, y - 1, z)] +
                             s[tidx(x, y, z - 1)] - s[tidx(x - 1, y - 1, z)] -
                             s[tidx(x - 1, y, z - 1)] - s[tidx(x, y - 1, z - 1)] +
                             s[tidx(x - 1, y - 1, z - 1)];
        }
      }

  const double count = static_cast<double>(volume.data.size());
  global_mean_ = s_i_[tidx(nx, ny, nz)] / count;
  global_var_ = std::max(0.0, s_ii_[tidx(nx, ny, nz)] / count - global_mean_ * global_mean_);
  global_grad_ = s_g_[tidx(nx, ny, nz)] / count;
}

double FeatureExtractor::box_sum(const std::vector<double>& table, int x0, int x1,
                                 int y0, int y1, int z0, int z1) const {
  const int ny = shape_[1], nx = shape_[0];
  const auto tidx = [&](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * (ny + 1) + y) * (nx + 1) + x;
  };
  return table[tidx(x1, y1, z1)] - table[tidx(x0, y1, z1)] - table[tidx(x1, y0, z1)] -
         table[tidx(x1, y1, z0)] + table[tidx(x0, y0, z1)] + table[tidx(x0, y1, z0)] +
         table[tidx(x1, y0, z0)] - table[tidx(x0, y0, z0)];
}

FeatureExtractor::Features FeatureExtractor::features(const Box3& anchor) const {
  Features f{};

  // Statistics are centered against whole-volume values (dominated by
  // background) so background anchors map near the origin; a uniform region
  // has per-axis intensity spread size/sqrt(12), which centers the spread
  // ratios the same way.
  constexpr double kUniformSpread = 0.5773502691896258;  // 1/sqrt(3)

  const double vol_extent[3] = {static_cast<double>(shape_[0]),
                                static_cast<double>(shape_[1]),
                                static_cast<double>(shape_[2])};
  for (int axis = 0; axis < 3; ++axis)
    f[10 + axis] = 0.5 * std::log(anchor.size(axis) / vol_extent[axis]);
  f[13] = 0.25 * std::log(std::max(anchor.volume(), 1e-12) /
                          (vol_extent[0] * vol_extent[1] * vol_extent[2]));

  int lo[3], hi[3];
  for (int axis = 0; axis < 3; ++axis) {
    lo[axis] = std::clamp(static_cast<int>(std::floor(anchor.lo(axis))), 0, shape_[axis]);
    hi[axis] = std::clamp(static_cast<int>(std::ceil(anchor.hi(axis))), 0, shape_[axis]);
  }
  const double count = static_cast<double>(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
  if (count <= 0.0) return f;  // all-background: centered stats are zero

  const double s1 = box_sum(s_i_, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]);
  const double mean = s1 / count;
  const double var = std::max(
      0.0, box_sum(s_ii_, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]) / count -
               mean * mean);
  f[0] = mean - global_mean_;
  f[1] = 4.0 * (std::sqrt(var) - std::sqrt(global_var_));
  f[3] = 4.0 * (box_sum(s_g_, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]) / count -
                global_grad_);

  // contrast: inner box at half extents vs the surrounding shell
  int ilo[3], ihi[3];
  bool inner_ok = true;
  for (int axis = 0; axis < 3; ++axis) {
    ilo[axis] = std::clamp(
        static_cast<int>(std::floor(anchor.center(axis) - 0.25 * anchor.size(axis))),
        lo[axis], hi[axis]);
    ihi[axis] = std::clamp(
        static_cast<int>(std::ceil(anchor.center(axis) + 0.25 * anchor.size(axis))),
        lo[axis], hi[axis]);
    if (ihi[axis] <= ilo[axis]) inner_ok = false;
  }
  if (inner_ok) {
    const double inner_count =
        static_cast<double>(ihi[0] - ilo[0]) * (ihi[1] - ilo[1]) * (ihi[2] - ilo[2]);
    const double inner_sum =
        box_sum(s_i_, ilo[0], ihi[0], ilo[1], ihi[1], ilo[2], ihi[2]);
    const double shell_count = count - inner_count;
    if (shell_count > 0.0)
      f[2] = inner_sum / inner_count - (s1 - inner_sum) / shell_count;
  }

  // intensity moments: centroid offset and spread per axis
  if (s1 > 1e-12) {
    const std::vector<double>* first[3] = {&s_ix_, &s_iy_, &s_iz_};
    const std::vector<double>* second[3] = {&s_ixx_, &s_iyy_, &s_izz_};
    for (int axis = 0; axis < 3; ++axis) {
      const double m1 =
          box_sum(*first[axis], lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]) / s1;
      const double m2 =
          box_sum(*second[axis], lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]) / s1;
      f[4 + axis] = (m1 - anchor.center(axis)) / anchor.size(axis);
      f[7 + axis] =
          2.0 * std::sqrt(std::max(0.0, m2 - m1 * m1)) / anchor.size(axis) -
          kUniformSpread;
    }
  }
  return f;
}

AnchorFeatures extract_features(const Volume& volume, const Box3& anchor) {
  return FeatureExtractor(volume).features(anchor);
}

// ---------------------------------------------------------------------------
// Toy scorer

ToyScorer ToyScorer::zeros(int feature_dim, int num_classes, int embedding_dim) {
  ToyScorer s;
  s.feature_dim = feature_dim;
  s.num_classes = num_classes;
  s.embedding_dim = embedding_dim;
  s.w_cls.assign(static_cast<std::size_t>(num_classes) * feature_dim, 0.0);
  s.b_cls.assign(num_classes, 0.0);
  s.w_reg.assign(static_cast<std::size_t>(6) * feature_dim, 0.0);
  s.b_reg.assign(6, 0.0);
  s.w_emb.assign(static_cast<std::size_t>(embedding_dim) * feature_dim, 0.0);
  s.b_emb.assign(embedding_dim, 0.0);
  return s;
}

ToyScorer ToyScorer::random_init(int feature_dim, int num_classes, int embedding_dim,
                                 std::uint64_t seed) {
  ToyScorer s = zeros(feature_dim, num_classes, embedding_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1 / std::sqrt(feature_dim));
  for (double& w : s.w_cls) w = gauss(rng);
  for (double& w : s.w_reg) w = gauss(rng);
  for (double& w : s.w_emb) w = gauss(rng);
  return s;
}

static void linear_forward(const std::vector<double>& w, const std::vector<double>& b,
                           const AnchorFeatures& f, int out_dim, int in_dim,
                           double* out) {
  for (int o = 0; o < out_dim; ++o) {
    double acc = b[o];
    const double* row = w.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += row[i] * f[i];
    out[o] = acc;
  }
}

ClassScores ToyScorer::class_scores(const AnchorFeatures& f) const {
  ClassScores s;
  s.logits.resize(num_classes);
  linear_forward(w_cls, b_cls, f, num_classes, feature_dim, s.logits.data());
  return s;
}

BoxDelta ToyScorer::box_delta(const AnchorFeatures& f) const {
  double out[6];
  linear_forward(w_reg, b_reg, f, 6, feature_dim, out);
  return {out[0], out[1], out[2], out[3], out[4], out[5]};
}

Embedding ToyScorer::embedding(const AnchorFeatures& f) const {
  Embedding e;
  e.z.resize(embedding_dim);
  linear_forward(w_emb, b_emb, f, embedding_dim, feature_dim, e.z.data());
  return e;
}

std::size_t ToyScorer::parameter_count() const {
  return w_cls.size() + b_cls.size() + w_reg.size() + b_reg.size() + w_emb.size() +
         b_emb.size();
}

// ---------------------------------------------------------------------------
// Training

namespace {

Index3 feature_grid(const Index3& extent, const Index3& stride) {
  Index3 g;
  for (int axis = 0; axis < 3; ++axis)
    g[axis] = std::max(1, extent[axis] / stride[axis]);
  return g;
}

struct VolumeBatch {
  std::vector<Box3> anchors;
  std::vector<AnchorAssignment> assignments;
  std::vector<GroundTruth> gts;
  std::vector<AnchorFeatures> features;
  std::vector<int> positive_idx, negative_idx;
};

VolumeBatch prepare_volume(const SyntheticVolume& vol, const AnchorSpec& spec,
                           const AssignmentConfig& assignment) {
  VolumeBatch b;
  b.anchors = generate_anchors(spec, feature_grid(vol.volume.shape, spec.stride));
  b.assignments = assign_anchors(b.anchors, vol.gts, assignment);
  b.gts = vol.gts;
  FeatureExtractor extractor(vol.volume);
  b.features.reserve(b.anchors.size());
  for (const auto& a : b.anchors) b.features.push_back(extractor.features(a));
  for (const auto& a : b.assignments) {
    if (a.label == AnchorLabel::positive) b.positive_idx.push_back(a.anchor_index);
    else if (a.label == AnchorLabel::negative) b.negative_idx.push_back(a.anchor_index);
  }
  return b;
}

/// All positives plus a uniform sample of negatives, reindexed into a compact
/// batch. Returns the original anchor index per batch slot.
std::vector<int> sample_batch_indices(const VolumeBatch& vb,
                                      const TrainOptions& options,
                                      std::mt19937_64& rng) {
  std::vector<int> chosen = vb.positive_idx;
  const std::size_t want = std::max<std::size_t>(
      options.min_negatives_per_step,
      static_cast<std::size_t>(options.negatives_per_positive *
                               static_cast<double>(vb.positive_idx.size())));
  if (vb.negative_idx.size() <= want) {
    chosen.insert(chosen.end(), vb.negative_idx.begin(), vb.negative_idx.end());
  } else {
    std::vector<int> pool = vb.negative_idx;
    for (std::size_t t = 0; t < want; ++t) {
      std::uniform_int_distribution<std::size_t> dist(t, pool.size() - 1);
      std::swap(pool[t], pool[dist(rng)]);
      chosen.push_back(pool[t]);
    }
  }
  return chosen;
}

}  // namespace

TrainResult train_toy(const std::vector<SyntheticVolume>& dataset,
                      const ToyScorer& scorer, const TrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("train_toy: empty dataset");
  if (options.steps < 0) throw std::invalid_argument("train_toy: negative steps");
  if (options.learning_rate <= 0.0)
    throw std::invalid_argument("train_toy: learning rate must be > 0");
  if (scorer.feature_dim != FeatureExtractor::kDim)
    throw std::invalid_argument("train_toy: scorer feature dim mismatch");

  std::vector<VolumeBatch> batches;
  batches.reserve(dataset.size());
  for (const auto& vol : dataset)
    batches.push_back(prepare_volume(vol, options.anchors, options.assignment));

  TrainResult result;
  result.scorer = scorer;
  result.history.reserve(options.steps);
  ToyScorer& model = result.scorer;
  const int fd = model.feature_dim;

  std::mt19937_64 sampler(mix_seed(options.seed, 0x5a5aULL));
  RpnBatch rpn;
  for (int step = 0; step < options.steps; ++step) {
    const VolumeBatch& vb = batches[step % batches.size()];
    const std::vector<int> slots = sample_batch_indices(vb, options, sampler);
    const std::size_t n = slots.size();

    rpn.anchors.resize(n);
    rpn.assignments.resize(n);
    rpn.gts = vb.gts;
    rpn.pair_seed = mix_seed(options.seed, static_cast<std::uint64_t>(step));
    rpn.logits.resize(n);
    rpn.deltas.resize(n);
    rpn.embeddings.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int src = slots[i];
      rpn.anchors[i] = vb.anchors[src];
      rpn.assignments[i] = vb.assignments[src];
      rpn.assignments[i].anchor_index = static_cast<int>(i);
      rpn.logits[i] = model.class_scores(vb.features[src]);
      rpn.deltas[i] = model.box_delta(vb.features[src]);
      rpn.embeddings[i] = model.embedding(vb.features[src]);
    }

    const LossBundle bundle = rpn_loss(rpn, options.loss);
    if (!std::isfinite(bundle.l_rpn))
      throw std::runtime_error("train_toy: non-finite loss at step " +
                               std::to_string(step));
    result.history.push_back({bundle.l_rpn, bundle.l_cls, bundle.l_reg, bundle.l_sim});

    // Backprop through the linear heads and apply the gradient step.
    const double lr = options.learning_rate;
    for (std::size_t i = 0; i < n; ++i) {
      const AnchorFeatures& f = vb.features[slots[i]];
      for (int o = 0; o < model.num_classes; ++o) {
        const double g = bundle.d_logits[i][o];
        if (g == 0.0) continue;
        double* row = model.w_cls.data() + static_cast<std::size_t>(o) * fd;
        for (int k = 0; k < fd; ++k) row[k] -= lr * g * f[k];
        model.b_cls[o] -= lr * g;
      }
      const double dreg[6] = {bundle.d_deltas[i].dx, bundle.d_deltas[i].dy,
                              bundle.d_deltas[i].dz, bundle.d_deltas[i].dw,
                              bundle.d_deltas[i].dh, bundle.d_deltas[i].dd};
      for (int o = 0; o < 6; ++o) {
        if (dreg[o] == 0.0) continue;
        double* row = model.w_reg.data() + static_cast<std::size_t>(o) * fd;
        for (int k = 0; k < fd; ++k) row[k] -= lr * dreg[o] * f[k];
        model.b_reg[o] -= lr * dreg[o];
      }
      for (int o = 0; o < model.embedding_dim; ++o) {
        const double g = bundle.d_embeddings[i][o];
        if (g == 0.0) continue;
        double* row = model.w_emb.data() + static_cast<std::size_t>(o) * fd;
        for (int k = 0; k < fd; ++k) row[k] -= lr * g * f[k];
        model.b_emb[o] -= lr * g;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<PatchDetections> score_volume(const ToyScorer& scorer,
                                          const Volume& volume,
                                          const AnchorSpec& anchor_spec,
                                          const PipelineConfig& pipeline) {
  FeatureExtractor extractor(volume);
  const auto origins = tile_volume(volume.shape, pipeline.patch_shape);
  const auto anchors =
      generate_anchors(anchor_spec, feature_grid(pipeline.patch_shape, anchor_spec.stride));

  std::vector<PatchDetections> out;
  out.reserve(origins.size());
  for (const auto& origin : origins) {
    PatchDetections pd;
    pd.origin = origin;
    for (const auto& anchor : anchors) {
      Box3 global = anchor;
      global.cx += origin[0];
      global.cy += origin[1];
      global.cz += origin[2];
      const AnchorFeatures f = extractor.features(global);

      const auto probs = scorer.class_scores(f).probabilities();
      const double fg = probs[1] + probs[2];
      if (fg <= probs[0]) continue;  // argmax is background

      Box3 box = decode(anchor, scorer.box_delta(f));
      box = clip_box(box, pipeline.patch_shape);
      if (is_degenerate(box)) continue;

      Detection det;
      det.box = box;
      det.score = fg;
      det.class_probs = {probs[1] / fg, probs[2] / fg};
      pd.detections.push_back(std::move(det));
    }
    out.push_back(std::move(pd));
  }
  return out;
}

void fuse_detection_scores(const ToyScorer& scorer, const Volume& volume,
                           VolumeResult& result, double fusion_weight) {
  FeatureExtractor extractor(volume);
  for (auto& det : result.detections) {
    const auto probs = scorer.class_scores(extractor.features(det.box)).probabilities();
    const double fg = probs[1] + probs[2];
    const double second_pass = fg > 0.0 ? probs[2] / fg : 0.5;
    const double first_pass = det.class_probs.size() == 2 ? det.class_probs[1] : 0.5;
    const double malignancy = fuse_scores(first_pass, second_pass, fusion_weight);
    det.class_probs = {1.0 - malignancy, malignancy};
  }
}

EvalOutcome evaluate_toy(const ToyScorer& scorer,
                         const std::vector<SyntheticVolume>& test_volumes,
                         const EvalOptions& options) {
  EvalOutcome outcome;
  outcome.volumes.reserve(test_volumes.size());
  for (std::size_t i = 0; i < test_volumes.size(); ++i) {
    const auto& tv = test_volumes[i];
    auto patches = score_volume(scorer, tv.volume, options.anchors, options.pipeline);
    VolumeResult res = run_inference(patches, options.pipeline, tv.gts);
    res.volume_id = "vol" + std::to_string(i);
    res.voxel_spacing_mm = tv.volume.spacing_mm;
    fuse_detection_scores(scorer, tv.volume, res, options.fusion_weight);
    outcome.volumes.push_back(std::move(res));
  }

  outcome.detection = aggregate(outcome.volumes, options.metrics);

  // One classification sample per hit gt: the fused malignancy score of its
  // best-IoU detection.
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& res : outcome.volumes) {
    const auto match = match_volume(res, options.metrics);
    for (int g : match.hit_gt_indices) {
      double best_iou = 0.0;
      const Detection* best = nullptr;
      for (const auto& det : res.detections) {
        const double iou = iou3d(det.box, res.gts[g].box);
        if (iou > best_iou) {
          best_iou = iou;
          best = &det;
        }
      }
      if (best == nullptr) continue;
      scores.push_back(best->class_probs.size() == 2 ? best->class_probs[1] : 0.5);
      labels.push_back(res.gts[g].category == LesionCategory::malignant);
    }
  }
  const bool has_pos = std::count(labels.begin(), labels.end(), true) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), false) > 0;
  if (has_pos && has_neg) {
    outcome.classification =
        classification_report(scores, labels, options.classification_threshold);
    outcome.classification_valid = true;
  }
  return outcome;
}

double mean_positive_embedding_similarity(const ToyScorer& scorer,
                                          const std::vector<SyntheticVolume>& dataset,
                                          const AnchorSpec& anchor_spec,
                                          const AssignmentConfig& assignment,
                                          double min_gt_iou) {
  double total = 0.0;
  long long pairs = 0;
  for (const auto& vol : dataset) {
    const auto anchors =
        generate_anchors(anchor_spec, feature_grid(vol.volume.shape, anchor_spec.stride));
    const auto assignments = assign_anchors(anchors, vol.gts, assignment);
    FeatureExtractor extractor(vol.volume);
    std::vector<Embedding> embeddings;
    for (const auto& a : assignments)
      if (a.label == AnchorLabel::positive && a.iou > min_gt_iou)
        embeddings.push_back(scorer.embedding(extractor.features(anchors[a.anchor_index])));
    for (std::size_t i = 0; i < embeddings.size(); ++i)
      for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
        total += cosine_similarity(embeddings[i], embeddings[j]);
        ++pairs;
      }
  }
  if (pairs == 0)
    throw std::domain_error("mean_positive_embedding_similarity: no qualifying pairs");
  return total / static_cast<double>(pairs);
}

}  // namespace abus

#include "abus/gradcheck.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "abus/synthetic.hpp"

namespace abus {

RpnBatch random_loss_batch(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  RpnBatch batch;
  const int n_gts = 1 + static_cast<int>(rng() % 2);
  for (int g = 0; g < n_gts; ++g) {
    Box3 box;
    box.cx = 12.0 + 30.0 * g + 6.0 * unit(rng);
    box.cy = 12.0 + 6.0 * unit(rng);
    box.cz = 12.0 + 6.0 * unit(rng);
    box.w = 6.0 + 6.0 * unit(rng);
    box.h = 6.0 + 6.0 * unit(rng);
    box.d = 6.0 + 6.0 * unit(rng);
    batch.gts.push_back({box, (rng() & 1) ? LesionCategory::malignant
                                          : LesionCategory::benign});
  }

  // Jittered copies of each gt make positives with qualifying pair overlap;
  // far-away boxes make negatives.
  for (const auto& gt : batch.gts) {
    const int copies = 2 + static_cast<int>(rng() % 3);
    for (int c = 0; c < copies; ++c) {
      Box3 a = gt.box;
      a.cx += 2.0 * (unit(rng) - 0.5);
      a.cy += 2.0 * (unit(rng) - 0.5);
      a.cz += 2.0 * (unit(rng) - 0.5);
      a.w *= 0.85 + 0.3 * unit(rng);
      a.h *= 0.85 + 0.3 * unit(rng);
      a.d *= 0.85 + 0.3 * unit(rng);
      batch.anchors.push_back(a);
    }
  }
  const int n_far = 2 + static_cast<int>(rng() % 3);
  for (int c = 0; c < n_far; ++c) {
    Box3 a;
    a.cx = 120.0 + 20.0 * unit(rng);
    a.cy = 120.0 + 20.0 * unit(rng);
    a.cz = 120.0 + 20.0 * unit(rng);
    a.w = 5.0 + 5.0 * unit(rng);
    a.h = 5.0 + 5.0 * unit(rng);
    a.d = 5.0 + 5.0 * unit(rng);
    batch.anchors.push_back(a);
  }

  batch.assignments = assign_anchors(batch.anchors, batch.gts, AssignmentConfig{});

  const int emb_dim = 4 + static_cast<int>(rng() % 4);
  for (std::size_t i = 0; i < batch.anchors.size(); ++i) {
    ClassScores s;
    s.logits.resize(kNumClasses);
    for (double& l : s.logits) l = gauss(rng);
    batch.logits.push_back(std::move(s));
    batch.deltas.push_back(
        {0.5 * gauss(rng), 0.5 * gauss(rng), 0.5 * gauss(rng),
         0.5 * gauss(rng), 0.5 * gauss(rng), 0.5 * gauss(rng)});
    Embedding e;
    e.z.resize(emb_dim);
    for (double& v : e.z) v = gauss(rng);
    batch.embeddings.push_back(std::move(e));
  }
  batch.pair_seed = mix_seed(seed, 0xabcdULL);
  return batch;
}

namespace {

struct Component {
  double* value;     // parameter being perturbed
  double analytic;   // d l_rpn / d value
  int anchor;
};

double effective_rel_err(double fd, double analytic, double rel_tol, double abs_floor) {
  const double err = std::abs(fd - analytic);
  const double scale = std::max({std::abs(fd), std::abs(analytic), abs_floor / rel_tol});
  return err / scale;
}

void track(LossCheck& check, double fd, double analytic, int batch, int component,
           double rel_tol, double abs_floor) {
  const double rel = effective_rel_err(fd, analytic, rel_tol, abs_floor);
  ++check.components_checked;
  if (rel > check.worst_rel_err) {
    check.worst_rel_err = rel;
    check.worst_batch = batch;
    check.worst_component = component;
  }
  if (rel > rel_tol) check.pass = false;
}

}  // namespace

GradCheckReport run_gradient_checks(const GradCheckOptions& options) {
  if (options.step <= 0.0 || options.rel_tol <= 0.0)
    throw std::invalid_argument("gradcheck: step and tolerance must be > 0");

  GradCheckReport report;
  report.losses = {{"l_cls", 0, -1, -1, 0, true},
                   {"l_reg", 0, -1, -1, 0, true},
                   {"l_sim", 0, -1, -1, 0, true},
                   {"l_rpn", 0, -1, -1, 0, true}};
  LossCheck& cls = report.losses[0];
  LossCheck& reg = report.losses[1];
  LossCheck& sim = report.losses[2];
  LossCheck& rpn = report.losses[3];

  const double h = options.step;

  for (int b = 0; b < options.batches; ++b) {
    RpnBatch batch = random_loss_batch(mix_seed(options.seed, b));
    const FrozenRpnEval frozen = freeze_rpn_eval(batch, options.params);
    LossBundle bundle = rpn_loss(batch, options.params);

    if (options.corrupt == "l_cls")
      for (auto& row : bundle.d_logits)
        for (double& g : row) g += 1e-2 * (1.0 + std::abs(g));
    if (options.corrupt == "l_reg")
      for (auto& d : bundle.d_deltas) d.dx += 1e-2 * (1.0 + std::abs(d.dx));
    if (options.corrupt == "l_sim")
      for (auto& row : bundle.d_embeddings)
        for (double& g : row) g += 1e-2 * (1.0 + std::abs(g));

    const auto eval = [&]() {
      return rpn_components_frozen(batch, options.params, frozen);
    };

    int comp = 0;
    for (std::size_t i = 0; i < batch.anchors.size(); ++i)
      for (std::size_t j = 0; j < batch.logits[i].logits.size(); ++j, ++comp) {
        double& v = batch.logits[i].logits[j];
        const double saved = v;
        v = saved + h;
        const RpnComponents plus = eval();
        v = saved - h;
        const RpnComponents minus = eval();
        v = saved;
        track(cls, (plus.l_cls - minus.l_cls) / (2 * h), bundle.d_logits[i][j], b,
              comp, options.rel_tol, options.abs_floor);
        track(rpn, (plus.l_rpn - minus.l_rpn) / (2 * h), bundle.d_logits[i][j], b,
              comp, options.rel_tol, options.abs_floor);
      }

    comp = 0;
    for (std::size_t i = 0; i < batch.anchors.size(); ++i) {
      double* fields[6] = {&batch.deltas[i].dx, &batch.deltas[i].dy,
                           &batch.deltas[i].dz, &batch.deltas[i].dw,
                           &batch.deltas[i].dh, &batch.deltas[i].dd};
      const double analytic[6] = {bundle.d_deltas[i].dx, bundle.d_deltas[i].dy,
                                  bundle.d_deltas[i].dz, bundle.d_deltas[i].dw,
                                  bundle.d_deltas[i].dh, bundle.d_deltas[i].dd};
      for (int j = 0; j < 6; ++j, ++comp) {
        const double saved = *fields[j];
        *fields[j] = saved + h;
        const RpnComponents plus = eval();
        *fields[j] = saved - h;
        const RpnComponents minus = eval();
        *fields[j] = saved;
        track(reg, (plus.l_reg - minus.l_reg) / (2 * h), analytic[j], b, comp,
              options.rel_tol, options.abs_floor);
        track(rpn, (plus.l_rpn - minus.l_rpn) / (2 * h), analytic[j], b, comp,
              options.rel_tol, options.abs_floor);
      }
    }

    comp = 0;
    for (std::size_t i = 0; i < batch.anchors.size(); ++i)
      for (std::size_t j = 0; j < batch.embeddings[i].z.size(); ++j, ++comp) {
        double& v = batch.embeddings[i].z[j];
        const double saved = v;
        v = saved + h;
        const RpnComponents plus = eval();
        v = saved - h;
        const RpnComponents minus = eval();
        v = saved;
        // d l_rpn / d z is lambda * d l_sim / d z
        track(rpn, (plus.l_rpn - minus.l_rpn) / (2 * h), bundle.d_embeddings[i][j],
              b, comp, options.rel_tol, options.abs_floor);
        if (options.params.lambda != 0.0)
          track(sim,
                options.params.lambda * (plus.l_sim - minus.l_sim) / (2 * h),
                bundle.d_embeddings[i][j], b, comp, options.rel_tol,
                options.abs_floor);
      }
  }

  for (const auto& check : report.losses)
    if (!check.pass) report.pass = false;
  return report;
}

}  // namespace abus

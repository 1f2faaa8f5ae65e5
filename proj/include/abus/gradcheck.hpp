#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abus/losses.hpp"

namespace abus {

struct GradCheckOptions {
  int batches = 100;
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-6;
  std::uint64_t seed = 7;
  LossParams params;
  // Test hook: perturb the named analytic gradient ("l_cls", "l_reg",
  // "l_sim") so the checker must fail on it.
  std::string corrupt;
};

struct LossCheck {
  std::string name;
  double worst_rel_err = 0.0;
  int worst_batch = -1;
  int worst_component = -1;
  int components_checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<LossCheck> losses;  // l_cls, l_reg, l_sim, l_rpn
  bool pass = true;
};

/// Random loss batch with guaranteed positives, qualifying similarity pairs
/// and negatives; deterministic for a seed.
RpnBatch random_loss_batch(std::uint64_t seed);

/// Central finite differences (frozen Eq.-2 weights, frozen pair selection)
/// against the analytic gradients of all four losses.
GradCheckReport run_gradient_checks(const GradCheckOptions& options);

}  // namespace abus

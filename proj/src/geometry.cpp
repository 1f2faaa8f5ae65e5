#include "abus/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abus {

Box3 Box3::from_corners(const std::array<double, 3>& lo,
                        const std::array<double, 3>& hi) {
  Box3 b;
  b.cx = 0.5 * (lo[0] + hi[0]);
  b.cy = 0.5 * (lo[1] + hi[1]);
  b.cz = 0.5 * (lo[2] + hi[2]);
  b.w = hi[0] - lo[0];
  b.h = hi[1] - lo[1];
  b.d = hi[2] - lo[2];
  return b;
}

bool is_degenerate(const Box3& b) { return b.w <= 0.0 || b.h <= 0.0 || b.d <= 0.0; }

double iou3d(const Box3& a, const Box3& b) {
  double inter = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double overlap = std::min(a.hi(axis), b.hi(axis)) -
                           std::max(a.lo(axis), b.lo(axis));
    if (overlap <= 0.0) return 0.0;
    inter *= overlap;
  }
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;  // degenerate inputs count as disjoint
  return inter / uni;
}

static void validate_spec(const AnchorSpec& spec) {
  if (spec.basic_sizes.empty())
    throw std::invalid_argument("AnchorSpec: basic_sizes must not be empty");
  double prev = 0.0;
  for (double s : spec.basic_sizes) {
    if (s <= prev)
      throw std::invalid_argument(
          "AnchorSpec: basic_sizes must be strictly increasing and positive");
    prev = s;
  }
  for (int axis = 0; axis < 3; ++axis)
    if (spec.stride[axis] < 1)
      throw std::invalid_argument("AnchorSpec: stride components must be >= 1");
}

std::vector<Box3> generate_anchors(const AnchorSpec& spec,
                                   const Index3& feature_shape) {
  validate_spec(spec);
  for (int axis = 0; axis < 3; ++axis)
    if (feature_shape[axis] < 1)
      throw std::invalid_argument("generate_anchors: feature_shape components must be >= 1");

  const std::size_t n = spec.basic_sizes.size();
  std::vector<Box3> anchors;
  anchors.reserve(static_cast<std::size_t>(feature_shape[0]) * feature_shape[1] *
                  feature_shape[2] * n * n * n);

  for (int z = 0; z < feature_shape[2]; ++z)
    for (int y = 0; y < feature_shape[1]; ++y)
      for (int x = 0; x < feature_shape[0]; ++x) {
        Box3 a;
        a.cx = (x + 0.5) * spec.stride[0];
        a.cy = (y + 0.5) * spec.stride[1];
        a.cz = (z + 0.5) * spec.stride[2];
        for (double d : spec.basic_sizes)
          for (double h : spec.basic_sizes)
            for (double w : spec.basic_sizes) {
              a.w = w;
              a.h = h;
              a.d = d;
              anchors.push_back(a);
            }
      }
  return anchors;
}

BoxDelta encode(const Box3& anchor, const Box3& target) {
  BoxDelta d;
  d.dx = (target.cx - anchor.cx) / anchor.w;
  d.dy = (target.cy - anchor.cy) / anchor.h;
  d.dz = (target.cz - anchor.cz) / anchor.d;
  d.dw = std::log(target.w / anchor.w);
  d.dh = std::log(target.h / anchor.h);
  d.dd = std::log(target.d / anchor.d);
  return d;
}

Box3 decode(const Box3& anchor, const BoxDelta& delta) {
  Box3 b;
  b.cx = anchor.cx + delta.dx * anchor.w;
  b.cy = anchor.cy + delta.dy * anchor.h;
  b.cz = anchor.cz + delta.dz * anchor.d;
  b.w = anchor.w * std::exp(delta.dw);
  b.h = anchor.h * std::exp(delta.dh);
  b.d = anchor.d * std::exp(delta.dd);
  return b;
}

Box3 clip_box(const Box3& b, const Index3& volume_shape) {
  for (int axis = 0; axis < 3; ++axis)
    if (volume_shape[axis] < 1)
      throw std::invalid_argument("clip_box: volume_shape components must be >= 1");

  std::array<double, 3> lo{}, hi{};
  for (int axis = 0; axis < 3; ++axis) {
    lo[axis] = std::max(b.lo(axis), 0.0);
    hi[axis] = std::min(b.hi(axis), static_cast<double>(volume_shape[axis]));
    if (hi[axis] - lo[axis] <= 0.0) return Box3{};  // degenerate marker
  }
  return Box3::from_corners(lo, hi);
}

}  // namespace abus

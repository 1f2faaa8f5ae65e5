#pragma once

#include <array>
#include <vector>

namespace abus {

using Index3 = std::array<int, 3>;

/// Axis-aligned 3D box in voxel coordinates, center-size form.
struct Box3 {
  double cx = 0.0, cy = 0.0, cz = 0.0;  // center
  double w = 0.0, h = 0.0, d = 0.0;     // extents

  double volume() const { return w * h * d; }

  double center(int axis) const { return axis == 0 ? cx : axis == 1 ? cy : cz; }
  double size(int axis) const { return axis == 0 ? w : axis == 1 ? h : d; }

  double lo(int axis) const { return center(axis) - 0.5 * size(axis); }
  double hi(int axis) const { return center(axis) + 0.5 * size(axis); }

  static Box3 from_corners(const std::array<double, 3>& lo,
                           const std::array<double, 3>& hi);
};

/// True when clipping collapsed the box (any extent <= 0). Degenerate boxes
/// travel through the pipeline as markers and are dropped by size_filter.
bool is_degenerate(const Box3& b);

/// Anchor layout: per-axis basic sizes (strictly increasing) and the voxel
/// stride of the feature grid. n basic sizes give n^3 anchors per cell.
struct AnchorSpec {
  std::vector<double> basic_sizes{8.0, 16.0, 28.0, 40.0, 55.0};
  Index3 stride{16, 16, 16};
};

/// Box regression target: center shifts normalized by anchor size, log size
/// ratios.
struct BoxDelta {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double dw = 0.0, dh = 0.0, dd = 0.0;
};

/// Continuous-volume intersection over union; 0 for disjoint boxes and for
/// degenerate inputs.
double iou3d(const Box3& a, const Box3& b);

/// All anchors for a feature grid. Centers sit at (cell + 0.5) * stride.
/// Order is deterministic: cells z-major (z slowest, x fastest); within a
/// cell size triples enumerate w fastest, then h, then d.
std::vector<Box3> generate_anchors(const AnchorSpec& spec,
                                   const Index3& feature_shape);

BoxDelta encode(const Box3& anchor, const Box3& target);
Box3 decode(const Box3& anchor, const BoxDelta& delta);

/// Clamp the corner form to [0, shape] per axis. If an axis collapses the
/// result is the degenerate marker (zero extents).
Box3 clip_box(const Box3& b, const Index3& volume_shape);

}  // namespace abus

#include <doctest.h>

#include <cmath>
#include <random>

#include "abus/geometry.hpp"
#include "oracles.hpp"

using namespace abus;

TEST_CASE("iou3d identity, disjoint and nested cases") {
  const Box3 b{3.0, 4.0, 5.0, 2.0, 3.0, 4.0};
  CHECK(iou3d(b, b) == doctest::Approx(1.0).epsilon(1e-12));

  const Box3 far{100.0, 4.0, 5.0, 2.0, 3.0, 4.0};  // disjoint in x
  CHECK(iou3d(b, far) == 0.0);

  const Box3 outer{0.0, 0.0, 0.0, 2.0, 2.0, 2.0};
  const Box3 inner{0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  CHECK(iou3d(outer, inner) == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("iou3d matches the voxel-counting oracle on lattice boxes") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Box3 a = oracles::random_lattice_box(rng);
    const Box3 b = oracles::random_lattice_box(rng);
    CHECK(iou3d(a, b) == doctest::Approx(oracles::voxel_count_iou(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("iou3d symmetry, range and translation invariance") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const Box3 a = oracles::random_box(rng);
    const Box3 b = oracles::random_box(rng);
    const double iou = iou3d(a, b);
    CHECK(iou == iou3d(b, a));
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);

    Box3 at = a, bt = b;
    at.cx += 7.25; at.cy -= 3.5; at.cz += 1.125;
    bt.cx += 7.25; bt.cy -= 3.5; bt.cz += 1.125;
    CHECK(iou3d(at, bt) == doctest::Approx(iou).epsilon(1e-12));
  }
}

TEST_CASE("generate_anchors counts and placement") {
  SUBCASE("paper-style spec: 5 sizes give 125 anchors per cell") {
    AnchorSpec spec;  // defaults: {8,16,28,40,55}, stride 16
    const auto anchors = generate_anchors(spec, {2, 2, 2});
    CHECK(anchors.size() == 8u * 125u);
  }
  SUBCASE("single cell, single size") {
    AnchorSpec spec{{8.0}, {16, 16, 16}};
    const auto anchors = generate_anchors(spec, {1, 1, 1});
    REQUIRE(anchors.size() == 1u);
    CHECK(anchors[0].cx == 8.0);
    CHECK(anchors[0].cy == 8.0);
    CHECK(anchors[0].cz == 8.0);
    CHECK(anchors[0].w == 8.0);
    CHECK(anchors[0].h == 8.0);
    CHECK(anchors[0].d == 8.0);
  }
  SUBCASE("two sizes enumerate all 8 triples, w fastest") {
    AnchorSpec spec{{4.0, 6.0}, {8, 8, 8}};
    const auto anchors = generate_anchors(spec, {1, 1, 1});
    REQUIRE(anchors.size() == 8u);
    CHECK(anchors[0].w == 4.0);
    CHECK(anchors[1].w == 6.0);  // w varies first
    CHECK(anchors[0].h == 4.0);
    CHECK(anchors[2].h == 6.0);
    CHECK(anchors[3].w == 6.0);
    CHECK(anchors[4].d == 6.0);
    CHECK(anchors[7].w == 6.0);
    CHECK(anchors[7].h == 6.0);
    CHECK(anchors[7].d == 6.0);
  }
  SUBCASE("deterministic") {
    AnchorSpec spec{{4.0, 9.0, 12.0}, {4, 8, 4}};
    const auto a = generate_anchors(spec, {3, 2, 4});
    const auto b = generate_anchors(spec, {3, 2, 4});
    REQUIRE(a.size() == b.size());
    CHECK(a.size() == 3u * 2u * 4u * 27u);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(oracles::same_box(a[i], b[i]));
  }
  SUBCASE("empty basic_sizes is a configuration error") {
    AnchorSpec spec{{}, {16, 16, 16}};
    CHECK_THROWS_AS(generate_anchors(spec, {1, 1, 1}), std::invalid_argument);
  }
}

TEST_CASE("encode/decode forced examples and round trips") {
  const Box3 anchor{0.0, 0.0, 0.0, 10.0, 10.0, 10.0};

  SUBCASE("identity") {
    const BoxDelta d = encode(anchor, anchor);
    CHECK(d.dx == 0.0);
    CHECK(d.dy == 0.0);
    CHECK(d.dz == 0.0);
    CHECK(d.dw == 0.0);
    CHECK(d.dh == 0.0);
    CHECK(d.dd == 0.0);
    const Box3 back = decode(anchor, BoxDelta{});
    CHECK(oracles::same_box(back, anchor));
  }

  SUBCASE("analytic example") {
    const Box3 target{5.0, 0.0, 0.0, 20.0, 10.0, 10.0};
    const BoxDelta d = encode(anchor, target);
    CHECK(d.dx == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.dy == 0.0);
    CHECK(d.dz == 0.0);
    CHECK(d.dw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(d.dh == 0.0);
    CHECK(d.dd == 0.0);

    const Box3 back = decode(anchor, d);
    CHECK(back.cx == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(back.w == doctest::Approx(20.0).epsilon(1e-12));
  }

  SUBCASE("random round trips within 1e-9 relative") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 100; ++i) {
      const Box3 a = oracles::random_box(rng);
      const Box3 t = oracles::random_box(rng);
      const Box3 back = decode(a, encode(a, t));
      CHECK(back.cx == doctest::Approx(t.cx).epsilon(1e-9));
      CHECK(back.cy == doctest::Approx(t.cy).epsilon(1e-9));
      CHECK(back.cz == doctest::Approx(t.cz).epsilon(1e-9));
      CHECK(back.w == doctest::Approx(t.w).epsilon(1e-9));
      CHECK(back.h == doctest::Approx(t.h).epsilon(1e-9));
      CHECK(back.d == doctest::Approx(t.d).epsilon(1e-9));
    }
  }
}

TEST_CASE("clip_box") {
  const Index3 shape{100, 100, 100};

  SUBCASE("fully inside is unchanged") {
    const Box3 b{50.0, 50.0, 50.0, 10.0, 10.0, 10.0};
    CHECK(oracles::same_box(clip_box(b, shape), b));
  }
  SUBCASE("straddling x = 0 by half loses half its x-extent") {
    const Box3 b{0.0, 50.0, 50.0, 10.0, 10.0, 10.0};
    const Box3 c = clip_box(b, shape);
    CHECK(c.w == doctest::Approx(5.0));
    CHECK(c.cx == doctest::Approx(2.5));
    CHECK(c.h == 10.0);
  }
  SUBCASE("entirely outside collapses to the degenerate marker") {
    const Box3 b{-50.0, 50.0, 50.0, 10.0, 10.0, 10.0};
    CHECK(is_degenerate(clip_box(b, shape)));
  }
}

TEST_CASE("box corner round trip is exact") {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 100; ++i) {
    const Box3 b = oracles::random_box(rng);
    const Box3 back = Box3::from_corners({b.lo(0), b.lo(1), b.lo(2)},
                                         {b.hi(0), b.hi(1), b.hi(2)});
    CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-12));
    CHECK(back.w == doctest::Approx(b.w).epsilon(1e-12));
    CHECK(back.h == doctest::Approx(b.h).epsilon(1e-12));
    CHECK(back.d == doctest::Approx(b.d).epsilon(1e-12));
  }
}

#include <doctest.h>

#include <random>

#include "abus/inference.hpp"
#include "oracles.hpp"

using namespace abus;

namespace {

Detection det(const Box3& box, double score) {
  Detection d;
  d.box = box;
  d.score = score;
  d.class_probs = {0.5, 0.5};
  return d;
}

std::vector<Detection> random_detections(std::mt19937_64& rng, int max_count) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Detection> dets;
  const int n = static_cast<int>(rng() % (max_count + 1));
  for (int i = 0; i < n; ++i) {
    // quantized scores make ties common
    dets.push_back(det(oracles::random_box(rng, 30.0),
                       std::floor(unit(rng) * 20.0) / 20.0));
  }
  return dets;
}

}  // namespace

TEST_CASE("tile_volume origins") {
  SUBCASE("paper geometry: 4 patches with the y window centered") {
    const auto origins = tile_volume({400, 100, 400}, {320, 96, 320});
    REQUIRE(origins.size() == 4u);
    CHECK(origins[0] == Index3{0, 2, 0});
    CHECK(origins[1] == Index3{80, 2, 0});
    CHECK(origins[2] == Index3{0, 2, 80});
    CHECK(origins[3] == Index3{80, 2, 80});
  }
  SUBCASE("volume equal to patch gives the single origin") {
    const auto origins = tile_volume({64, 24, 64}, {64, 24, 64});
    REQUIRE(origins.size() == 1u);
    CHECK(origins[0] == Index3{0, 0, 0});
  }
  SUBCASE("exact-fit y axis stays at zero") {
    const auto origins = tile_volume({400, 96, 400}, {320, 96, 320});
    REQUIRE(origins.size() == 4u);
    for (const auto& o : origins) CHECK(o[1] == 0);
  }
  SUBCASE("patch larger than volume is a configuration error") {
    CHECK_THROWS_AS(tile_volume({100, 100, 100}, {128, 96, 96}),
                    std::invalid_argument);
  }
}

TEST_CASE("patch_to_volume translation") {
  const Detection d = det({10, 10, 10, 4, 5, 6}, 0.9);

  SUBCASE("zero origin is the identity") {
    const Detection out = patch_to_volume(d, {0, 0, 0});
    CHECK(oracles::same_box(out.box, d.box));
    CHECK(out.score == d.score);
  }
  SUBCASE("pure translation") {
    const Detection out = patch_to_volume(d, {80, 2, 80});
    CHECK(out.box.cx == 90.0);
    CHECK(out.box.cy == 12.0);
    CHECK(out.box.cz == 90.0);
    CHECK(out.box.w == 4.0);
  }
  SUBCASE("translating back is exact") {
    const Detection there = patch_to_volume(d, {17, 3, 29});
    const Detection back = patch_to_volume(there, {-17, -3, -29});
    CHECK(oracles::same_box(back.box, d.box));
  }
}

TEST_CASE("nms basics") {
  SUBCASE("single detection is kept") {
    const auto out = nms({det({5, 5, 5, 4, 4, 4}, 0.7)}, 0.5);
    REQUIRE(out.size() == 1u);
  }
  SUBCASE("duplicate boxes keep only the higher score") {
    const Box3 b{5, 5, 5, 4, 4, 4};
    const auto out = nms({det(b, 0.8), det(b, 0.9)}, 0.5);
    REQUIRE(out.size() == 1u);
    CHECK(out[0].score == 0.9);
  }
  SUBCASE("empty input gives empty output") { CHECK(nms({}, 0.5).empty()); }
}

TEST_CASE("nms matches the reference implementation and is idempotent") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const auto dets = random_detections(rng, 50);
    const double threshold = 0.1 + 0.8 * (static_cast<double>(rng() % 100) / 100.0);

    const auto mine = nms(dets, threshold);
    const auto ref = oracles::reference_nms(dets, threshold);
    REQUIRE(mine.size() == ref.size());
    for (std::size_t i = 0; i < mine.size(); ++i) {
      CHECK(oracles::same_box(mine[i].box, ref[i].box));
      CHECK(mine[i].score == ref[i].score);
    }

    // antichain: no two kept boxes overlap beyond the threshold
    for (std::size_t i = 0; i < mine.size(); ++i)
      for (std::size_t j = i + 1; j < mine.size(); ++j)
        CHECK(iou3d(mine[i].box, mine[j].box) <= threshold);

    // idempotence
    const auto again = nms(mine, threshold);
    REQUIRE(again.size() == mine.size());
    for (std::size_t i = 0; i < mine.size(); ++i)
      CHECK(oracles::same_box(again[i].box, mine[i].box));
  }
}

TEST_CASE("nms kept set is invariant under positive score scaling") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    auto dets = random_detections(rng, 30);
    const auto before = nms(dets, 0.3);
    for (auto& d : dets) d.score *= 3.5;
    const auto after = nms(dets, 0.3);
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i)
      CHECK(oracles::same_box(after[i].box, before[i].box));
  }
}

TEST_CASE("size filter") {
  SUBCASE("volume bounds") {
    const auto out = size_filter({det({5, 5, 5, 10, 10, 10}, 0.5),   // 1000
                                  det({5, 5, 5, 2, 2, 2}, 0.5)},     // 8
                                 500.0, 10000.0);
    REQUIRE(out.size() == 1u);
    CHECK(out[0].box.w == 10.0);
  }
  SUBCASE("degenerate boxes are always dropped") {
    Detection d;
    d.box = Box3{};  // the degenerate marker
    d.score = 0.9;
    CHECK(size_filter({d}, 0.0, 1e12).empty());
  }
  SUBCASE("wide-open bounds keep everything non-degenerate") {
    std::mt19937_64 rng(43);
    const auto dets = random_detections(rng, 20);
    CHECK(size_filter(dets, 0.0, 1e18).size() == dets.size());
  }
}

TEST_CASE("run_inference pipeline") {
  PipelineConfig config;
  config.patch_shape = {64, 24, 64};
  config.per_patch_top_k = 3;
  config.nms_iou_threshold = 0.1;
  config.min_volume = 1.0;
  config.max_volume = 1e9;

  SUBCASE("top-k keeps the three highest scores of disjoint boxes") {
    PatchDetections patch;
    patch.origin = {0, 0, 0};
    for (int i = 0; i < 5; ++i)
      patch.detections.push_back(
          det({5.0 + 12.0 * i, 10, 10, 4, 4, 4}, 0.1 * (i + 1)));
    const auto result = run_inference({patch}, config);
    REQUIRE(result.detections.size() == 3u);
    CHECK(result.detections[0].score == doctest::Approx(0.5));
    CHECK(result.detections[1].score == doctest::Approx(0.4));
    CHECK(result.detections[2].score == doctest::Approx(0.3));
  }

  SUBCASE("the same lesion seen by two patches collapses to one box") {
    // both patches emit the same volume-space box (32,12,32) size 6
    PatchDetections a, b;
    a.origin = {0, 0, 0};
    a.detections.push_back(det({32, 12, 32, 6, 6, 6}, 0.9));
    b.origin = {16, 0, 16};
    b.detections.push_back(det({16, 12, 16, 6, 6, 6}, 0.8));
    const auto result = run_inference({a, b}, config);
    REQUIRE(result.detections.size() == 1u);
    CHECK(result.detections[0].score == 0.9);
  }

  SUBCASE("empty input gives an empty result") {
    const auto result = run_inference({}, config);
    CHECK(result.detections.empty());
  }

  SUBCASE("max-IoU annotation against ground truths") {
    PatchDetections patch;
    patch.origin = {0, 0, 0};
    patch.detections.push_back(det({10, 10, 10, 6, 6, 6}, 0.9));
    patch.detections.push_back(det({50, 10, 10, 6, 6, 6}, 0.8));
    const std::vector<GroundTruth> gts{
        {{10, 10, 10, 6, 6, 6}, LesionCategory::benign}};
    const auto result = run_inference({patch}, config, gts);
    REQUIRE(result.detections.size() == 2u);
    CHECK(result.detections[0].max_gt_iou == doctest::Approx(1.0));
    CHECK(result.detections[1].max_gt_iou == 0.0);
  }

  SUBCASE("output size is bounded by top_k per patch and deterministic") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<PatchDetections> patches;
      const auto origins = tile_volume({80, 24, 80}, config.patch_shape);
      for (const auto& origin : origins) {
        PatchDetections p;
        p.origin = origin;
        p.detections = random_detections(rng, 20);
        patches.push_back(std::move(p));
      }
      const auto r1 = run_inference(patches, config);
      CHECK(r1.detections.size() <=
            origins.size() * static_cast<std::size_t>(config.per_patch_top_k));
      const auto r2 = run_inference(patches, config);
      REQUIRE(r2.detections.size() == r1.detections.size());
      for (std::size_t i = 0; i < r1.detections.size(); ++i)
        CHECK(oracles::same_box(r1.detections[i].box, r2.detections[i].box));
    }
  }
}

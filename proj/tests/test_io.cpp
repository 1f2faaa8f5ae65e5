#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "abus/config.hpp"
#include "abus/io.hpp"
#include "abus/synthetic.hpp"

using namespace abus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("abus3d_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("volume file round trip") {
  TempDir dir;
  SyntheticSpec spec;
  const auto sv = generate_volume(spec, 31);

  const std::string path = dir.file("v.vox");
  write_volume(path, sv.volume);
  const Volume back = read_volume(path);
  CHECK(back.shape == sv.volume.shape);
  CHECK(back.spacing_mm == sv.volume.spacing_mm);
  CHECK(back.seed == sv.volume.seed);
  CHECK(back.data == sv.volume.data);

  // rewrite is byte-identical
  const std::string again = dir.file("v2.vox");
  write_volume(again, back);
  CHECK(slurp(path) == slurp(again));
}

TEST_CASE("ground-truth jsonl round trip with no-lesion declarations") {
  TempDir dir;
  std::vector<VolumeGroundTruths> volumes(3);
  volumes[0] = {"vol0000",
                {{{10.5, 11.0, 12.25, 8.0, 9.0, 10.0}, LesionCategory::benign},
                 {{40.0, 12.0, 40.0, 6.0, 6.0, 6.0}, LesionCategory::malignant}}};
  volumes[1] = {"vol0001", {}};  // a volume with zero lesions
  volumes[2] = {"vol0002", {{{20.0, 12.0, 20.0, 7.0, 7.0, 7.0}, LesionCategory::malignant}}};

  const std::string path = dir.file("gt.jsonl");
  write_ground_truths(path, volumes);
  const auto back = read_ground_truths(path);
  REQUIRE(back.size() == 3u);
  CHECK(back[0].volume_id == "vol0000");
  REQUIRE(back[0].gts.size() == 2u);
  CHECK(back[0].gts[0].box.cx == 10.5);
  CHECK(back[0].gts[0].category == LesionCategory::benign);
  CHECK(back[0].gts[1].category == LesionCategory::malignant);
  CHECK(back[1].gts.empty());
  CHECK(back[2].gts.size() == 1u);

  const std::string again = dir.file("gt2.jsonl");
  write_ground_truths(again, back);
  CHECK(slurp(path) == slurp(again));
}

TEST_CASE("detections jsonl preserves unknown fields") {
  TempDir dir;
  const std::string path = dir.file("dets.jsonl");
  {
    std::ofstream out(path);
    out << R"({"volume_id":"vol0000","box":[1,2,3,4,5,6],"score":0.75,)"
        << R"("class_probs":[0.3,0.7],"reviewer":"abc","flags":[1,2]})" << "\n";
  }
  auto records = read_detections(path);
  REQUIRE(records.size() == 1u);
  CHECK(records[0].volume_id == "vol0000");
  CHECK(records[0].detection.score == 0.75);
  CHECK(records[0].detection.box.cz == 3.0);
  CHECK(records[0].detection.class_probs[1] == 0.7);

  const std::string out_path = dir.file("dets2.jsonl");
  write_detections(out_path, records);
  const auto back = read_detections(out_path);
  REQUIRE(back.size() == 1u);
  CHECK(back[0].extra.contains("reviewer"));
  CHECK(back[0].extra["reviewer"] == "abc");
  CHECK(back[0].extra["flags"].size() == 2u);

  // write -> read -> write is byte-identical
  const std::string out2 = dir.file("dets3.jsonl");
  write_detections(out2, back);
  CHECK(slurp(out_path) == slurp(out2));
}

TEST_CASE("malformed records name the file and line") {
  TempDir dir;
  const std::string path = dir.file("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"volume_id":"a","box":[1,2,3,4,5,6],"score":0.5,"class_probs":[0.5,0.5]})" << "\n";
    out << R"({"volume_id":"b","score":0.5})" << "\n";  // missing box
  }
  try {
    read_detections(path);
    FAIL("expected a validation error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2") != std::string::npos);
    CHECK(msg.find("box") != std::string::npos);
  }
}

TEST_CASE("manifest and dataset loading") {
  TempDir dir;
  SyntheticSpec spec;
  DatasetManifest manifest;
  manifest.seed = 42;
  std::vector<VolumeGroundTruths> gts;
  for (int i = 0; i < 3; ++i) {
    const auto sv = generate_volume(spec, mix_seed(42, i));
    char id[16];
    std::snprintf(id, sizeof(id), "vol%04d", i);
    write_volume(dir.file(std::string(id) + ".vox"), sv.volume);
    manifest.volume_ids.push_back(id);
    manifest.volume_files.push_back(std::string(id) + ".vox");
    gts.push_back({id, sv.gts});
  }
  write_ground_truths(dir.file("gt.jsonl"), gts);
  write_manifest(dir.file("manifest.json"), manifest);

  std::vector<std::string> ids;
  const auto dataset = load_dataset(dir.file("manifest.json"), &ids);
  REQUIRE(dataset.size() == 3u);
  CHECK(ids == manifest.volume_ids);
  for (int i = 0; i < 3; ++i) {
    const auto expected = generate_volume(spec, mix_seed(42, i));
    CHECK(dataset[i].volume.data == expected.volume.data);
    CHECK(dataset[i].gts.size() == expected.gts.size());
  }
}

TEST_CASE("scorer weights round trip") {
  TempDir dir;
  const auto scorer =
      ToyScorer::random_init(FeatureExtractor::kDim, kNumClasses, 16, 55);
  const std::string path = dir.file("model.json");
  write_scorer(path, scorer);
  const auto back = read_scorer(path);
  CHECK(back.embedding_dim == 16);
  CHECK(back.w_cls == scorer.w_cls);
  CHECK(back.b_cls == scorer.b_cls);
  CHECK(back.w_reg == scorer.w_reg);
  CHECK(back.w_emb == scorer.w_emb);
}

TEST_CASE("froc csv output") {
  TempDir dir;
  const std::string path = dir.file("froc.csv");
  write_froc_csv(path, {{0.0, 2.5, 1.0}, {0.5, 0.25, 0.75}});
  CHECK(slurp(path) ==
        "threshold,fps_per_volume,sensitivity\n0,2.5,1\n0.5,0.25,0.75\n");
}

TEST_CASE("toolkit config") {
  TempDir dir;

  SUBCASE("defaults validate and round trip through json") {
    ToolkitConfig cfg;
    cfg.validate();
    const auto j = cfg.to_json();
    const ToolkitConfig back = ToolkitConfig::from_json(j);
    CHECK(back.anchors.basic_sizes == cfg.anchors.basic_sizes);
    CHECK(back.loss.lambda == cfg.loss.lambda);
    CHECK(back.pipeline.patch_shape == cfg.pipeline.patch_shape);
    CHECK(back.training.steps == cfg.training.steps);

    const std::string path = dir.file("cfg.json");
    cfg.save(path);
    const ToolkitConfig loaded = ToolkitConfig::load(path);
    CHECK(loaded.to_json() == cfg.to_json());
  }

  SUBCASE("partial configs overlay the defaults") {
    const std::string path = dir.file("partial.json");
    {
      std::ofstream out(path);
      out << R"({"loss": {"eta": 2.0}, "training": {"steps": 10}})";
    }
    const auto cfg = ToolkitConfig::load(path);
    CHECK(cfg.loss.eta == 2.0);
    CHECK(cfg.training.steps == 10);
    CHECK(cfg.loss.lambda == 0.7);  // untouched default
  }

  SUBCASE("syntax errors report line and column") {
    const std::string path = dir.file("broken.json");
    {
      std::ofstream out(path);
      out << "{\n  \"loss\": {\n    \"eta\": oops\n  }\n}\n";
    }
    try {
      ToolkitConfig::load(path);
      FAIL("expected a parse error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(":3:") != std::string::npos);  // the bad token's line
    }
  }

  SUBCASE("invariant violations name the key path") {
    const std::string path = dir.file("invalid.json");
    {
      std::ofstream out(path);
      out << R"({"pipeline": {"nms_iou_threshold": 1.5}})";
    }
    try {
      ToolkitConfig::load(path);
      FAIL("expected a validation error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("pipeline.nms_iou_threshold") !=
            std::string::npos);
    }
  }

  SUBCASE("unknown keys are rejected with their path") {
    const std::string path = dir.file("typo.json");
    {
      std::ofstream out(path);
      out << R"({"loss": {"lamda": 0.7}})";
    }
    try {
      ToolkitConfig::load(path);
      FAIL("expected a validation error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("loss.lamda") != std::string::npos);
    }
  }

  SUBCASE("dotted-path overrides") {
    ToolkitConfig cfg;
    cfg.apply_override("loss.eta=2.5");
    CHECK(cfg.loss.eta == 2.5);
    cfg.apply_override("anchors.basic_sizes=[6,9]");
    CHECK(cfg.anchors.basic_sizes == std::vector<double>{6.0, 9.0});
    cfg.apply_override("synthetic.seed=99");
    CHECK(cfg.synthetic.seed == 99);
    CHECK_THROWS_AS(cfg.apply_override("loss.nope=1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("gibberish"), ConfigError);
  }
}

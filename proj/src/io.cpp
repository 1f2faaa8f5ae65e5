#include "abus/io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace abus {

using nlohmann::ordered_json;

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

ordered_json box_to_json(const Box3& b) {
  return ordered_json::array({b.cx, b.cy, b.cz, b.w, b.h, b.d});
}

Box3 box_from_json(const ordered_json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 6)
    throw std::invalid_argument(where + ": box must be an array of 6 numbers");
  Box3 b;
  b.cx = j[0].get<double>();
  b.cy = j[1].get<double>();
  b.cz = j[2].get<double>();
  b.w = j[3].get<double>();
  b.h = j[4].get<double>();
  b.d = j[5].get<double>();
  return b;
}

std::string category_name(LesionCategory c) {
  return c == LesionCategory::benign ? "benign" : "malignant";
}

LesionCategory category_from_name(const std::string& name, const std::string& where) {
  if (name == "benign") return LesionCategory::benign;
  if (name == "malignant") return LesionCategory::malignant;
  throw std::invalid_argument(where + ": unknown category '" + name + "'");
}

ordered_json parse_line(const std::string& line, const std::string& path, int line_no) {
  try {
    return ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Volumes

void write_volume(const std::string& path, const Volume& volume) {
  auto out = open_out(path, std::ios::binary);
  char header[256];
  std::snprintf(header, sizeof(header), "abusvol 1 %d %d %d %.17g %.17g %.17g %llu\n",
                volume.shape[0], volume.shape[1], volume.shape[2],
                volume.spacing_mm[0], volume.spacing_mm[1], volume.spacing_mm[2],
                static_cast<unsigned long long>(volume.seed));
  out << header;
  out.write(reinterpret_cast<const char*>(volume.data.data()),
            static_cast<std::streamsize>(volume.data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path);
}

Volume read_volume(const std::string& path) {
  auto in = open_in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  Volume v;
  unsigned long long seed = 0;
  hs >> magic >> version >> v.shape[0] >> v.shape[1] >> v.shape[2] >>
      v.spacing_mm[0] >> v.spacing_mm[1] >> v.spacing_mm[2] >> seed;
  if (!hs || magic != "abusvol" || version != 1)
    throw std::invalid_argument(path + ": not an abusvol v1 file");
  if (v.shape[0] < 1 || v.shape[1] < 1 || v.shape[2] < 1)
    throw std::invalid_argument(path + ": bad shape in header");
  v.seed = seed;
  const std::size_t n =
      static_cast<std::size_t>(v.shape[0]) * v.shape[1] * v.shape[2];
  v.data.resize(n);
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
    throw std::invalid_argument(path + ": truncated voxel data");
  return v;
}

// ---------------------------------------------------------------------------
// Ground truths

void write_ground_truths(const std::string& path,
                         const std::vector<VolumeGroundTruths>& volumes) {
  auto out = open_out(path);
  for (const auto& vol : volumes) {
    if (vol.gts.empty()) {
      ordered_json j;
      j["volume_id"] = vol.volume_id;
      out << j.dump() << "\n";
      continue;
    }
    for (const auto& gt : vol.gts) {
      ordered_json j;
      j["volume_id"] = vol.volume_id;
      j["box"] = box_to_json(gt.box);
      j["category"] = category_name(gt.category);
      out << j.dump() << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<VolumeGroundTruths> read_ground_truths(const std::string& path) {
  auto in = open_in(path);
  std::vector<VolumeGroundTruths> volumes;
  std::map<std::string, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse_line(line, path, line_no);
    const std::string where = path + ":" + std::to_string(line_no);
    if (!j.contains("volume_id") || !j["volume_id"].is_string())
      throw std::invalid_argument(where + ": missing volume_id");
    const std::string id = j["volume_id"].get<std::string>();
    auto [it, inserted] = index.try_emplace(id, volumes.size());
    if (inserted) volumes.push_back({id, {}});
    if (!j.contains("box")) continue;  // declaration of a no-lesion volume
    GroundTruth gt;
    gt.box = box_from_json(j["box"], where);
    if (!j.contains("category") || !j["category"].is_string())
      throw std::invalid_argument(where + ": missing category");
    gt.category = category_from_name(j["category"].get<std::string>(), where);
    volumes[it->second].gts.push_back(gt);
  }
  return volumes;
}

// ---------------------------------------------------------------------------
// Detections

void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records) {
  auto out = open_out(path);
  for (const auto& rec : records) {
    ordered_json j = rec.extra.is_object() ? rec.extra : ordered_json::object();
    j["volume_id"] = rec.volume_id;
    j["box"] = box_to_json(rec.detection.box);
    j["score"] = rec.detection.score;
    j["class_probs"] = rec.detection.class_probs.size() == 2
                           ? ordered_json::array({rec.detection.class_probs[0],
                                                  rec.detection.class_probs[1]})
                           : ordered_json::array({0.5, 0.5});
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DetectionRecord> read_detections(const std::string& path) {
  auto in = open_in(path);
  std::vector<DetectionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse_line(line, path, line_no);
    const std::string where = path + ":" + std::to_string(line_no);
    DetectionRecord rec;
    rec.extra = j;
    if (!j.contains("volume_id") || !j["volume_id"].is_string())
      throw std::invalid_argument(where + ": missing volume_id");
    rec.volume_id = j["volume_id"].get<std::string>();
    if (!j.contains("box"))
      throw std::invalid_argument(where + ": missing box");
    rec.detection.box = box_from_json(j["box"], where);
    if (!j.contains("score") || !j["score"].is_number())
      throw std::invalid_argument(where + ": missing score");
    rec.detection.score = j["score"].get<double>();
    if (j.contains("class_probs")) {
      const auto& cp = j["class_probs"];
      if (!cp.is_array() || cp.size() != 2)
        throw std::invalid_argument(where + ": class_probs must have 2 entries");
      rec.detection.class_probs = {cp[0].get<double>(), cp[1].get<double>()};
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Manifest / dataset

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  ordered_json j;
  j["seed"] = manifest.seed;
  j["volume_ids"] = manifest.volume_ids;
  j["volume_files"] = manifest.volume_files;
  j["gt_file"] = manifest.gt_file;
  write_json(path, j);
}

DatasetManifest read_manifest(const std::string& path) {
  const auto j = read_json(path);
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.volume_ids = j.at("volume_ids").get<std::vector<std::string>>();
    m.volume_files = j.at("volume_files").get<std::vector<std::string>>();
    m.gt_file = j.at("gt_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  if (m.volume_ids.size() != m.volume_files.size())
    throw std::invalid_argument(path + ": volume_ids and volume_files misaligned");
  return m;
}

static std::string dir_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

std::vector<SyntheticVolume> load_dataset(const std::string& manifest_path,
                                          std::vector<std::string>* volume_ids) {
  const auto manifest = read_manifest(manifest_path);
  const std::string dir = dir_of(manifest_path);
  const auto gts = read_ground_truths(dir + "/" + manifest.gt_file);

  std::map<std::string, const std::vector<GroundTruth>*> by_id;
  for (const auto& v : gts) by_id[v.volume_id] = &v.gts;

  std::vector<SyntheticVolume> dataset;
  dataset.reserve(manifest.volume_files.size());
  for (std::size_t i = 0; i < manifest.volume_files.size(); ++i) {
    SyntheticVolume sv;
    sv.volume = read_volume(dir + "/" + manifest.volume_files[i]);
    const auto it = by_id.find(manifest.volume_ids[i]);
    if (it != by_id.end()) sv.gts = *it->second;
    dataset.push_back(std::move(sv));
  }
  if (volume_ids != nullptr) *volume_ids = manifest.volume_ids;
  return dataset;
}

// ---------------------------------------------------------------------------
// Reports

ordered_json metrics_report_to_json(const MetricsReport& report) {
  ordered_json j;
  j["sensitivity"] = report.sensitivity;
  j["fps_per_volume"] = report.fps_per_volume;
  j["miou"] = report.miou;
  j["n_volumes"] = report.n_volumes;
  j["n_lesions"] = report.n_lesions;
  j["n_hits"] = report.n_hits;
  j["n_false_positives"] = report.n_false_positives;
  const char* names[kNumForegroundClasses] = {"benign", "malignant"};
  for (int c = 0; c < kNumForegroundClasses; ++c) {
    ordered_json pc;
    pc["lesions"] = report.per_class[c].lesions;
    pc["hits"] = report.per_class[c].hits;
    pc["sensitivity"] = report.per_class[c].sensitivity;
    pc["mean_matched_iou"] = report.per_class[c].mean_matched_iou;
    j["per_class"][names[c]] = pc;
  }
  return j;
}

ordered_json classification_report_to_json(const ClassificationReport& report) {
  ordered_json j;
  j["accuracy"] = report.accuracy;
  j["sensitivity"] = report.sensitivity;
  j["specificity"] = report.specificity;
  j["auc"] = report.auc;
  j["n_positive"] = report.n_positive;
  j["n_negative"] = report.n_negative;
  return j;
}

void write_json(const std::string& path, const ordered_json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

ordered_json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void write_froc_csv(const std::string& path, const std::vector<FrocPoint>& points) {
  auto out = open_out(path);
  out << "threshold,fps_per_volume,sensitivity\n";
  char row[128];
  for (const auto& p : points) {
    std::snprintf(row, sizeof(row), "%.10g,%.10g,%.10g\n", p.threshold,
                  p.fps_per_volume, p.sensitivity);
    out << row;
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Scorer weights

void write_scorer(const std::string& path, const ToyScorer& scorer) {
  ordered_json j;
  j["feature_dim"] = scorer.feature_dim;
  j["num_classes"] = scorer.num_classes;
  j["embedding_dim"] = scorer.embedding_dim;
  j["w_cls"] = scorer.w_cls;
  j["b_cls"] = scorer.b_cls;
  j["w_reg"] = scorer.w_reg;
  j["b_reg"] = scorer.b_reg;
  j["w_emb"] = scorer.w_emb;
  j["b_emb"] = scorer.b_emb;
  write_json(path, j);
}

ToyScorer read_scorer(const std::string& path) {
  const auto j = read_json(path);
  ToyScorer s;
  try {
    s.feature_dim = j.at("feature_dim").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.embedding_dim = j.at("embedding_dim").get<int>();
    s.w_cls = j.at("w_cls").get<std::vector<double>>();
    s.b_cls = j.at("b_cls").get<std::vector<double>>();
    s.w_reg = j.at("w_reg").get<std::vector<double>>();
    s.b_reg = j.at("b_reg").get<std::vector<double>>();
    s.w_emb = j.at("w_emb").get<std::vector<double>>();
    s.b_emb = j.at("b_emb").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  const auto expect = [&](std::size_t got, std::size_t want, const char* name) {
    if (got != want)
      throw std::invalid_argument(path + ": bad " + std::string(name) + " size");
  };
  expect(s.w_cls.size(), static_cast<std::size_t>(s.num_classes) * s.feature_dim, "w_cls");
  expect(s.b_cls.size(), static_cast<std::size_t>(s.num_classes), "b_cls");
  expect(s.w_reg.size(), static_cast<std::size_t>(6) * s.feature_dim, "w_reg");
  expect(s.b_reg.size(), 6u, "b_reg");
  expect(s.w_emb.size(), static_cast<std::size_t>(s.embedding_dim) * s.feature_dim, "w_emb");
  expect(s.b_emb.size(), static_cast<std::size_t>(s.embedding_dim), "b_emb");
  return s;
}

}  // namespace abus

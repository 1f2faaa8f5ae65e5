#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "abus/inference.hpp"
#include "abus/metrics.hpp"
#include "abus/synthetic.hpp"

namespace abus {

/// Filesystem failures map to exit code 2 in the CLI.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Volume files: one ASCII header line
//   abusvol 1 nx ny nz sx sy sz seed
// followed by little-endian float32 intensities, x fastest / z slowest.

void write_volume(const std::string& path, const Volume& volume);
Volume read_volume(const std::string& path);

// ---------------------------------------------------------------------------
// Ground-truth JSONL: {"volume_id", "box":[cx,cy,cz,w,h,d], "category"}.
// A record without "box" declares a volume with zero lesions.

struct VolumeGroundTruths {
  std::string volume_id;
  std::vector<GroundTruth> gts;
};

void write_ground_truths(const std::string& path,
                         const std::vector<VolumeGroundTruths>& volumes);
std::vector<VolumeGroundTruths> read_ground_truths(const std::string& path);

// ---------------------------------------------------------------------------
// Detections JSONL: {"volume_id", "box", "score", "class_probs":[benign,
// malignant]}. Unknown fields of foreign records survive a read/write cycle.

struct DetectionRecord {
  std::string volume_id;
  Detection detection;
  nlohmann::ordered_json extra;  // full original record, if any
};

void write_detections(const std::string& path,
                      const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> read_detections(const std::string& path);

// ---------------------------------------------------------------------------
// Dataset manifest

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> volume_ids;
  std::vector<std::string> volume_files;  // relative to the manifest
  std::string gt_file = "gt.jsonl";
};

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

/// Load every volume listed in a manifest together with its ground truths.
std::vector<SyntheticVolume> load_dataset(const std::string& manifest_path,
                                          std::vector<std::string>* volume_ids = nullptr);

// ---------------------------------------------------------------------------
// Reports

nlohmann::ordered_json metrics_report_to_json(const MetricsReport& report);
nlohmann::ordered_json classification_report_to_json(const ClassificationReport& report);

void write_json(const std::string& path, const nlohmann::ordered_json& j);
nlohmann::ordered_json read_json(const std::string& path);

/// Comma-separated (threshold, fps_per_volume, sensitivity) rows.
void write_froc_csv(const std::string& path, const std::vector<FrocPoint>& points);

// ---------------------------------------------------------------------------
// Toy scorer weights (JSON)

void write_scorer(const std::string& path, const ToyScorer& scorer);
ToyScorer read_scorer(const std::string& path);

}  // namespace abus

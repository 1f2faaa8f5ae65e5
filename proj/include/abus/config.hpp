#pragma once

#include <string>

#include <json.hpp>

#include "abus/assignment.hpp"
#include "abus/geometry.hpp"
#include "abus/inference.hpp"
#include "abus/losses.hpp"
#include "abus/metrics.hpp"
#include "abus/synthetic.hpp"

namespace abus {

/// Raised on config invariant violations; the message carries the dotted key
/// path (parse errors carry line:column instead).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingConfig {
  int steps = 2500;
  double learning_rate = 0.1;
  double negatives_per_positive = 3.0;
  int min_negatives_per_step = 128;
  int train_volumes = 30;
  int test_volumes = 20;
};

struct EvalConfig {
  double fusion_weight = 0.5;
  double classification_threshold = 0.5;
  double hit_iou_threshold = 0.0;
  bool miou_over_all_lesions = false;
};

struct PathsConfig {
  std::string data;
  std::string model;
  std::string out;
};

/// Everything the CLI needs, mirrored by the JSON config file. Defaults are
/// the desk-scale setup.
struct ToolkitConfig {
  AnchorSpec anchors{{8.0, 12.0}, {4, 4, 4}};
  AssignmentConfig assignment;
  LossParams loss;
  int embedding_dim = 64;
  PipelineConfig pipeline{{64, 24, 64}, 3, 0.1, 27.0, 50000.0};
  SyntheticSpec synthetic;
  TrainingConfig training;
  EvalConfig eval;
  PathsConfig paths;

  /// Throws ConfigError when any component invariant is violated.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ToolkitConfig from_json(const nlohmann::ordered_json& j);

  static ToolkitConfig load(const std::string& path);
  void save(const std::string& path) const;

  /// Apply a `dotted.path=value` override (value parsed as JSON, falling
  /// back to a plain string). Throws ConfigError on unknown paths.
  void apply_override(const std::string& assignment_expr);
};

}  // namespace abus

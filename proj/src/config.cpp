#include "abus/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "abus/io.hpp"

namespace abus {

using nlohmann::ordered_json;

namespace {

void check(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path + ": " + message);
}

ordered_json index3_to_json(const Index3& v) {
  return ordered_json::array({v[0], v[1], v[2]});
}

ordered_json triple_to_json(const std::array<double, 3>& v) {
  return ordered_json::array({v[0], v[1], v[2]});
}

template <typename T>
void read_triple(const ordered_json& j, const std::string& path,
                 std::array<T, 3>& out) {
  check(j.is_array() && j.size() == 3, path, "must be an array of 3 numbers");
  for (int i = 0; i < 3; ++i) {
    check(j[i].is_number(), path, "must be an array of 3 numbers");
    out[i] = j[i].get<T>();
  }
}

/// Overlay known keys onto `section`, rejecting unknown ones so typos are
/// reported with their exact path.
struct SectionReader {
  const ordered_json& j;
  std::string prefix;
  std::vector<std::string> known;

  bool has(const std::string& key) {
    known.push_back(key);
    return j.contains(key);
  }

  const ordered_json& at(const std::string& key) { return j.at(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(prefix + key + ": wrong type");
    }
  }

  void get_index3(const std::string& key, Index3& out) {
    if (!has(key)) return;
    read_triple(j.at(key), prefix + key, out);
  }

  void get_triple(const std::string& key, std::array<double, 3>& out) {
    if (!has(key)) return;
    read_triple(j.at(key), prefix + key, out);
  }

  void finish() {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const auto& k : known)
        if (k == it.key()) {
          ok = true;
          break;
        }
      check(ok, prefix + it.key(), "unknown key");
    }
  }
};

}  // namespace

void ToolkitConfig::validate() const {
  check(!anchors.basic_sizes.empty(), "anchors.basic_sizes", "must not be empty");
  double prev = 0.0;
  for (double s : anchors.basic_sizes) {
    check(s > prev, "anchors.basic_sizes",
          "must be strictly increasing and positive");
    prev = s;
  }
  for (int axis = 0; axis < 3; ++axis)
    check(anchors.stride[axis] >= 1, "anchors.stride", "components must be >= 1");

  check(0.0 <= assignment.negative_iou_threshold &&
            assignment.negative_iou_threshold <= assignment.positive_iou_threshold &&
            assignment.positive_iou_threshold <= 1.0,
        "assignment", "need 0 <= negative_iou_threshold <= positive_iou_threshold <= 1");

  check(loss.eta >= 0.0, "loss.eta", "must be >= 0");
  check(loss.pair_gt_iou_threshold >= 0.0 && loss.pair_gt_iou_threshold <= 1.0,
        "loss.pair_gt_iou_threshold", "must be in [0,1]");
  check(loss.pair_anchor_iou_threshold >= 0.0 && loss.pair_anchor_iou_threshold <= 1.0,
        "loss.pair_anchor_iou_threshold", "must be in [0,1]");
  check(loss.smooth_l1_beta > 0.0, "loss.smooth_l1_beta", "must be > 0");

  check(embedding_dim >= 1, "model.embedding_dim", "must be >= 1");

  for (int axis = 0; axis < 3; ++axis) {
    check(pipeline.patch_shape[axis] >= 1, "pipeline.patch_shape",
          "components must be >= 1");
    check(pipeline.patch_shape[axis] <= synthetic.volume_shape[axis],
          "pipeline.patch_shape", "must not exceed synthetic.volume_shape");
  }
  check(pipeline.per_patch_top_k >= 1, "pipeline.per_patch_top_k", "must be >= 1");
  check(pipeline.nms_iou_threshold > 0.0 && pipeline.nms_iou_threshold < 1.0,
        "pipeline.nms_iou_threshold", "must be in (0,1)");
  check(pipeline.min_volume < pipeline.max_volume, "pipeline.min_volume",
        "must be < pipeline.max_volume");

  for (int axis = 0; axis < 3; ++axis)
    check(synthetic.volume_shape[axis] >= 1, "synthetic.volume_shape",
          "components must be >= 1");
  check(synthetic.min_lesions >= 0 && synthetic.max_lesions >= synthetic.min_lesions,
        "synthetic", "need 0 <= min_lesions <= max_lesions");
  check(synthetic.min_lesion_size > 0.0 &&
            synthetic.max_lesion_size >= synthetic.min_lesion_size,
        "synthetic", "need 0 < min_lesion_size <= max_lesion_size");
  for (int axis = 0; axis < 3; ++axis)
    check(synthetic.max_lesion_size * (1.0 + synthetic.malignant_boundary_amp) + 2.0 <
              synthetic.volume_shape[axis],
          "synthetic.max_lesion_size", "lesions must fit inside the volume");
  check(synthetic.noise_level >= 0.0, "synthetic.noise_level", "must be >= 0");

  check(training.steps >= 0, "training.steps", "must be >= 0");
  check(training.learning_rate > 0.0, "training.learning_rate", "must be > 0");
  check(training.negatives_per_positive >= 0.0, "training.negatives_per_positive",
        "must be >= 0");
  check(training.min_negatives_per_step >= 0, "training.min_negatives_per_step",
        "must be >= 0");
  check(training.train_volumes >= 1, "training.train_volumes", "must be >= 1");
  check(training.test_volumes >= 1, "training.test_volumes", "must be >= 1");

  check(eval.fusion_weight >= 0.0 && eval.fusion_weight <= 1.0,
        "eval.fusion_weight", "must be in [0,1]");
  check(eval.hit_iou_threshold >= 0.0 && eval.hit_iou_threshold < 1.0,
        "eval.hit_iou_threshold", "must be in [0,1)");
  check(eval.classification_threshold >= 0.0 && eval.classification_threshold <= 1.0,
        "eval.classification_threshold", "must be in [0,1]");
}

ordered_json ToolkitConfig::to_json() const {
  ordered_json j;
  j["anchors"]["basic_sizes"] = anchors.basic_sizes;
  j["anchors"]["stride"] = index3_to_json(anchors.stride);

  j["assignment"]["positive_iou_threshold"] = assignment.positive_iou_threshold;
  j["assignment"]["negative_iou_threshold"] = assignment.negative_iou_threshold;
  j["assignment"]["force_best_match"] = assignment.force_best_match;

  j["loss"]["eta"] = loss.eta;
  j["loss"]["lambda"] = loss.lambda;
  j["loss"]["pair_gt_iou_threshold"] = loss.pair_gt_iou_threshold;
  j["loss"]["pair_anchor_iou_threshold"] = loss.pair_anchor_iou_threshold;
  j["loss"]["smooth_l1_beta"] = loss.smooth_l1_beta;

  j["model"]["embedding_dim"] = embedding_dim;

  j["pipeline"]["patch_shape"] = index3_to_json(pipeline.patch_shape);
  j["pipeline"]["per_patch_top_k"] = pipeline.per_patch_top_k;
  j["pipeline"]["nms_iou_threshold"] = pipeline.nms_iou_threshold;
  j["pipeline"]["min_volume"] = pipeline.min_volume;
  j["pipeline"]["max_volume"] = pipeline.max_volume;

  j["synthetic"]["volume_shape"] = index3_to_json(synthetic.volume_shape);
  j["synthetic"]["min_lesions"] = synthetic.min_lesions;
  j["synthetic"]["max_lesions"] = synthetic.max_lesions;
  j["synthetic"]["min_lesion_size"] = synthetic.min_lesion_size;
  j["synthetic"]["max_lesion_size"] = synthetic.max_lesion_size;
  j["synthetic"]["background_mean"] = synthetic.background_mean;
  j["synthetic"]["foreground_mean"] = synthetic.foreground_mean;
  j["synthetic"]["noise_level"] = synthetic.noise_level;
  j["synthetic"]["malignant_texture"] = synthetic.malignant_texture;
  j["synthetic"]["malignant_boundary_amp"] = synthetic.malignant_boundary_amp;
  j["synthetic"]["voxel_spacing_mm"] = triple_to_json(synthetic.voxel_spacing_mm);
  j["synthetic"]["seed"] = synthetic.seed;

  j["training"]["steps"] = training.steps;
  j["training"]["learning_rate"] = training.learning_rate;
  j["training"]["negatives_per_positive"] = training.negatives_per_positive;
  j["training"]["min_negatives_per_step"] = training.min_negatives_per_step;
  j["training"]["train_volumes"] = training.train_volumes;
  j["training"]["test_volumes"] = training.test_volumes;

  j["eval"]["fusion_weight"] = eval.fusion_weight;
  j["eval"]["classification_threshold"] = eval.classification_threshold;
  j["eval"]["hit_iou_threshold"] = eval.hit_iou_threshold;
  j["eval"]["miou_over_all_lesions"] = eval.miou_over_all_lesions;

  j["paths"]["data"] = paths.data;
  j["paths"]["model"] = paths.model;
  j["paths"]["out"] = paths.out;
  return j;
}

ToolkitConfig ToolkitConfig::from_json(const ordered_json& j) {
  ToolkitConfig cfg;
  check(j.is_object(), "config", "top level must be an object");

  SectionReader top{j, "", {}};
  if (top.has("anchors")) {
    SectionReader s{top.at("anchors"), "anchors.", {}};
    s.get("basic_sizes", cfg.anchors.basic_sizes);
    s.get_index3("stride", cfg.anchors.stride);
    s.finish();
  }
  if (top.has("assignment")) {
    SectionReader s{top.at("assignment"), "assignment.", {}};
    s.get("positive_iou_threshold", cfg.assignment.positive_iou_threshold);
    s.get("negative_iou_threshold", cfg.assignment.negative_iou_threshold);
    s.get("force_best_match", cfg.assignment.force_best_match);
    s.finish();
  }
  if (top.has("loss")) {
    SectionReader s{top.at("loss"), "loss.", {}};
    s.get("eta", cfg.loss.eta);
    s.get("lambda", cfg.loss.lambda);
    s.get("pair_gt_iou_threshold", cfg.loss.pair_gt_iou_threshold);
    s.get("pair_anchor_iou_threshold", cfg.loss.pair_anchor_iou_threshold);
    s.get("smooth_l1_beta", cfg.loss.smooth_l1_beta);
    s.finish();
  }
  if (top.has("model")) {
    SectionReader s{top.at("model"), "model.", {}};
    s.get("embedding_dim", cfg.embedding_dim);
    s.finish();
  }
  if (top.has("pipeline")) {
    SectionReader s{top.at("pipeline"), "pipeline.", {}};
    s.get_index3("patch_shape", cfg.pipeline.patch_shape);
    s.get("per_patch_top_k", cfg.pipeline.per_patch_top_k);
    s.get("nms_iou_threshold", cfg.pipeline.nms_iou_threshold);
    s.get("min_volume", cfg.pipeline.min_volume);
    s.get("max_volume", cfg.pipeline.max_volume);
    s.finish();
  }
  if (top.has("synthetic")) {
    SectionReader s{top.at("synthetic"), "synthetic.", {}};
    s.get_index3("volume_shape", cfg.synthetic.volume_shape);
    s.get("min_lesions", cfg.synthetic.min_lesions);
    s.get("max_lesions", cfg.synthetic.max_lesions);
    s.get("min_lesion_size", cfg.synthetic.min_lesion_size);
    s.get("max_lesion_size", cfg.synthetic.max_lesion_size);
    s.get("background_mean", cfg.synthetic.background_mean);
    s.get("foreground_mean", cfg.synthetic.foreground_mean);
    s.get("noise_level", cfg.synthetic.noise_level);
    s.get("malignant_texture", cfg.synthetic.malignant_texture);
    s.get("malignant_boundary_amp", cfg.synthetic.malignant_boundary_amp);
    s.get_triple("voxel_spacing_mm", cfg.synthetic.voxel_spacing_mm);
    s.get("seed", cfg.synthetic.seed);
    s.finish();
  }
  if (top.has("training")) {
    SectionReader s{top.at("training"), "training.", {}};
    s.get("steps", cfg.training.steps);
    s.get("learning_rate", cfg.training.learning_rate);
    s.get("negatives_per_positive", cfg.training.negatives_per_positive);
    s.get("min_negatives_per_step", cfg.training.min_negatives_per_step);
    s.get("train_volumes", cfg.training.train_volumes);
    s.get("test_volumes", cfg.training.test_volumes);
    s.finish();
  }
  if (top.has("eval")) {
    SectionReader s{top.at("eval"), "eval.", {}};
    s.get("fusion_weight", cfg.eval.fusion_weight);
    s.get("classification_threshold", cfg.eval.classification_threshold);
    s.get("hit_iou_threshold", cfg.eval.hit_iou_threshold);
    s.get("miou_over_all_lesions", cfg.eval.miou_over_all_lesions);
    s.finish();
  }
  if (top.has("paths")) {
    SectionReader s{top.at("paths"), "paths.", {}};
    s.get("data", cfg.paths.data);
    s.get("model", cfg.paths.model);
    s.get("out", cfg.paths.out);
    s.finish();
  }
  top.finish();
  return cfg;
}

ToolkitConfig ToolkitConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // convert the byte offset into line:column
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": " + e.what());
  }

  ToolkitConfig cfg = from_json(j);
  cfg.validate();
  return cfg;
}

void ToolkitConfig::save(const std::string& path) const {
  write_json(path, to_json());
}

void ToolkitConfig::apply_override(const std::string& assignment_expr) {
  const auto eq = assignment_expr.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like dotted.path=value: " + assignment_expr);
  const std::string dotted = assignment_expr.substr(0, eq);
  const std::string value_text = assignment_expr.substr(eq + 1);

  ordered_json value;
  try {
    value = ordered_json::parse(value_text);
  } catch (const nlohmann::json::parse_error&) {
    value = value_text;  // treat as a plain string
  }

  ordered_json j = to_json();
  ordered_json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (!node->contains(key))
      throw ConfigError("unknown config path: " + dotted);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
  *this = from_json(j);
}

}  // namespace abus

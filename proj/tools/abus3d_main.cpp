#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "abus/config.hpp"
#include "abus/gradcheck.hpp"
#include "abus/io.hpp"
#include "abus/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "toolkit config file (JSON)");
  cmd->add_option("--set", args.overrides,
                  "config override, dotted.path=value (repeatable)");
  cmd->add_option("--seed", args.seed, "master seed (overrides synthetic.seed)")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

abus::ToolkitConfig resolve_config(const CommonArgs& args) {
  abus::ToolkitConfig cfg;
  if (!args.config_path.empty()) cfg = abus::ToolkitConfig::load(args.config_path);
  for (const auto& expr : args.overrides) cfg.apply_override(expr);
  if (args.seed_given) cfg.synthetic.seed = args.seed;
  cfg.validate();
  return cfg;
}

std::string volume_id_for(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "vol%04d", index);
  return buf;
}

abus::TrainOptions train_options(const abus::ToolkitConfig& cfg) {
  abus::TrainOptions opt;
  opt.anchors = cfg.anchors;
  opt.assignment = cfg.assignment;
  opt.loss = cfg.loss;
  opt.steps = cfg.training.steps;
  opt.learning_rate = cfg.training.learning_rate;
  opt.negatives_per_positive = cfg.training.negatives_per_positive;
  opt.min_negatives_per_step = cfg.training.min_negatives_per_step;
  opt.seed = abus::mix_seed(cfg.synthetic.seed, 2);
  return opt;
}

std::vector<abus::SyntheticVolume> generate_dataset(const abus::ToolkitConfig& cfg,
                                                    int count) {
  std::vector<abus::SyntheticVolume> dataset;
  dataset.reserve(count);
  for (int i = 0; i < count; ++i)
    dataset.push_back(
        abus::generate_volume(cfg.synthetic, abus::mix_seed(cfg.synthetic.seed, i)));
  return dataset;
}

/// Join gt and detection files into per-volume results. Detections citing a
/// volume the gt file does not know are a validation error.
std::vector<abus::VolumeResult> volumes_from_files(const std::string& gt_path,
                                                   const std::string& det_path,
                                                   const abus::ToolkitConfig& cfg) {
  const auto gts = abus::read_ground_truths(gt_path);
  const auto dets = abus::read_detections(det_path);

  std::map<std::string, std::size_t> index;
  std::vector<abus::VolumeResult> volumes;
  volumes.reserve(gts.size());
  for (const auto& v : gts) {
    index[v.volume_id] = volumes.size();
    abus::VolumeResult r;
    r.volume_id = v.volume_id;
    r.gts = v.gts;
    r.voxel_spacing_mm = cfg.synthetic.voxel_spacing_mm;
    volumes.push_back(std::move(r));
  }

  std::vector<std::string> offenders;
  for (const auto& rec : dets) {
    const auto it = index.find(rec.volume_id);
    if (it == index.end()) {
      offenders.push_back(rec.volume_id);
      continue;
    }
    volumes[it->second].detections.push_back(rec.detection);
  }
  if (!offenders.empty()) {
    std::string msg = det_path + ": unknown volume ids:";
    for (const auto& id : offenders) msg += " " + id;
    throw std::invalid_argument(msg);
  }
  return volumes;
}

abus::MetricsOptions metrics_options(const abus::ToolkitConfig& cfg) {
  return {cfg.eval.hit_iou_threshold, cfg.eval.miou_over_all_lesions};
}

/// Classification samples from file-backed results: per hit gt, the fused
/// malignancy probability of its best-IoU detection.
bool classification_from_results(const std::vector<abus::VolumeResult>& volumes,
                                 const abus::ToolkitConfig& cfg,
                                 abus::ClassificationReport* out) {
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& r : volumes) {
    const auto match = abus::match_volume(r, metrics_options(cfg));
    for (int g : match.hit_gt_indices) {
      double best_iou = 0.0;
      const abus::Detection* best = nullptr;
      for (const auto& det : r.detections) {
        const double iou = abus::iou3d(det.box, r.gts[g].box);
        if (iou > best_iou) {
          best_iou = iou;
          best = &det;
        }
      }
      if (best == nullptr) continue;
      scores.push_back(best->class_probs.size() == 2 ? best->class_probs[1] : 0.5);
      labels.push_back(r.gts[g].category == abus::LesionCategory::malignant);
    }
  }
  bool has_pos = false, has_neg = false;
  for (bool l : labels) (l ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) return false;
  *out = abus::classification_report(scores, labels, cfg.eval.classification_threshold);
  return true;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth_gen(const abus::ToolkitConfig& cfg, const std::string& out_dir, int count) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw abus::IoError("cannot create directory: " + out_dir);

  abus::DatasetManifest manifest;
  manifest.seed = cfg.synthetic.seed;
  std::vector<abus::VolumeGroundTruths> gts;
  for (int i = 0; i < count; ++i) {
    const auto sv =
        abus::generate_volume(cfg.synthetic, abus::mix_seed(cfg.synthetic.seed, i));
    const std::string id = volume_id_for(i);
    const std::string file = id + ".vox";
    abus::write_volume(out_dir + "/" + file, sv.volume);
    manifest.volume_ids.push_back(id);
    manifest.volume_files.push_back(file);
    gts.push_back({id, sv.gts});
  }
  abus::write_ground_truths(out_dir + "/" + manifest.gt_file, gts);
  abus::write_manifest(out_dir + "/manifest.json", manifest);
  std::printf("wrote %d volumes to %s (seed %llu)\n", count, out_dir.c_str(),
              static_cast<unsigned long long>(manifest.seed));
  return 0;
}

int cmd_anchors(const abus::ToolkitConfig& cfg, const std::string& out_path) {
  abus::Index3 grid;
  for (int axis = 0; axis < 3; ++axis)
    grid[axis] = std::max(1, cfg.synthetic.volume_shape[axis] / cfg.anchors.stride[axis]);
  const auto anchors = abus::generate_anchors(cfg.anchors, grid);

  std::ofstream out(out_path);
  if (!out) throw abus::IoError("cannot open for writing: " + out_path);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    ordered_json j;
    j["index"] = i;
    j["box"] = ordered_json::array({anchors[i].cx, anchors[i].cy, anchors[i].cz,
                                    anchors[i].w, anchors[i].h, anchors[i].d});
    out << j.dump() << "\n";
  }
  if (!out) throw abus::IoError("write failed: " + out_path);
  std::printf("%zu anchors (grid %dx%dx%d, %zu sizes)\n", anchors.size(), grid[0],
              grid[1], grid[2], cfg.anchors.basic_sizes.size());
  return 0;
}

int cmd_assign(const abus::ToolkitConfig& cfg, const std::string& gt_path,
               const std::string& out_path) {
  abus::Index3 grid;
  for (int axis = 0; axis < 3; ++axis)
    grid[axis] = std::max(1, cfg.synthetic.volume_shape[axis] / cfg.anchors.stride[axis]);
  const auto anchors = abus::generate_anchors(cfg.anchors, grid);
  const auto gts = abus::read_ground_truths(gt_path);

  std::ofstream out(out_path);
  if (!out) throw abus::IoError("cannot open for writing: " + out_path);
  const char* names[] = {"positive", "negative", "ignore"};
  for (const auto& vol : gts) {
    const auto assignments = abus::assign_anchors(anchors, vol.gts, cfg.assignment);
    for (const auto& a : assignments) {
      ordered_json j;
      j["volume_id"] = vol.volume_id;
      j["anchor_index"] = a.anchor_index;
      j["label"] = names[static_cast<int>(a.label)];
      if (a.label == abus::AnchorLabel::positive) {
        j["gt_index"] = a.gt_index;
        j["iou"] = a.iou;
      }
      out << j.dump() << "\n";
    }
  }
  if (!out) throw abus::IoError("write failed: " + out_path);
  return 0;
}

int cmd_gradcheck(const abus::ToolkitConfig& cfg, int batches, double tolerance,
                  const std::string& corrupt, const std::string& out_path) {
  if (tolerance <= 0.0) throw std::invalid_argument("gradcheck: tolerance must be > 0");
  if (batches == 0) {
    std::printf("warning: 0 batches requested, vacuous pass\n");
    return 0;
  }

  abus::GradCheckOptions opt;
  opt.batches = batches;
  opt.rel_tol = tolerance;
  opt.seed = abus::mix_seed(cfg.synthetic.seed, 3);
  opt.params = cfg.loss;
  opt.corrupt = corrupt;
  const auto report = abus::run_gradient_checks(opt);

  ordered_json j;
  for (const auto& check : report.losses) {
    std::printf("%s  worst_rel_err=%.3e  (%s)\n", check.name.c_str(),
                check.worst_rel_err, check.pass ? "PASS" : "FAIL");
    ordered_json cj;
    cj["worst_rel_err"] = check.worst_rel_err;
    cj["worst_batch"] = check.worst_batch;
    cj["worst_component"] = check.worst_component;
    cj["components_checked"] = check.components_checked;
    cj["pass"] = check.pass;
    j[check.name] = cj;
  }
  if (!out_path.empty()) abus::write_json(out_path, j);

  if (!report.pass) {
    std::string failing;
    for (const auto& check : report.losses)
      if (!check.pass) failing += (failing.empty() ? "" : ", ") + check.name;
    std::fprintf(stderr, "gradient check failed: %s\n", failing.c_str());
    return 1;
  }
  return 0;
}

int cmd_train_toy(const abus::ToolkitConfig& cfg, const std::string& data_dir,
                  const std::string& out_path) {
  const auto dataset = abus::load_dataset(data_dir + "/manifest.json");
  const auto init = abus::ToyScorer::random_init(
      abus::FeatureExtractor::kDim, abus::kNumClasses, cfg.embedding_dim,
      abus::mix_seed(cfg.synthetic.seed, 1));
  const auto result = abus::train_toy(dataset, init, train_options(cfg));
  abus::write_scorer(out_path, result.scorer);

  std::ofstream hist(out_path + ".history.csv");
  if (!hist) throw abus::IoError("cannot open for writing: " + out_path + ".history.csv");
  hist << "step,l_rpn,l_cls,l_reg,l_sim\n";
  char row[160];
  for (std::size_t s = 0; s < result.history.size(); ++s) {
    const auto& h = result.history[s];
    std::snprintf(row, sizeof(row), "%zu,%.10g,%.10g,%.10g,%.10g\n", s, h.l_rpn,
                  h.l_cls, h.l_reg, h.l_sim);
    hist << row;
  }
  if (!hist) throw abus::IoError("write failed: " + out_path + ".history.csv");

  if (!result.history.empty())
    std::printf("trained %d steps: l_rpn %.4f -> %.4f\n", cfg.training.steps,
                result.history.front().l_rpn, result.history.back().l_rpn);
  else
    std::printf("trained 0 steps\n");
  return 0;
}

int cmd_infer(const abus::ToolkitConfig& cfg, const std::string& model_path,
              const std::string& data_dir, const std::string& out_path) {
  const auto scorer = abus::read_scorer(model_path);
  std::vector<std::string> ids;
  const auto dataset = abus::load_dataset(data_dir + "/manifest.json", &ids);

  std::vector<abus::DetectionRecord> records;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto patches =
        abus::score_volume(scorer, dataset[i].volume, cfg.anchors, cfg.pipeline);
    abus::VolumeResult res = abus::run_inference(patches, cfg.pipeline);
    abus::fuse_detection_scores(scorer, dataset[i].volume, res, cfg.eval.fusion_weight);
    for (const auto& det : res.detections) records.push_back({ids[i], det, {}});
  }
  abus::write_detections(out_path, records);
  std::printf("wrote %zu detections for %zu volumes\n", records.size(), dataset.size());
  return 0;
}

int cmd_eval(const abus::ToolkitConfig& cfg, const std::string& gt_path,
             const std::string& det_path, const std::string& out_path) {
  const auto volumes = volumes_from_files(gt_path, det_path, cfg);
  const auto report = abus::aggregate(volumes, metrics_options(cfg));

  ordered_json j;
  j["detection"] = abus::metrics_report_to_json(report);
  abus::ClassificationReport cls;
  if (classification_from_results(volumes, cfg, &cls)) {
    j["classification"] = abus::classification_report_to_json(cls);
  } else {
    j["classification"] = nullptr;
    j["classification_note"] = "fewer than two classes among hit lesions";
  }
  if (!out_path.empty()) abus::write_json(out_path, j);

  std::printf("mIoU(%%) FPs Sensitivity(%%)\n");
  std::printf("%.2f %.2f %.2f\n", report.miou * 100.0, report.fps_per_volume,
              report.sensitivity * 100.0);
  if (j["classification"].is_object())
    std::printf("classification: accuracy %.4f sensitivity %.4f specificity %.4f AUC %.4f\n",
                cls.accuracy, cls.sensitivity, cls.specificity, cls.auc);
  return 0;
}

int cmd_froc(const abus::ToolkitConfig& cfg, const std::string& gt_path,
             const std::string& det_path, const std::string& thresholds_csv,
             const std::string& out_path) {
  std::vector<double> thresholds;
  std::size_t start = 0;
  while (start <= thresholds_csv.size()) {
    const auto comma = thresholds_csv.find(',', start);
    const std::string tok = thresholds_csv.substr(start, comma - start);
    if (!tok.empty()) {
      try {
        thresholds.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw std::invalid_argument("froc: bad threshold '" + tok + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (thresholds.empty()) throw std::invalid_argument("froc: no thresholds given");

  const auto volumes = volumes_from_files(gt_path, det_path, cfg);
  const auto points = abus::froc(volumes, thresholds, metrics_options(cfg));
  abus::write_froc_csv(out_path, points);
  for (const auto& p : points)
    std::printf("%.10g,%.10g,%.10g\n", p.threshold, p.fps_per_volume, p.sensitivity);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"abus3d: 3D anchor-based lesion detection toolkit (desk-scale)"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic dataset");
  add_common(synth, common);
  std::string synth_out = "dataset";
  int synth_count = 10;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of volumes")->required();

  auto* anchors = app.add_subcommand("anchors", "dump the anchor grid");
  add_common(anchors, common);
  std::string anchors_out = "anchors.jsonl";
  anchors->add_option("--out", anchors_out, "output JSONL file");

  auto* assign = app.add_subcommand("assign", "label anchors against ground truths");
  add_common(assign, common);
  std::string assign_gt, assign_out = "assignments.jsonl";
  assign->add_option("--gt", assign_gt, "ground-truth JSONL file")->required();
  assign->add_option("--out", assign_out, "output JSONL file");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, common);
  int gc_batches = 100;
  double gc_tol = 1e-4;
  std::string gc_corrupt, gc_out;
  gradcheck->add_option("--batches", gc_batches, "number of random batches");
  gradcheck->add_option("--tol", gc_tol, "relative tolerance");
  gradcheck->add_option("--corrupt", gc_corrupt,
                        "test hook: corrupt a gradient (l_cls|l_reg|l_sim)");
  gradcheck->add_option("--out", gc_out, "write the JSON report here");

  auto* train = app.add_subcommand("train-toy", "train the toy scorer");
  add_common(train, common);
  std::string train_data, train_out = "model.json";
  train->add_option("--data", train_data, "dataset directory (from synth-gen)");
  train->add_option("--out", train_out, "model output file");

  auto* infer = app.add_subcommand("infer", "run the detection pipeline");
  add_common(infer, common);
  std::string infer_model, infer_data, infer_out = "detections.jsonl";
  infer->add_option("--model", infer_model, "trained model file");
  infer->add_option("--data", infer_data, "dataset directory");
  infer->add_option("--out", infer_out, "detections output file");

  auto* eval = app.add_subcommand("eval", "evaluate detections against ground truth");
  add_common(eval, common);
  std::string eval_gt, eval_dets, eval_out;
  eval->add_option("--gt", eval_gt, "ground-truth JSONL file")->required();
  eval->add_option("--dets", eval_dets, "detections JSONL file")->required();
  eval->add_option("--out", eval_out, "metrics report JSON");

  auto* froc = app.add_subcommand("froc", "FROC operating points");
  add_common(froc, common);
  std::string froc_gt, froc_dets, froc_thresholds = "0,0.25,0.5,0.75,0.9";
  std::string froc_out = "froc.csv";
  froc->add_option("--gt", froc_gt, "ground-truth JSONL file")->required();
  froc->add_option("--dets", froc_dets, "detections JSONL file")->required();
  froc->add_option("--thresholds", froc_thresholds, "comma-separated thresholds");
  froc->add_option("--out", froc_out, "output CSV file");

  CLI11_PARSE(app, argc, argv);

  try {
    const abus::ToolkitConfig cfg = resolve_config(common);
    if (synth->parsed()) return cmd_synth_gen(cfg, synth_out, synth_count);
    if (anchors->parsed()) return cmd_anchors(cfg, anchors_out);
    if (assign->parsed()) return cmd_assign(cfg, assign_gt, assign_out);
    if (gradcheck->parsed())
      return cmd_gradcheck(cfg, gc_batches, gc_tol, gc_corrupt, gc_out);
    if (train->parsed()) {
      const std::string data = !train_data.empty() ? train_data : cfg.paths.data;
      if (data.empty()) throw std::invalid_argument("train-toy: --data is required");
      return cmd_train_toy(cfg, data, train_out);
    }
    if (infer->parsed()) {
      const std::string model = !infer_model.empty() ? infer_model : cfg.paths.model;
      const std::string data = !infer_data.empty() ? infer_data : cfg.paths.data;
      if (model.empty()) throw std::invalid_argument("infer: --model is required");
      if (data.empty()) throw std::invalid_argument("infer: --data is required");
      return cmd_infer(cfg, model, data, infer_out);
    }
    if (eval->parsed()) return cmd_eval(cfg, eval_gt, eval_dets, eval_out);
    if (froc->parsed())
      return cmd_froc(cfg, froc_gt, froc_dets, froc_thresholds, froc_out);
  } catch (const abus::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

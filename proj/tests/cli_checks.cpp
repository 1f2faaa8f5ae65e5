// Exercises the CLI contract: exit codes (0 ok, 1 validation, 2 I/O), error
// messages, and the documented edge behaviors. argv[1] is the CLI path.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "abus/io.hpp"
#include "abus/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_cli;
int g_failures = 0;

int run(const std::string& args, const std::string& log = "out.txt") {
  const std::string cmd =
      "\"" + g_cli + "\" " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void check(bool ok, const std::string& name, const std::string& detail = "") {
  std::printf("%s  %s%s%s\n", ok ? "ok" : "FAIL", name.c_str(),
              detail.empty() ? "" : ": ", detail.c_str());
  if (!ok) ++g_failures;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: cli_checks <path-to-abus3d-cli>\n");
    return 2;
  }
  g_cli = argv[1];

  fs::remove_all("cli_checks_work");
  fs::create_directories("cli_checks_work");
  fs::current_path("cli_checks_work");

  // count 0: empty manifest, exit 0
  {
    const int rc = run("synth-gen --out empty --count 0");
    const auto manifest = abus::read_manifest("empty/manifest.json");
    check(rc == 0 && manifest.volume_ids.empty(), "synth-gen count 0",
          "exit " + std::to_string(rc));
  }

  // unwritable output path: exit 2 with a message
  {
    std::ofstream("blocker.txt") << "x";
    const int rc = run("synth-gen --out blocker.txt/sub --count 1");
    check(rc == 2, "synth-gen unwritable path exits 2", "exit " + std::to_string(rc));
  }

  // gradcheck: vacuous pass at 0 batches, corrupt hook fails naming the loss
  {
    const int rc = run("gradcheck --batches 0");
    check(rc == 0 && slurp("out.txt").find("vacuous") != std::string::npos,
          "gradcheck 0 batches is a vacuous pass with warning");
  }
  {
    const int rc = run("gradcheck --batches 5 --corrupt l_sim");
    const std::string out = slurp("out.txt");
    check(rc == 1 && out.find("l_sim") != std::string::npos &&
              out.find("failed") != std::string::npos,
          "corrupted l_sim gradient fails naming l_sim", "exit " + std::to_string(rc));
  }

  // a small dataset for the file-driven commands
  if (run("synth-gen --out data --count 4 --seed 11") != 0) {
    std::printf("FAIL  dataset generation\n");
    return 1;
  }

  // eval: unknown volume ids exit 1 listing offenders
  {
    std::ofstream dets("bad_dets.jsonl");
    dets << R"({"volume_id":"ghost","box":[10,10,10,5,5,5],"score":0.9,"class_probs":[0.5,0.5]})"
         << "\n";
    dets.close();
    const int rc = run("eval --gt data/gt.jsonl --dets bad_dets.jsonl");
    check(rc == 1 && slurp("out.txt").find("ghost") != std::string::npos,
          "eval rejects unknown volume ids", "exit " + std::to_string(rc));
  }

  // eval: empty detections file gives sensitivity 0, fps 0
  {
    std::ofstream("none.jsonl");
    const int rc = run("eval --gt data/gt.jsonl --dets none.jsonl --out report.json");
    bool ok = rc == 0;
    if (ok) {
      const auto j = nlohmann::ordered_json::parse(slurp("report.json"));
      ok = j["detection"]["sensitivity"].get<double>() == 0.0 &&
           j["detection"]["fps_per_volume"].get<double>() == 0.0;
    }
    check(ok, "eval with no detections reports 0 / 0");
  }

  // infer with a zero-weight model: near-uniform scores
  {
    abus::write_scorer("zero.json", abus::ToyScorer::zeros(
                                        abus::FeatureExtractor::kDim,
                                        abus::kNumClasses, 64));
    const int rc = run("infer --model zero.json --data data --out zdets.jsonl");
    bool ok = rc == 0;
    double lo = 1e9, hi = -1e9;
    if (ok) {
      const auto records = abus::read_detections("zdets.jsonl");
      ok = !records.empty();
      for (const auto& r : records) {
        lo = std::min(lo, r.detection.score);
        hi = std::max(hi, r.detection.score);
      }
    }
    check(ok && hi - lo < 1e-9, "zero-weight model emits uniform scores",
          "spread " + std::to_string(hi - lo));
  }

  // froc with thresholds {0,1}: two rows, the second (0,0)
  {
    run("train-toy --data data --out m.json --set training.steps=300");
    run("infer --model m.json --data data --out dets.jsonl");
    const int rc = run("froc --gt data/gt.jsonl --dets dets.jsonl "
                       "--thresholds 0,1 --out froc.csv");
    std::istringstream csv(slurp("froc.csv"));
    std::string header, row1, row2;
    std::getline(csv, header);
    std::getline(csv, row1);
    std::getline(csv, row2);
    check(rc == 0 && row2 == "1,0,0", "froc at threshold 1 gives (0,0)",
          "rows: " + row1 + " | " + row2);
  }

  // config parse errors exit 1
  {
    std::ofstream("broken.json") << "{ not json";
    const int rc = run("anchors --config broken.json --out a.jsonl");
    check(rc == 1, "broken config exits 1", "exit " + std::to_string(rc));
  }

  if (g_failures > 0) {
    std::printf("%d cli check(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all cli checks passed\n");
  return 0;
}

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "experiment.hpp"
#include "noisylab/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace noisylab;

namespace {

struct Outcome {
  int exit = -1;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("noisylab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

Outcome run(const std::string& args, const fs::path& work) {
  const fs::path err = work / "stderr.txt";
  const std::string cmd = "NOISYLAB_THREADS=1 '" NOISYLAB_CLI_PATH "' " + args + " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

json smoke_config() {
  std::ifstream in(fs::path(NOISYLAB_CONFIG_DIR) / "smoke.json");
  return json::parse(in);
}

fs::path write_config(const fs::path& work, const json& j) {
  const fs::path path = work / "config.json";
  write(path, j.dump(2));
  return path;
}

/// Relative path -> contents, timing logs excluded.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.jsonl") continue;
    files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("shipped configs parse and validate", "[cli][config]") {
  for (const char* name : {"fixture.json", "smoke.json"}) {
    const auto config = cli::ExperimentConfig::load(fs::path(NOISYLAB_CONFIG_DIR) / name);
    const auto again = cli::ExperimentConfig::from_json(config.to_json());
    CHECK(again.to_json() == config.to_json());
  }
  const auto fixture = cli::ExperimentConfig::load(fs::path(NOISYLAB_CONFIG_DIR) / "fixture.json");
  CHECK(fixture.corpus.pretrain_count == 2000);
  CHECK(fixture.corpus.finetune_count == 100);
  CHECK(fixture.corpus.test_count == 400);
  CHECK(fixture.seeds.size() == 3);
}

TEST_CASE("unknown and invalid keys name the offending field", "[cli][config]") {
  const auto field_of = [](const json& j) {
    try {
      cli::ExperimentConfig::from_json(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<accepted>");
  };
  json j = smoke_config();
  j["scene"]["bogus"] = 1;
  CHECK(field_of(j) == "scene.bogus");
  j = smoke_config();
  j["extra"] = true;
  CHECK(field_of(j) == "extra");
  j = smoke_config();
  j["pretrain"]["epochs"] = 0;
  CHECK(field_of(j) == "pretrain.epochs");
  j = smoke_config();
  j["finetune"]["loss_weights"] = {{"focal", 1.0}};
  CHECK(field_of(j) == "finetune.loss_weights.focal");
  j = smoke_config();
  j["model"]["frameworks"] = {"segformer"};
  CHECK(field_of(j) == "model.frameworks");
  j = smoke_config();
  j["scene"]["patch_size"] = 34;  // not divisible by the output stride
  CHECK(field_of(j) == "model.stage_widths");
  j = smoke_config();
  j["finetune"]["encoder_mode"] = "fixed";
  CHECK(field_of(j) == "finetune.encoder_mode");
  j = smoke_config();
  j["noise"]["object_drop_prob"] = 1.5;
  CHECK(field_of(j).rfind("noise.", 0) == 0);
}

TEST_CASE("exit codes and the machine-parseable error line", "[cli]") {
  const fs::path work = scratch("errors");
  SECTION("config error exits 2") {
    json j = smoke_config();
    j["analysis"]["colour"] = "red";
    const auto cfg = write_config(work, j);
    const auto r = run("generate --config '" + cfg.string() + "' --out '" + (work / "out").string() + "'", work);
    CHECK(r.exit == 2);
    CHECK(first_line(r.err).rfind("error=config_error exit=2 field=analysis.colour message=\"", 0) == 0);
    CHECK(r.err.find("\nnoisylab: ") != std::string::npos);
  }
  SECTION("missing config exits 3") {
    const auto r = run("generate --config '" + (work / "absent.json").string() + "'", work);
    CHECK(r.exit == 3);
    CHECK(first_line(r.err).rfind("error=missing_input exit=3 ", 0) == 0);
  }
  SECTION("downstream command without upstream artifacts exits 3") {
    const auto cfg = write_config(work, smoke_config());
    for (const char* cmd : {"assess", "pretrain", "finetune", "analyze", "report"}) {
      const auto r = run(std::string(cmd) + " --config '" + cfg.string() + "' --out '" + (work / "out").string() + "'",
                         work);
      INFO(cmd << ": " << r.err);
      CHECK(r.exit == 3);
    }
  }
  SECTION("unknown command is a usage error") {
    const auto r = run("train --config x.json", work);
    CHECK(r.exit == 2);
    CHECK(first_line(r.err).rfind("error=usage_error exit=2", 0) == 0);
  }
  SECTION("diverging training exits 4") {
    json j = smoke_config();
    j["pretrain"]["base_lr"] = 1e38;
    j["pretrain"]["epochs"] = 3;
    const auto cfg = write_config(work, j);
    const std::string out = " --config '" + cfg.string() + "' --out '" + (work / "out").string() + "'";
    REQUIRE(run("generate" + out, work).exit == 0);
    const auto r = run("pretrain" + out, work);
    CHECK(r.exit == 4);
    CHECK(first_line(r.err).rfind("error=numerical_error exit=4 ", 0) == 0);
    CHECK(r.err.find("non-finite loss at epoch") != std::string::npos);
  }
}

TEST_CASE("assess on noise-free labels reports 100 everywhere", "[cli]") {
  const fs::path work = scratch("assess");
  json j = smoke_config();
  j["noise"] = {{"object_drop_prob", 0.0}, {"boundary_radius", 0}, {"blob_fp_rate", 0.0}, {"class_swap_prob", 0.0}};
  j["scene"]["pretrain_count"] = 60;
  const auto cfg = write_config(work, j);
  const std::string out = " --config '" + cfg.string() + "' --out '" + (work / "out").string() + "'";
  REQUIRE(run("generate" + out, work).exit == 0);
  REQUIRE(run("assess" + out, work).exit == 0);
  std::istringstream table(slurp(work / "out" / "assess" / "quality_table.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line == "CLASS,background,trees,buildings,roads,MEAN");
  int rows = 0;
  while (std::getline(table, line)) {
    ++rows;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');  // row label
    int filled = 0;
    while (std::getline(cells, cell, ',')) {
      if (cell.empty()) continue;
      CHECK(cell == "100.00");
      ++filled;
    }
    CHECK(filled >= 1);
  }
  CHECK(rows == 4);
}

TEST_CASE("smoke pipeline emits every artifact and re-runs byte-identically", "[cli][pipeline]") {
  const fs::path work = scratch("pipeline");
  const auto cfg = write_config(work, smoke_config());
  const fs::path root = work / "out";
  const std::string out = " --config '" + cfg.string() + "' --out '" + root.string() + "'";
  const auto pipeline = [&] {
    for (const char* cmd : {"generate", "assess", "pretrain", "finetune", "analyze", "report"}) {
      const auto r = run(std::string(cmd) + out, work);
      INFO(cmd << ": " << r.err);
      REQUIRE(r.exit == 0);
    }
  };
  pipeline();

  for (const char* rel : {"corpus/manifest.json", "corpus/noise.json", "assess/quality_table.csv",
                          "pretrain/noisy/seed0/checkpoint.nlckpt", "pretrain/exact/seed0/runlog.jsonl",
                          "finetune/noisy_aspp_finetuned/seed0/runlog.jsonl", "analysis/fisher_exact.csv",
                          "analysis/fisher_noisy.csv", "analysis/kl.csv", "analysis/kl_smoothed.csv",
                          "analysis/fisher.svg", "analysis/kl.svg", "analysis/dominant_pc.pgm",
                          "analysis/summary.json", "report/finetune_table.csv", "report/finetune_runs.csv",
                          "report/summary.json"}) {
    INFO(rel);
    CHECK(fs::exists(root / rel));
  }
  for (const auto& e : fs::recursive_directory_iterator(root / "finetune")) {
    if (e.path().filename() == "runlog.jsonl") {
      CHECK(fs::exists(e.path().parent_path() / "config.json"));
      CHECK(fs::exists(e.path().parent_path() / "config.hash"));
    }
  }

  const auto rows = cli::read_report_table(root / "report" / "finetune_table.csv");
  CHECK(rows.size() == 8);
  for (const auto& row : rows) {
    CHECK(row.seeds == 1);
    CHECK(row.median >= 0.0);
    CHECK(row.median <= 100.0);
  }
  const std::string grid = slurp(root / "analysis" / "dominant_pc.pgm");
  CHECK(grid.rfind("P5\n", 0) == 0);

  const auto first = snapshot(root);
  pipeline();
  const auto second = snapshot(root);
  REQUIRE(first.size() == second.size());
  for (const auto& [rel, content] : first) {
    INFO(rel);
    REQUIRE(second.count(rel) == 1);
    CHECK(second.at(rel) == content);
  }
}

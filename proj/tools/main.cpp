#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "noisylab/common.hpp"
#include "noisylab/models/checkpoint.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

std::string quoted(std::string text) {
  std::string out = "\"";
  for (char c : text) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

/// One machine-parseable line, then a human-readable one.
int fail(const char* code, int exit, const std::string& message, const std::string& field = {}) {
  std::cerr << "error=" << code << " exit=" << exit;
  if (!field.empty()) std::cerr << " field=" << field;
  std::cerr << " message=" << quoted(message) << '\n';
  std::cerr << "noisylab: " << message << '\n';
  return exit;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace noisylab;
  CLI::App app{"Noisy-label pretraining experiments on synthetic segmentation data"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"generate", "assess", "pretrain", "finetune", "analyze", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "run a single seed of the config's seed list");
    sub->add_option("--out", out_dir, "output root; overrides output_dir");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", kConfig, e.what(), "argv");
  }

  try {
    cli::Context ctx;
    ctx.config = cli::ExperimentConfig::load(config_path);
    ctx.out = out_dir.empty() ? ctx.config.output_dir : std::filesystem::path(out_dir);
    ctx.seed = seed;
    cli::run_command(app.get_subcommands().front()->get_name(), ctx);
  } catch (const ConfigError& e) {
    return fail("config_error", kConfig, e.message(), e.field());
  } catch (const MissingInputError& e) {
    return fail("missing_input", kMissing, e.what());
  } catch (const NumericalError& e) {
    return fail("numerical_error", kNumerical, e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", kOther, e.what());
  }
  return kOk;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace noisylab::cli {

/// Resolved invocation: config plus command-line overrides.
struct Context {
  ExperimentConfig config;
  std::filesystem::path out;          ///< output root
  std::optional<std::uint64_t> seed;  ///< restricts the seed list

  std::vector<std::uint64_t> seeds() const;
};

// Artifact layout below the output root.
std::filesystem::path corpus_dir(const std::filesystem::path& out);
std::filesystem::path pretrain_dir(const std::filesystem::path& out, training::LabelSource regime, std::uint64_t seed);
std::filesystem::path finetune_dir(const std::filesystem::path& out, Init init, models::FrameworkKind framework,
                                   training::EncoderMode mode, std::uint64_t seed);

void cmd_generate(const Context& ctx);
void cmd_assess(const Context& ctx);
void cmd_pretrain(const Context& ctx);
void cmd_finetune(const Context& ctx);
void cmd_analyze(const Context& ctx);
void cmd_report(const Context& ctx);

/// Dispatches by name; throws ConfigError("command") for unknown names.
void run_command(const std::string& name, const Context& ctx);

/// One row of the fine-tuning summary table.
struct ReportRow {
  Init init = Init::random;
  models::FrameworkKind framework = models::FrameworkKind::unet;
  training::EncoderMode mode = training::EncoderMode::fixed;
  int seeds = 0;
  double median = 0.0;  ///< mIoU over seeds, percent
  double mean = 0.0;
  double std = 0.0;
};

/// Parses report/finetune_table.csv (values in percent).
std::vector<ReportRow> read_report_table(const std::filesystem::path& path);

}  // namespace noisylab::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisylab/analysis/statistics.hpp"
#include "noisylab/data/corpus.hpp"
#include "noisylab/data/noise.hpp"
#include "noisylab/models/model.hpp"
#include "noisylab/training/trainer.hpp"

namespace noisylab::cli {

/// Either fixed corruption knobs or a calibration target.
struct NoiseSection {
  std::optional<data::NoiseConfig> fixed;
  double target_mean_iou = 0.5017;
  int calibration_patches = 200;
  double tolerance = 0.05;
};

struct ModelSection {
  models::EncoderSpec encoder;
  models::FrameworkKind pretrain_framework = models::FrameworkKind::unet;
  std::vector<models::FrameworkKind> frameworks{models::FrameworkKind::unet, models::FrameworkKind::aspp};
};

enum class Init { random, noisy, exact };
std::string_view init_name(Init init);
Init parse_init(std::string_view name);

struct PretrainSection {
  training::TrainConfig train = training::TrainConfig::pretrain_defaults();
  /// Label regimes to pretrain; "noisy" feeds fine-tuning, both feed analysis.
  std::vector<training::LabelSource> regimes{training::LabelSource::noisy, training::LabelSource::exact};
};

struct FinetuneSection {
  training::TrainConfig train = training::TrainConfig::finetune_defaults();
  std::vector<Init> inits{Init::random, Init::noisy};
  std::vector<training::EncoderMode> encoder_modes{training::EncoderMode::fixed, training::EncoderMode::finetuned};
};

struct AnalysisSection {
  int samples = 64;  ///< held-out patches per Fisher profile
  bool exclude_background = false;
  analysis::FisherOptions fisher;
  int savgol_window = 5;
  int savgol_polyorder = 2;
  int grid_cell = 48;
};

struct ExperimentConfig {
  data::CorpusSpec corpus;  ///< "scene" section
  NoiseSection noise;
  ModelSection model;
  PretrainSection pretrain;
  FinetuneSection finetune;
  AnalysisSection analysis;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError naming "section.key" for unknown keys and invalid values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

/// FNV-1a of the canonical dump, hex.
std::string json_hash(const nlohmann::json& j);

}  // namespace noisylab::cli

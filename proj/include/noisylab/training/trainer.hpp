#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "noisylab/analysis/metrics.hpp"
#include "noisylab/data/corpus.hpp"
#include "noisylab/models/checkpoint.hpp"
#include "noisylab/models/model.hpp"
#include "noisylab/training/loss.hpp"

namespace noisylab::training {

enum class Phase { pretrain, finetune };
enum class Schedule { constant, cosine };
enum class EncoderMode { fixed, finetuned };

std::string_view phase_name(Phase phase);
std::string_view schedule_name(Schedule schedule);
std::string_view encoder_mode_name(EncoderMode mode);
Phase parse_phase(std::string_view name);
Schedule parse_schedule(std::string_view name);
EncoderMode parse_encoder_mode(std::string_view name);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  int epochs = 50;
  int batch_size = 32;
  double base_lr = 1e-3;
  Schedule schedule = Schedule::constant;
  LossWeights loss_weights;
  std::optional<int> crop_size;
  std::uint64_t seed = 0;
  EncoderMode encoder_mode = EncoderMode::finetuned;  ///< finetune phase only
  double weight_decay = 0.0;
  double grad_clip = 0.0;  ///< 0 disables clipping
  int eval_interval = 5;   ///< epochs; the final epoch is always evaluated
  int checkpoint_interval = 0;  ///< epochs; 0 disables intermediate checkpoints

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults for `base.phase`; unknown keys are
/// rejected with ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base);
/// FNV-1a over the canonical JSON dump.
std::string config_hash(const TrainConfig& config);

enum class LabelSource { exact, noisy };

/// Locations (a base patch plus its season-analog variants) and the mask
/// each sample is trained or scored against.
struct LabeledSet {
  std::vector<data::Location> locations;
  LabelSource labels = LabelSource::noisy;
  std::vector<int> class_map;  ///< applied to the selected mask when non-empty
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return locations.size(); }
  data::LabelMask target(const data::PatchTriple& triple) const;
};

/// Noisy masks on the pretraining class set.
LabeledSet pretrain_set(const data::Corpus& corpus);
/// Exact masks on the downstream class set for `split`.
LabeledSet downstream_set(const data::Corpus& corpus, data::Split split);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double mean_loss = 0.0;
  double lr = 0.0;  ///< lr of the epoch's first step
  double wall_seconds = 0.0;
};

struct StepRecord {
  int epoch = 0;
  long step = 0;  ///< 0-based, global
  double lr = 0.0;
  double loss = 0.0;
};

struct EvalRecord {
  int epoch = 0;
  analysis::SegmentationMetrics metrics;
};

struct RunLog {
  std::string config_hash;
  Phase phase = Phase::pretrain;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::string checkpoint;  ///< final checkpoint reference, set by the caller

  /// One JSON record per line. Wall times are omitted unless requested so
  /// that the log of a deterministic run is itself deterministic.
  std::string to_jsonl(bool include_wall_time = false) const;
  static RunLog from_jsonl(std::string_view text);

  /// mIoU of the last eval record, NaN when none exists.
  double final_mean_iou() const;
};

struct TrainResult {
  models::CheckpointBundle checkpoint;
  RunLog log;
};

/// Receives the checkpoint after each epoch that is a multiple of
/// `checkpoint_interval`.
using CheckpointCallback = std::function<void(int epoch, const models::CheckpointBundle&)>;

/// Supervised training on `train`, with Adam and the configured schedule.
/// Augmentation (variant pick, flips, optional crop) is applied per sample.
/// Throws NumericalError naming epoch, batch and lr when the loss becomes
/// non-finite.
TrainResult pretrain(const LabeledSet& train, models::SegmentationModel& model, const TrainConfig& config,
                     const LabeledSet* eval = nullptr, const CheckpointCallback& on_checkpoint = {});

/// Imports the encoder of `init` (when given), freezes it for
/// EncoderMode::fixed, then trains as pretrain does and evaluates on `test`.
TrainResult finetune(const LabeledSet& train, const LabeledSet& test, models::SegmentationModel& model,
                     const models::CheckpointBundle* init, const TrainConfig& config,
                     const CheckpointCallback& on_checkpoint = {});

/// Arg-max class masks for `images` ([C,H,W] each), in eval mode.
std::vector<data::LabelMask> predict(models::SegmentationModel& model, const std::vector<Tensor>& images,
                                     int batch_size = 16);

analysis::SegmentationMetrics evaluate(models::SegmentationModel& model, const LabeledSet& set, int batch_size = 16);

}  // namespace noisylab::training

#include "noisylab/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "noisylab/common.hpp"
#include "noisylab/data/augment.hpp"
#include "noisylab/training/optim.hpp"

namespace noisylab::training {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view name, const std::array<std::string_view, N>& names, const char* field) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<E>(i);
  }
  throw ConfigError(field, "unknown value '" + std::string(name) + "'");
}

constexpr std::array<std::string_view, 2> kPhases{"pretrain", "finetune"};
constexpr std::array<std::string_view, 2> kSchedules{"constant", "cosine"};
constexpr std::array<std::string_view, 2> kModes{"fixed", "finetuned"};

}  // namespace

std::string_view phase_name(Phase phase) { return kPhases[static_cast<std::size_t>(phase)]; }
std::string_view schedule_name(Schedule schedule) { return kSchedules[static_cast<std::size_t>(schedule)]; }
std::string_view encoder_mode_name(EncoderMode mode) { return kModes[static_cast<std::size_t>(mode)]; }
Phase parse_phase(std::string_view name) { return parse_enum<Phase>(name, kPhases, "phase"); }
Schedule parse_schedule(std::string_view name) { return parse_enum<Schedule>(name, kSchedules, "schedule"); }
EncoderMode parse_encoder_mode(std::string_view name) {
  return parse_enum<EncoderMode>(name, kModes, "encoder_mode");
}

TrainConfig TrainConfig::pretrain_defaults() { return {}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.phase = Phase::finetune;
  c.base_lr = 5e-4;
  c.schedule = Schedule::cosine;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr", "must be finite and > 0");
  if (!(loss_weights.cross_entropy >= 0.0)) throw ConfigError("loss_weights.ce", "must be >= 0");
  if (!(loss_weights.dice >= 0.0)) throw ConfigError("loss_weights.dice", "must be >= 0");
  if (loss_weights.cross_entropy == 0.0 && loss_weights.dice == 0.0) {
    throw ConfigError("loss_weights", "ce and dice weights are both zero");
  }
  if (crop_size && *crop_size < 1) throw ConfigError("crop_size", "must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip", "must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval_interval", "must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval", "must be >= 0");
}

json to_json(const TrainConfig& c) {
  json j;
  j["phase"] = phase_name(c.phase);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["base_lr"] = c.base_lr;
  j["schedule"] = schedule_name(c.schedule);
  j["loss_weights"] = {{"ce", c.loss_weights.cross_entropy}, {"dice", c.loss_weights.dice}};
  j["crop_size"] = c.crop_size ? json(*c.crop_size) : json(nullptr);
  j["seed"] = c.seed;
  j["encoder_mode"] = encoder_mode_name(c.encoder_mode);
  j["weight_decay"] = c.weight_decay;
  j["grad_clip"] = c.grad_clip;
  j["eval_interval"] = c.eval_interval;
  j["checkpoint_interval"] = c.checkpoint_interval;
  return j;
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  TrainConfig c = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "phase") c.phase = parse_phase(value.get<std::string>());
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "schedule") c.schedule = parse_schedule(value.get<std::string>());
      else if (key == "loss_weights") {
        for (const auto& [wk, wv] : value.items()) {
          if (wk == "ce") c.loss_weights.cross_entropy = wv.get<double>();
          else if (wk == "dice") c.loss_weights.dice = wv.get<double>();
          else throw ConfigError("loss_weights." + wk, "unknown key");
        }
      } else if (key == "crop_size") {
        if (value.is_null()) c.crop_size.reset();
        else c.crop_size = value.get<int>();
      } else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "encoder_mode") c.encoder_mode = parse_encoder_mode(value.get<std::string>());
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "eval_interval") c.eval_interval = value.get<int>();
      else if (key == "checkpoint_interval") c.checkpoint_interval = value.get<int>();
      else throw ConfigError(key, "unknown key");
    } catch (const json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
  return c;
}

std::string config_hash(const TrainConfig& config) { return hex64(fnv1a(to_json(config).dump())); }

data::LabelMask LabeledSet::target(const data::PatchTriple& triple) const {
  const auto& mask = labels == LabelSource::exact ? triple.exact_mask : triple.noisy_mask;
  return class_map.empty() ? mask : data::relabel(mask, class_map);
}

LabeledSet pretrain_set(const data::Corpus& corpus) {
  return {corpus.locations(data::Split::pretrain), LabelSource::noisy, {}, corpus.noisy_class_names};
}

LabeledSet downstream_set(const data::Corpus& corpus, data::Split split) {
  return {corpus.locations(split), LabelSource::exact, {}, corpus.exact_class_names};
}

// ------------------------------------------------------------------ RunLog

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// NaN is not representable in JSON; it is written as null.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

std::string RunLog::to_jsonl(bool include_wall_time) const {
  std::ostringstream os;
  os << json{{"type", "run"}, {"config_hash", config_hash}, {"phase", phase_name(phase)}}.dump() << '\n';
  for (const auto& s : steps) {
    os << json{{"type", "step"}, {"epoch", s.epoch}, {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}}.dump() << '\n';
  }
  for (const auto& e : epochs) {
    json j{{"type", "epoch"}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"lr", e.lr}};
    if (include_wall_time) j["wall_seconds"] = e.wall_seconds;
    os << j.dump() << '\n';
  }
  for (const auto& ev : evals) {
    json classes = json::array();
    for (const auto& c : ev.metrics.per_class) {
      classes.push_back({{"name", c.name},
                         {"precision", optional_json(c.precision)},
                         {"recall", optional_json(c.recall)},
                         {"iou", optional_json(c.iou)}});
    }
    os << json{{"type", "eval"},
               {"epoch", ev.epoch},
               {"overall_accuracy", number_or_null(ev.metrics.overall_accuracy)},
               {"mean_iou", number_or_null(ev.metrics.mean_iou)},
               {"average_accuracy", number_or_null(ev.metrics.average_accuracy)},
               {"classes", classes}}
              .dump()
       << '\n';
  }
  if (!checkpoint.empty()) os << json{{"type", "checkpoint"}, {"path", checkpoint}}.dump() << '\n';
  return os.str();
}

RunLog RunLog::from_jsonl(std::string_view text) {
  RunLog log;
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "run") {
        log.config_hash = j.at("config_hash").get<std::string>();
        log.phase = parse_phase(j.at("phase").get<std::string>());
      } else if (type == "step") {
        log.steps.push_back({j.at("epoch").get<int>(), j.at("step").get<long>(), j.at("lr").get<double>(),
                             j.at("loss").get<double>()});
      } else if (type == "epoch") {
        log.epochs.push_back({j.at("epoch").get<int>(), j.at("mean_loss").get<double>(), j.at("lr").get<double>(),
                              j.value("wall_seconds", 0.0)});
      } else if (type == "eval") {
        EvalRecord ev;
        ev.epoch = j.at("epoch").get<int>();
        ev.metrics.overall_accuracy = number_from(j.at("overall_accuracy"));
        ev.metrics.mean_iou = number_from(j.at("mean_iou"));
        ev.metrics.average_accuracy = number_from(j.at("average_accuracy"));
        for (const auto& c : j.at("classes")) {
          ev.metrics.per_class.push_back({c.at("name").get<std::string>(), optional_from(c.at("precision")),
                                          optional_from(c.at("recall")), optional_from(c.at("iou"))});
        }
        log.evals.push_back(std::move(ev));
      } else if (type == "checkpoint") {
        log.checkpoint = j.at("path").get<std::string>();
      } else {
        throw std::runtime_error("unknown record type '" + type + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("run log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

double RunLog::final_mean_iou() const { return evals.empty() ? std::nan("") : evals.back().metrics.mean_iou; }

// --------------------------------------------------------------- training

namespace {

struct Batch {
  Tensor images;
  std::vector<std::uint8_t> targets;
};

Batch assemble(const std::vector<data::PatchTriple>& samples, const LabeledSet& set) {
  const auto& first = samples.front();
  const int c = first.channels();
  const int h = first.height();
  const int w = first.width();
  Batch b{Tensor({static_cast<int>(samples.size()), c, h, w}), {}};
  b.targets.reserve(samples.size() * static_cast<std::size_t>(h) * w);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i].image.values();
    std::copy(img.begin(), img.end(), b.images.data() + i * per);
    const auto mask = set.target(samples[i]);
    b.targets.insert(b.targets.end(), mask.values.begin(), mask.values.end());
  }
  return b;
}

data::PatchTriple draw_sample(const data::Location& location, const TrainConfig& config, std::uint64_t seed) {
  const std::span<const data::PatchTriple> variants =
      location.size() > 1 ? std::span<const data::PatchTriple>(location) : std::span<const data::PatchTriple>();
  auto sample = data::augment(location.front(), variants, derive_seed(seed, 1));
  if (config.crop_size) sample = data::random_crop(sample, *config.crop_size, derive_seed(seed, 2));
  return sample;
}

double lr_at(const TrainConfig& config, long step, long total) {
  return config.schedule == Schedule::cosine ? cosine_lr(step, total, config.base_lr) : config.base_lr;
}

TrainResult run_training(const LabeledSet& train, models::SegmentationModel& model, const TrainConfig& config,
                         const LabeledSet* eval, const CheckpointCallback& on_checkpoint) {
  config.validate();
  if (train.locations.empty()) throw MissingInputError("training set is empty");
  if (train.num_classes() != model.num_classes()) {
    throw MismatchError("training set has " + std::to_string(train.num_classes()) + " classes, model has " +
                        std::to_string(model.num_classes()));
  }
  if (eval && eval->num_classes() != model.num_classes()) throw MismatchError("eval set class count differs from model");

  TrainResult result;
  auto& log = result.log;
  log.config_hash = config_hash(config);
  log.phase = config.phase;

  const std::size_t n = train.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const long batches_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_steps = batches_per_epoch * config.epochs;
  Adam optimizer(model.parameters(), AdamOptions{0.9, 0.999, 1e-8, config.weight_decay});
  const int threads = worker_threads();

  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * batch;
      const std::size_t end = std::min(n, begin + batch);
      std::vector<data::PatchTriple> samples(end - begin);
      parallel_for(samples.size(), threads, [&](std::size_t i) {
        const std::size_t slot = begin + i;
        const std::uint64_t sample_seed =
            derive_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(slot));
        samples[i] = draw_sample(train.locations[order[slot]], config, sample_seed);
      });
      const auto input = assemble(samples, train);
      const double lr = lr_at(config, step, total_steps);

      model.zero_grad();
      const Tensor logits = model.forward(input.images, true);
      LossResult loss;
      try {
        loss = combined_loss(logits, input.targets, config.loss_weights);
      } catch (const NumericalError&) {
        loss.value = std::nan("");
      }
      if (!std::isfinite(loss.value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << b << ", lr " << lr;
        throw NumericalError(msg.str());
      }
      model.backward(loss.grad);
      if (config.grad_clip > 0.0) clip_grad_norm(model.parameters(), config.grad_clip);
      optimizer.step(lr);

      log.steps.push_back({epoch, step, lr, loss.value});
      loss_sum += loss.value;
      ++step;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(batches_per_epoch),
                          lr_at(config, step - batches_per_epoch, total_steps), seconds});

    if (eval && (epoch % config.eval_interval == 0 || epoch == config.epochs)) {
      log.evals.push_back({epoch, evaluate(model, *eval)});
    }
    if (on_checkpoint && config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0) {
      on_checkpoint(epoch, models::export_checkpoint(model, {log.config_hash, config.seed, epoch}));
    }
  }
  result.checkpoint = models::export_checkpoint(model, {log.config_hash, config.seed, config.epochs});
  return result;
}

}  // namespace

TrainResult pretrain(const LabeledSet& train, models::SegmentationModel& model, const TrainConfig& config,
                     const LabeledSet* eval, const CheckpointCallback& on_checkpoint) {
  model.set_encoder_trainable(true);
  return run_training(train, model, config, eval, on_checkpoint);
}

TrainResult finetune(const LabeledSet& train, const LabeledSet& test, models::SegmentationModel& model,
                     const models::CheckpointBundle* init, const TrainConfig& config,
                     const CheckpointCallback& on_checkpoint) {
  config.validate();
  if (init) models::import_checkpoint(*init, model, models::ImportScope::encoder_only, true);
  model.set_encoder_trainable(config.encoder_mode == EncoderMode::finetuned);
  return run_training(train, model, config, &test, on_checkpoint);
}

std::vector<data::LabelMask> predict(models::SegmentationModel& model, const std::vector<Tensor>& images,
                                     int batch_size) {
  std::vector<data::LabelMask> out;
  out.reserve(images.size());
  for (std::size_t begin = 0; begin < images.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), begin + static_cast<std::size_t>(batch_size));
    const Shape& s = images[begin].shape();
    Tensor batch({static_cast<int>(end - begin), s[0], s[1], s[2]});
    const std::size_t per = images[begin].size();
    for (std::size_t i = begin; i < end; ++i) {
      if (images[i].shape() != s) throw MismatchError("predict: images in a batch must share a shape");
      std::copy(images[i].values().begin(), images[i].values().end(), batch.data() + (i - begin) * per);
    }
    const Tensor logits = model.forward(batch, false);
    const int k = logits.dim(1);
    const int h = logits.dim(2);
    const int w = logits.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < logits.dim(0); ++b) {
      data::LabelMask mask(h, w);
      const float* base = logits.data() + static_cast<std::size_t>(b) * k * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        for (int c = 1; c < k; ++c) {
          if (base[static_cast<std::size_t>(c) * plane + p] > base[static_cast<std::size_t>(best) * plane + p]) best = c;
        }
        mask.values[p] = static_cast<std::uint8_t>(best);
      }
      out.push_back(std::move(mask));
    }
  }
  return out;
}

analysis::SegmentationMetrics evaluate(models::SegmentationModel& model, const LabeledSet& set, int batch_size) {
  std::vector<Tensor> images;
  std::vector<data::LabelMask> truth;
  images.reserve(set.size());
  for (const auto& loc : set.locations) {
    images.push_back(loc.front().image);
    truth.push_back(set.target(loc.front()));
  }
  const auto predicted = predict(model, images, batch_size);
  return analysis::evaluate_segmentation(predicted, truth, set.class_names);
}

}  // namespace noisylab::training

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "noisylab/models/layers.hpp"

namespace noisylab::models {

/// Width-configurable residual encoder: a full-resolution stem followed by
/// stages that each halve the resolution.
struct EncoderSpec {
  int in_channels = 4;
  std::vector<int> stage_widths{16, 32, 64, 128};
  int blocks_per_stage = 2;

  int num_stages() const { return static_cast<int>(stage_widths.size()); }
  int output_stride() const { return 1 << num_stages(); }
  void validate() const;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

enum class FrameworkKind { unet, aspp, pyramid };

std::string_view framework_name(FrameworkKind kind);
FrameworkKind parse_framework(std::string_view name);

struct ModuleInfo {
  std::string path;
  Role role;  ///< encoder or decoder; the head counts as decoder

  friend bool operator==(const ModuleInfo&, const ModuleInfo&) = default;
};

class ResidualBlock;
class Decoder;

class Encoder {
 public:
  explicit Encoder(const EncoderSpec& spec);
  ~Encoder();

  /// Stem output, then one feature map per stage (deepest last).
  std::vector<Tensor> forward(const Tensor& x, const ForwardContext& ctx);
  /// `grads[i]` is dL/d(feature i); empty tensors mean zero.
  void backward(std::vector<Tensor> grads);

  void units(std::vector<ConvUnit*>& out);
  void parameters(std::vector<Parameter*>& out);
  /// Channel count of each returned feature map.
  std::vector<int> feature_channels() const;

 private:
  EncoderSpec spec_;
  std::unique_ptr<ConvUnit> stem_;
  std::vector<std::vector<std::unique_ptr<ResidualBlock>>> stages_;
};

/// Decoder framework over the encoder's feature pyramid.
class Decoder {
 public:
  virtual ~Decoder() = default;
  /// Returns decoded features; resolution may be below the input's.
  virtual Tensor forward(const std::vector<Tensor>& features, const ForwardContext& ctx) = 0;
  virtual std::vector<Tensor> backward(const Tensor& grad) = 0;
  virtual int out_channels() const = 0;
  virtual void units(std::vector<ConvUnit*>& out) = 0;
};

std::unique_ptr<Decoder> make_decoder(FrameworkKind kind, const EncoderSpec& spec);

/// Encoder + decoder + 1x1 classification head, full-resolution logits.
class SegmentationModel {
 public:
  SegmentationModel(EncoderSpec spec, FrameworkKind kind, int num_classes, std::uint64_t init_seed = 0);
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;
  SegmentationModel(SegmentationModel&&) noexcept = default;
  SegmentationModel& operator=(SegmentationModel&&) noexcept = default;
  ~SegmentationModel();

  /// images [N,C,H,W] -> logits [N,K,H,W]. Training mode uses batch
  /// statistics (except in frozen units) and caches for backward().
  Tensor forward(const Tensor& images, bool training, const ActivationSink* sink = nullptr);
  /// Accumulates parameter gradients from dL/dlogits. Skips the encoder
  /// entirely while it is frozen.
  void backward(const Tensor& grad_logits);

  void zero_grad();
  void set_encoder_trainable(bool trainable);
  bool encoder_trainable() const noexcept { return encoder_trainable_; }

  /// Every convolutional module in execution order.
  const std::vector<ModuleInfo>& module_paths() const noexcept { return module_infos_; }
  /// All tensors, in a fixed order: per module, conv weight/bias then
  /// normalization weight/bias/running statistics.
  const std::vector<Parameter*>& parameters() const noexcept { return params_; }
  Parameter* find_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  const EncoderSpec& spec() const noexcept { return spec_; }
  FrameworkKind kind() const noexcept { return kind_; }
  int num_classes() const noexcept { return num_classes_; }
  std::uint64_t init_seed() const noexcept { return init_seed_; }

  /// Fan-in scaled normal (He) weights, zero biases, unit/zero
  /// normalization, unit running variance.
  void initialize(std::uint64_t seed);

 private:
  EncoderSpec spec_;
  FrameworkKind kind_;
  int num_classes_;
  std::uint64_t init_seed_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<ConvUnit> head_;
  std::unique_ptr<Resize> upsample_;
  std::vector<ConvUnit*> units_;
  std::vector<ModuleInfo> module_infos_;
  std::vector<Parameter*> params_;
  bool encoder_trainable_ = true;
  bool upsampled_ = false;
};

}  // namespace noisylab::models

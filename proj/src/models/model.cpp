#include "noisylab/models/model.hpp"

#include <algorithm>
#include <cmath>

#include "noisylab/common.hpp"

namespace noisylab::models {

void EncoderSpec::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels", "must be >= 1");
  if (stage_widths.size() < 2) throw ConfigError("stage_widths", "need at least 2 stages");
  if (stage_widths.size() > 8) throw ConfigError("stage_widths", "at most 8 stages");
  for (int w : stage_widths) {
    if (w < 1) throw ConfigError("stage_widths", "widths must be positive");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage", "must be >= 1");
}

std::string_view framework_name(FrameworkKind kind) {
  switch (kind) {
    case FrameworkKind::unet: return "unet";
    case FrameworkKind::aspp: return "aspp";
    case FrameworkKind::pyramid: return "pyramid";
  }
  return "unet";
}

FrameworkKind parse_framework(std::string_view name) {
  if (name == "unet") return FrameworkKind::unet;
  if (name == "aspp") return FrameworkKind::aspp;
  if (name == "pyramid") return FrameworkKind::pyramid;
  throw ConfigError("framework", "unknown framework '" + std::string(name) + "' (expected unet, aspp or pyramid)");
}

namespace {

ConvUnit::Options conv3(int stride = 1, bool relu = true, int dilation = 1) {
  return {3, stride, dilation, true, relu, false};
}

ConvUnit::Options conv1(int stride = 1, bool relu = true) { return {1, stride, 1, true, relu, false}; }

std::vector<int> feature_channels_of(const EncoderSpec& spec) {
  std::vector<int> ch{spec.stage_widths[0]};
  for (int w : spec.stage_widths) ch.push_back(w);
  return ch;
}

void accumulate(Tensor& into, const Tensor& g) {
  if (g.empty()) return;
  if (into.empty()) {
    into = g;
  } else {
    add_inplace(into, g);
  }
}

}  // namespace

// ------------------------------------------------------------ ResidualBlock

/// conv3x3-BN-ReLU, conv3x3-BN, add shortcut, ReLU. The second unit's path
/// reports the block output.
class ResidualBlock {
 public:
  ResidualBlock(const std::string& path, int in, int out, int stride) {
    if (stride != 1 || in != out) {
      downsample_ = std::make_unique<ConvUnit>(path + ".downsample", Role::encoder, in, out, conv1(stride, false));
    }
    conv1_ = std::make_unique<ConvUnit>(path + ".conv1", Role::encoder, in, out, conv3(stride));
    conv2_ = std::make_unique<ConvUnit>(path + ".conv2", Role::encoder, out, out, conv3(1, false));
  }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) {
    Tensor shortcut = downsample_ ? downsample_->forward(x, ctx) : x;
    Tensor h = conv1_->forward(x, ctx);
    Tensor z = conv2_->forward(h, ctx, false);
    add_inplace(z, shortcut);
    output_ = relu(z);
    if (ctx.sink && *ctx.sink) (*ctx.sink)(conv2_->path(), output_);
    return output_;
  }

  Tensor backward(const Tensor& dy) {
    Tensor g = relu_backward(dy, output_);
    Tensor dx = conv1_->backward(conv2_->backward(g, true), true);
    if (downsample_) {
      add_inplace(dx, downsample_->backward(g, true));
    } else {
      add_inplace(dx, g);
    }
    return dx;
  }

  void units(std::vector<ConvUnit*>& out) {
    if (downsample_) out.push_back(downsample_.get());
    out.push_back(conv1_.get());
    out.push_back(conv2_.get());
  }

 private:
  std::unique_ptr<ConvUnit> downsample_;
  std::unique_ptr<ConvUnit> conv1_;
  std::unique_ptr<ConvUnit> conv2_;
  Tensor output_;
};

// ------------------------------------------------------------------ Encoder

Encoder::Encoder(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  stem_ = std::make_unique<ConvUnit>("encoder.stem", Role::encoder, spec.in_channels, spec.stage_widths[0], conv3());
  int in = spec.stage_widths[0];
  for (int s = 0; s < spec.num_stages(); ++s) {
    const int out = spec.stage_widths[static_cast<std::size_t>(s)];
    auto& stage = stages_.emplace_back();
    for (int b = 0; b < spec.blocks_per_stage; ++b) {
      const std::string path = "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      stage.push_back(std::make_unique<ResidualBlock>(path, b == 0 ? in : out, out, b == 0 ? 2 : 1));
    }
    in = out;
  }
}

Encoder::~Encoder() = default;

std::vector<Tensor> Encoder::forward(const Tensor& x, const ForwardContext& ctx) {
  std::vector<Tensor> features;
  features.push_back(stem_->forward(x, ctx));
  for (auto& stage : stages_) {
    Tensor h = features.back();
    for (auto& block : stage) h = block->forward(h, ctx);
    features.push_back(std::move(h));
  }
  return features;
}

void Encoder::backward(std::vector<Tensor> grads) {
  const std::size_t last = stages_.size();
  Tensor g = std::move(grads[last]);
  for (std::size_t s = last; s-- > 0;) {
    if (!g.empty()) {
      for (auto it = stages_[s].rbegin(); it != stages_[s].rend(); ++it) g = (*it)->backward(g);
    }
    accumulate(g, grads[s]);
  }
  if (!g.empty()) stem_->backward(g, false);
}

void Encoder::units(std::vector<ConvUnit*>& out) {
  out.push_back(stem_.get());
  for (auto& stage : stages_) {
    for (auto& block : stage) block->units(out);
  }
}

std::vector<int> Encoder::feature_channels() const { return feature_channels_of(spec_); }

// ----------------------------------------------------------------- Decoders

namespace {

/// Mirrored upsampling path: bilinear x2, concatenate the skip feature,
/// two 3x3 units per level, ending at full resolution.
class UNetDecoder final : public Decoder {
 public:
  explicit UNetDecoder(const EncoderSpec& spec) {
    const auto ch = feature_channels_of(spec);
    const int stages = spec.num_stages();
    int cur = ch[static_cast<std::size_t>(stages)];
    for (int l = stages - 1; l >= 0; --l) {
      const int skip = ch[static_cast<std::size_t>(l)];
      const std::string base = "decoder.up" + std::to_string(l);
      Level level;
      level.skip_channels = skip;
      level.up_channels = cur;
      level.conv1 = std::make_unique<ConvUnit>(base + ".conv1", Role::decoder, cur + skip, skip, conv3());
      level.conv2 = std::make_unique<ConvUnit>(base + ".conv2", Role::decoder, skip, skip, conv3());
      levels_.push_back(std::move(level));
      cur = skip;
    }
    out_channels_ = cur;
  }

  Tensor forward(const std::vector<Tensor>& f, const ForwardContext& ctx) override {
    Tensor cur = f.back();
    const std::size_t stages = f.size() - 1;
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const Tensor& skip = f[stages - 1 - i];
      auto& level = levels_[i];
      Tensor up = level.resize.forward(cur, skip.dim(2), skip.dim(3));
      Tensor cat = concat_channels({&up, &skip});
      cur = level.conv2->forward(level.conv1->forward(cat, ctx), ctx);
    }
    return cur;
  }

  std::vector<Tensor> backward(const Tensor& grad) override {
    const std::size_t stages = levels_.size();
    std::vector<Tensor> grads(stages + 1);
    Tensor g = grad;
    for (std::size_t i = stages; i-- > 0;) {
      auto& level = levels_[i];
      Tensor dcat = level.conv1->backward(level.conv2->backward(g, true), true);
      auto parts = split_channels(dcat, {level.up_channels, level.skip_channels});
      accumulate(grads[stages - 1 - i], parts[1]);
      g = level.resize.backward(parts[0]);
    }
    accumulate(grads[stages], g);
    return grads;
  }

  int out_channels() const override { return out_channels_; }

  void units(std::vector<ConvUnit*>& out) override {
    for (auto& level : levels_) {
      out.push_back(level.conv1.get());
      out.push_back(level.conv2.get());
    }
  }

 private:
  struct Level {
    int skip_channels = 0;
    int up_channels = 0;
    Resize resize;
    std::unique_ptr<ConvUnit> conv1;
    std::unique_ptr<ConvUnit> conv2;
  };
  std::vector<Level> levels_;
  int out_channels_ = 0;
};

/// Atrous pyramid on the bottleneck (rates 1, 2, 4), projection, bilinear
/// upsampling to the stride-4 feature, low-level skip and refinement.
class AsppDecoder final : public Decoder {
 public:
  explicit AsppDecoder(const EncoderSpec& spec) {
    const auto ch = feature_channels_of(spec);
    const int bottleneck = ch.back();
    num_features_ = spec.num_stages() + 1;
    const int low = ch[static_cast<std::size_t>(low_index_)];
    width_ = std::max(4, bottleneck / 2);
    low_width_ = std::max(4, low / 2);
    for (int rate : {1, 2, 4}) {
      branches_.push_back(std::make_unique<ConvUnit>("decoder.aspp.rate" + std::to_string(rate), Role::decoder,
                                                     bottleneck, width_, conv3(1, true, rate)));
    }
    project_ = std::make_unique<ConvUnit>("decoder.aspp.project", Role::decoder, 3 * width_, width_, conv1());
    lowlevel_ = std::make_unique<ConvUnit>("decoder.lowlevel", Role::decoder, low, low_width_, conv1());
    refine1_ = std::make_unique<ConvUnit>("decoder.refine1", Role::decoder, width_ + low_width_, width_, conv3());
    refine2_ = std::make_unique<ConvUnit>("decoder.refine2", Role::decoder, width_, width_, conv3());
  }

  Tensor forward(const std::vector<Tensor>& f, const ForwardContext& ctx) override {
    const Tensor& x = f.back();
    std::vector<Tensor> outs;
    for (auto& b : branches_) outs.push_back(b->forward(x, ctx));
    Tensor cat = concat_channels({&outs[0], &outs[1], &outs[2]});
    Tensor proj = project_->forward(cat, ctx);
    const Tensor& lowf = f[static_cast<std::size_t>(low_index_)];
    Tensor up = resize_.forward(proj, lowf.dim(2), lowf.dim(3));
    Tensor lowr = lowlevel_->forward(lowf, ctx);
    Tensor merged = concat_channels({&up, &lowr});
    return refine2_->forward(refine1_->forward(merged, ctx), ctx);
  }

  std::vector<Tensor> backward(const Tensor& grad) override {
    std::vector<Tensor> grads(static_cast<std::size_t>(num_features_));
    Tensor dmerged = refine1_->backward(refine2_->backward(grad, true), true);
    auto parts = split_channels(dmerged, {width_, low_width_});
    accumulate(grads[static_cast<std::size_t>(low_index_)], lowlevel_->backward(parts[1], true));
    Tensor dcat = project_->backward(resize_.backward(parts[0]), true);
    auto dbranches = split_channels(dcat, {width_, width_, width_});
    Tensor dx;
    for (std::size_t i = 0; i < branches_.size(); ++i) accumulate(dx, branches_[i]->backward(dbranches[i], true));
    accumulate(grads.back(), dx);
    return grads;
  }

  int out_channels() const override { return width_; }

  void units(std::vector<ConvUnit*>& out) override {
    for (auto& b : branches_) out.push_back(b.get());
    out.push_back(project_.get());
    out.push_back(lowlevel_.get());
    out.push_back(refine1_.get());
    out.push_back(refine2_.get());
  }

 private:
  static constexpr int low_index_ = 2;  // stride-4 feature
  int width_ = 0;
  int low_width_ = 0;
  int num_features_ = 0;
  std::vector<std::unique_ptr<ConvUnit>> branches_;
  std::unique_ptr<ConvUnit> project_;
  std::unique_ptr<ConvUnit> lowlevel_;
  std::unique_ptr<ConvUnit> refine1_;
  std::unique_ptr<ConvUnit> refine2_;
  Resize resize_;
};

/// Pooling pyramid: adaptive average pooling onto 1x1, 2x2 and 4x4 grids,
/// 1x1 reduction, upsampling back to the bottleneck, concatenation with it
/// and a 3x3 fusion unit.
class PyramidDecoder final : public Decoder {
 public:
  explicit PyramidDecoder(const EncoderSpec& spec) {
    const int bottleneck = spec.stage_widths.back();
    bottleneck_ = bottleneck;
    reduced_ = std::max(4, bottleneck / 4);
    width_ = std::max(4, bottleneck / 2);
    num_features_ = spec.num_stages() + 1;
    for (int grid : {1, 2, 4}) {
      Branch b{AdaptiveAvgPool(grid), Resize{},
               std::make_unique<ConvUnit>("decoder.pool" + std::to_string(grid), Role::decoder, bottleneck, reduced_,
                                          conv1())};
      branches_.push_back(std::move(b));
    }
    fuse_ = std::make_unique<ConvUnit>("decoder.fuse", Role::decoder, bottleneck + 3 * reduced_, width_, conv3());
  }

  Tensor forward(const std::vector<Tensor>& f, const ForwardContext& ctx) override {
    const Tensor& x = f.back();
    std::vector<Tensor> ups;
    for (auto& b : branches_) {
      Tensor pooled = b.pool.forward(x);
      ups.push_back(b.resize.forward(b.conv->forward(pooled, ctx), x.dim(2), x.dim(3)));
    }
    Tensor cat = concat_channels({&x, &ups[0], &ups[1], &ups[2]});
    return fuse_->forward(cat, ctx);
  }

  std::vector<Tensor> backward(const Tensor& grad) override {
    std::vector<Tensor> grads(static_cast<std::size_t>(num_features_));
    Tensor dcat = fuse_->backward(grad, true);
    auto parts = split_channels(dcat, {bottleneck_, reduced_, reduced_, reduced_});
    Tensor dx = parts[0];
    for (std::size_t i = 0; i < branches_.size(); ++i) {
      auto& b = branches_[i];
      add_inplace(dx, b.pool.backward(b.conv->backward(b.resize.backward(parts[i + 1]), true)));
    }
    grads.back() = std::move(dx);
    return grads;
  }

  int out_channels() const override { return width_; }

  void units(std::vector<ConvUnit*>& out) override {
    for (auto& b : branches_) out.push_back(b.conv.get());
    out.push_back(fuse_.get());
  }

 private:
  struct Branch {
    AdaptiveAvgPool pool;
    Resize resize;
    std::unique_ptr<ConvUnit> conv;
  };
  int bottleneck_ = 0;
  int reduced_ = 0;
  int width_ = 0;
  int num_features_ = 0;
  std::vector<Branch> branches_;
  std::unique_ptr<ConvUnit> fuse_;
};

}  // namespace

std::unique_ptr<Decoder> make_decoder(FrameworkKind kind, const EncoderSpec& spec) {
  switch (kind) {
    case FrameworkKind::unet: return std::make_unique<UNetDecoder>(spec);
    case FrameworkKind::aspp: return std::make_unique<AsppDecoder>(spec);
    case FrameworkKind::pyramid: return std::make_unique<PyramidDecoder>(spec);
  }
  throw ConfigError("framework", "unknown framework");
}

// ------------------------------------------------------- SegmentationModel

SegmentationModel::SegmentationModel(EncoderSpec spec, FrameworkKind kind, int num_classes, std::uint64_t init_seed)
    : spec_(std::move(spec)), kind_(kind), num_classes_(num_classes), init_seed_(init_seed) {
  spec_.validate();
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  encoder_ = std::make_unique<Encoder>(spec_);
  decoder_ = make_decoder(kind, spec_);
  head_ = std::make_unique<ConvUnit>("head", Role::head, decoder_->out_channels(), num_classes,
                                     ConvUnit::Options{1, 1, 1, false, false, true});
  upsample_ = std::make_unique<Resize>();

  encoder_->units(units_);
  decoder_->units(units_);
  units_.push_back(head_.get());
  for (auto* u : units_) {
    module_infos_.push_back({u->path(), u->role() == Role::encoder ? Role::encoder : Role::decoder});
    u->parameters(params_);
  }
  initialize(init_seed);
}

SegmentationModel::~SegmentationModel() = default;

void SegmentationModel::initialize(std::uint64_t seed) {
  init_seed_ = seed;
  Rng rng(mix_seed(seed));
  for (auto* p : params_) {
    const auto& name = p->name;
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (p->value.rank() == 4) {
      const int fan_in = p->value.dim(1) * p->value.dim(2) * p->value.dim(3);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : p->value.values()) v = static_cast<float>(normal(rng, 0.0, stddev));
    } else if (ends_with(".running_var") || (ends_with(".bn.weight"))) {
      p->value.fill(1.0f);
    } else {
      p->value.fill(0.0f);
    }
    if (!p->grad.empty()) p->grad.fill(0.0f);
  }
}

Tensor SegmentationModel::forward(const Tensor& images, bool training, const ActivationSink* sink) {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels) {
    throw MismatchError("model expects [N," + std::to_string(spec_.in_channels) + ",H,W], got " +
                        shape_string(images.shape()));
  }
  const int h = images.dim(2);
  const int w = images.dim(3);
  const int stride = spec_.output_stride();
  if (h % stride != 0 || w % stride != 0) {
    throw MismatchError("input " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by the encoder output stride " + std::to_string(stride));
  }
  const ForwardContext ctx{training, sink};
  auto features = encoder_->forward(images, ctx);
  Tensor decoded = decoder_->forward(features, ctx);
  Tensor logits = head_->forward(decoded, ctx);
  upsampled_ = logits.dim(2) != h || logits.dim(3) != w;
  if (upsampled_) logits = upsample_->forward(logits, h, w);
  return logits;
}

void SegmentationModel::backward(const Tensor& grad_logits) {
  Tensor g = upsampled_ ? upsample_->backward(grad_logits) : grad_logits;
  g = head_->backward(g, true);
  auto grads = decoder_->backward(g);
  if (encoder_trainable_) encoder_->backward(std::move(grads));
}

void SegmentationModel::zero_grad() {
  for (auto* p : params_) {
    if (!p->grad.empty()) p->grad.fill(0.0f);
  }
}

void SegmentationModel::set_encoder_trainable(bool trainable) {
  encoder_trainable_ = trainable;
  for (auto* u : units_) {
    if (u->role() == Role::encoder) u->set_frozen(!trainable);
  }
}

Parameter* SegmentationModel::find_parameter(std::string_view name) const {
  for (auto* p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t SegmentationModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params_) {
    if (!p->buffer) n += p->value.size();
  }
  return n;
}

}  // namespace noisylab::models

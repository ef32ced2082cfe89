#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "noisylab/tensor.hpp"

namespace noisylab::models {

enum class Role { encoder, decoder, head, activation };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);

/// A named tensor owned by a layer. Buffers (normalization running
/// statistics) are exported with the weights but never optimized.
struct Parameter {
  std::string name;
  Role role = Role::encoder;
  Tensor value;
  Tensor grad;
  bool buffer = false;
  bool frozen = false;

  bool trainable() const noexcept { return !buffer && !frozen; }
};

/// Receives the post-activation output of every convolutional module.
using ActivationSink = std::function<void(const std::string& path, const Tensor& output)>;

/// Per-forward switches.
struct ForwardContext {
  bool training = false;
  const ActivationSink* sink = nullptr;
};

class Conv2d {
 public:
  Conv2d(std::string name, Role role, int in_channels, int out_channels, int kernel, int stride = 1, int padding = 0,
         int dilation = 1, bool bias = false);

  Tensor forward(const Tensor& x);
  /// Accumulates weight/bias gradients unless frozen; returns dL/dx when
  /// `input_grad` is set, an empty tensor otherwise.
  Tensor backward(const Tensor& dy, bool input_grad);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  Parameter& weight() noexcept { return weight_; }
  const Parameter& weight() const noexcept { return weight_; }
  bool has_bias() const noexcept { return has_bias_; }
  Parameter& bias() noexcept { return bias_; }
  void parameters(std::vector<Parameter*>& out);

  int output_size(int input) const { return (input + 2 * padding_ - dilation_ * (kernel_ - 1) - 1) / stride_ + 1; }

 private:
  void im2col(const float* x, int h, int w, float* col) const;
  void col2im(const float* col, int h, int w, float* dx) const;

  int in_, out_, kernel_, stride_, padding_, dilation_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d(std::string name, Role role, int channels, float momentum = 0.1f, float eps = 1e-5f);

  /// Batch statistics (and running-average updates) when `batch_stats`,
  /// running statistics otherwise.
  Tensor forward(const Tensor& x, bool batch_stats);
  Tensor backward(const Tensor& dy);
  void parameters(std::vector<Parameter*>& out);

  Parameter& running_mean() noexcept { return running_mean_; }
  Parameter& running_var() noexcept { return running_var_; }

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool batch_mode_ = false;
};

/// Convolution, optional batch normalization, optional ReLU: the unit the
/// analysis tools call a convolutional module.
class ConvUnit {
 public:
  struct Options {
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    bool batch_norm = true;
    bool relu = true;
    bool bias = false;
  };

  ConvUnit(std::string path, Role role, int in_channels, int out_channels, Options options);

  /// Records its output into the sink unless `capture` is off (owners that
  /// report a later tensor under this unit's path turn it off).
  Tensor forward(const Tensor& x, const ForwardContext& ctx, bool capture = true);
  Tensor backward(const Tensor& dy, bool input_grad);

  const std::string& path() const noexcept { return path_; }
  Role role() const noexcept { return role_; }
  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool frozen);
  Conv2d& conv() noexcept { return conv_; }
  const Conv2d& conv() const noexcept { return conv_; }
  void parameters(std::vector<Parameter*>& out);

 private:
  std::string path_;
  Role role_;
  Options options_;
  Conv2d conv_;
  std::vector<BatchNorm2d> bn_;  // zero or one
  Tensor output_;
  bool frozen_ = false;
};

/// Bilinear resampling with half-pixel centres (align_corners = false).
class Resize {
 public:
  Tensor forward(const Tensor& x, int out_h, int out_w);
  Tensor backward(const Tensor& dy) const;

 private:
  struct Tap {
    int i0, i1;
    float w1;
  };
  static std::vector<Tap> taps(int in, int out);
  Shape in_shape_;
  std::vector<Tap> ty_, tx_;
};

/// Average pooling onto a fixed grid; bins span [floor(i*H/G), ceil((i+1)*H/G)).
class AdaptiveAvgPool {
 public:
  explicit AdaptiveAvgPool(int grid) : grid_(grid) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  int grid_;
  Shape in_shape_;
};

Tensor relu(const Tensor& x);
/// dy masked where the forward output was not positive.
Tensor relu_backward(const Tensor& dy, const Tensor& output);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& channels);

}  // namespace noisylab::models

#include "noisylab/models/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "noisylab/common.hpp"

namespace noisylab::models {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_nchw(const Tensor& x, int channels, const std::string& who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw MismatchError(who + ": expected [N," + std::to_string(channels) + ",H,W], got " + shape_string(x.shape()));
  }
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::encoder: return "encoder";
    case Role::decoder: return "decoder";
    case Role::head: return "head";
    case Role::activation: return "activation";
  }
  return "encoder";
}

Role parse_role(std::string_view name) {
  if (name == "encoder") return Role::encoder;
  if (name == "decoder") return Role::decoder;
  if (name == "head") return Role::head;
  if (name == "activation") return Role::activation;
  throw MismatchError("unknown role '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, Role role, int in_channels, int out_channels, int kernel, int stride, int padding,
               int dilation, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      dilation_(dilation),
      has_bias_(bias) {
  if (in_ < 1 || out_ < 1 || kernel_ < 1 || stride_ < 1 || dilation_ < 1 || padding_ < 0) {
    throw ConfigError(name, "invalid convolution geometry");
  }
  const Shape wshape{out_, in_, kernel_, kernel_};
  weight_ = Parameter{name + ".weight", role, Tensor(wshape), Tensor(wshape)};
  if (has_bias_) bias_ = Parameter{name + ".bias", role, Tensor({out_}), Tensor({out_})};
}

void Conv2d::parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::im2col(const float* x, int h, int w, float* col) const {
  const int ho = output_size(h);
  const int wo = output_size(w);
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        float* dst = col + static_cast<std::size_t>((c * kernel_ + ky) * kernel_ + kx) * plane;
        const int off = kx * dilation_ - padding_;
        for (int oy = 0; oy < ho; ++oy) {
          float* row = dst + static_cast<std::size_t>(oy) * wo;
          const int iy = oy * stride_ - padding_ + ky * dilation_;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + wo, 0.0f);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          if (stride_ == 1) {
            const int lo = std::clamp(-off, 0, wo);
            const int hi = std::clamp(w - off, lo, wo);
            std::fill(row, row + lo, 0.0f);
            std::memcpy(row + lo, src + lo + off, sizeof(float) * static_cast<std::size_t>(hi - lo));
            std::fill(row + hi, row + wo, 0.0f);
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ + off;
              row[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, int h, int w, float* dx) const {
  const int ho = output_size(h);
  const int wo = output_size(w);
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const float* src = col + static_cast<std::size_t>((c * kernel_ + ky) * kernel_ + kx) * plane;
        const int off = kx * dilation_ - padding_;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - padding_ + ky * dilation_;
          if (iy < 0 || iy >= h) continue;
          const float* row = src + static_cast<std::size_t>(oy) * wo;
          float* dst = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          if (stride_ == 1) {
            const int lo = std::clamp(-off, 0, wo);
            const int hi = std::clamp(w - off, lo, wo);
            for (int ox = lo; ox < hi; ++ox) dst[ox + off] += row[ox];
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ + off;
              if (ix >= 0 && ix < w) dst[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  require_nchw(x, in_, weight_.name);
  input_ = x;
  const int n = x.dim(0);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int ho = output_size(h);
  const int wo = output_size(w);
  if (ho < 1 || wo < 1) throw MismatchError(weight_.name + ": input too small");
  const int k = in_ * kernel_ * kernel_;
  const int p = ho * wo;
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;

  Tensor y({n, out_, ho, wo});
  const ConstMatMap wm(weight_.value.data(), out_, k);
  FloatBuffer col(direct ? 0 : static_cast<std::size_t>(k) * p);
  for (int s = 0; s < n; ++s) {
    const float* xs = x.data() + static_cast<std::size_t>(s) * in_ * h * w;
    if (!direct) im2col(xs, h, w, col.data());
    const ConstMatMap cm(direct ? xs : col.data(), k, p);
    MatMap ym(y.data() + static_cast<std::size_t>(s) * out_ * p, out_, p);
    ym.noalias() = wm * cm;
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) ym.row(o).array() += bias_.value[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool input_grad) {
  const bool weight_grad = !weight_.frozen;
  if (!weight_grad && !input_grad) return {};
  const int n = input_.dim(0);
  const int h = input_.dim(2);
  const int w = input_.dim(3);
  const int ho = output_size(h);
  const int wo = output_size(w);
  const int k = in_ * kernel_ * kernel_;
  const int p = ho * wo;
  if (dy.shape() != Shape{n, out_, ho, wo}) throw MismatchError(weight_.name + ": gradient shape mismatch");
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;

  Tensor dx;
  if (input_grad) dx = Tensor(input_.shape());
  const ConstMatMap wm(weight_.value.data(), out_, k);
  MatMap dwm(weight_.grad.data(), out_, k);
  FloatBuffer col(direct ? 0 : static_cast<std::size_t>(k) * p);
  RowMat dcol;
  for (int s = 0; s < n; ++s) {
    const ConstMatMap dym(dy.data() + static_cast<std::size_t>(s) * out_ * p, out_, p);
    const float* xs = input_.data() + static_cast<std::size_t>(s) * in_ * h * w;
    if (weight_grad) {
      if (!direct) im2col(xs, h, w, col.data());
      const ConstMatMap cm(direct ? xs : col.data(), k, p);
      dwm.noalias() += dym * cm.transpose();
      if (has_bias_) {
        for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += dym.row(o).sum();
      }
    }
    if (input_grad) {
      float* dxs = dx.data() + static_cast<std::size_t>(s) * in_ * h * w;
      if (direct) {
        MatMap dxm(dxs, in_, p);
        dxm.noalias() = wm.transpose() * dym;
      } else {
        dcol.noalias() = wm.transpose() * dym;
        col2im(dcol.data(), h, w, dxs);
      }
    }
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, Role role, int channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = Parameter{name + ".weight", role, Tensor({channels}, 1.0f), Tensor({channels})};
  beta_ = Parameter{name + ".bias", role, Tensor({channels}), Tensor({channels})};
  running_mean_ = Parameter{name + ".running_mean", role, Tensor({channels}), {}, true};
  running_var_ = Parameter{name + ".running_var", role, Tensor({channels}, 1.0f), {}, true};
}

void BatchNorm2d::parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool batch_stats) {
  require_nchw(x, channels_, gamma_.name);
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  batch_mode_ = batch_stats;
  xhat_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double mean;
    double var;
    if (batch_stats) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s) {
        const float* p = x.data() + (static_cast<std::size_t>(s) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (int s = 0; s < n; ++s) {
        const float* p = x.data() + (static_cast<std::size_t>(s) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      auto& rm = running_mean_.value[static_cast<std::size_t>(c)];
      auto& rv = running_var_.value[static_cast<std::size_t>(c)];
      rm = static_cast<float>((1.0 - momentum_) * rm + momentum_ * mean);
      rv = static_cast<float>((1.0 - momentum_) * rv + momentum_ * unbiased);
    } else {
      mean = running_mean_.value[static_cast<std::size_t>(c)];
      var = running_var_.value[static_cast<std::size_t>(c)];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[static_cast<std::size_t>(c)] = inv;
    const float g = gamma_.value[static_cast<std::size_t>(c)];
    const float b = beta_.value[static_cast<std::size_t>(c)];
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = static_cast<float>((x[base + i] - mean) * inv);
        xhat_[base + i] = xh;
        y[base + i] = g * xh + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const int n = dy.dim(0);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  Tensor dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dgamma += static_cast<double>(dy[base + i]) * xhat_[base + i];
        dbeta += dy[base + i];
      }
    }
    if (!gamma_.frozen) {
      gamma_.grad[static_cast<std::size_t>(c)] += static_cast<float>(dgamma);
      beta_.grad[static_cast<std::size_t>(c)] += static_cast<float>(dbeta);
    }
    const double scale = gamma_.value[static_cast<std::size_t>(c)] * inv_std_[static_cast<std::size_t>(c)];
    for (int s = 0; s < n; ++s) {
      const std::size_t base = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (batch_mode_) {
          dx[base + i] = static_cast<float>(scale * (dy[base + i] - dbeta / count - xhat_[base + i] * dgamma / count));
        } else {
          dx[base + i] = static_cast<float>(scale * dy[base + i]);
        }
      }
    }
  }
  return dx;
}

// -------------------------------------------------------------- ConvUnit

ConvUnit::ConvUnit(std::string path, Role role, int in_channels, int out_channels, Options options)
    : path_(std::move(path)),
      role_(role),
      options_(options),
      conv_(path_, role, in_channels, out_channels, options.kernel, options.stride,
            options.dilation * (options.kernel / 2), options.dilation, options.bias) {
  if (options.batch_norm) bn_.emplace_back(path_ + ".bn", role, out_channels);
}

void ConvUnit::parameters(std::vector<Parameter*>& out) {
  conv_.parameters(out);
  for (auto& bn : bn_) bn.parameters(out);
}

void ConvUnit::set_frozen(bool frozen) {
  frozen_ = frozen;
  std::vector<Parameter*> params;
  parameters(params);
  for (auto* p : params) p->frozen = frozen;
}

Tensor ConvUnit::forward(const Tensor& x, const ForwardContext& ctx, bool capture) {
  Tensor y = conv_.forward(x);
  if (!bn_.empty()) y = bn_.front().forward(y, ctx.training && !frozen_);
  if (options_.relu) y = relu(y);
  output_ = y;
  if (capture && ctx.sink && *ctx.sink) (*ctx.sink)(path_, y);
  return y;
}

Tensor ConvUnit::backward(const Tensor& dy, bool input_grad) {
  Tensor g = options_.relu ? relu_backward(dy, output_) : dy;
  if (!bn_.empty()) g = bn_.front().backward(g);
  return conv_.backward(g, input_grad);
}

// ---------------------------------------------------------------- Resize

std::vector<Resize::Tap> Resize::taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {i0, i1, static_cast<float>(src - i0)};
  }
  return t;
}

Tensor Resize::forward(const Tensor& x, int out_h, int out_w) {
  in_shape_ = x.shape();
  const int n = x.dim(0);
  const int c = x.dim(1);
  const int h = x.dim(2);
  const int w = x.dim(3);
  ty_ = taps(h, out_h);
  tx_ = taps(w, out_w);
  Tensor y({n, c, out_h, out_w});
  for (int p = 0; p < n * c; ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
    float* dst = y.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty_[static_cast<std::size_t>(oy)];
      const float* r0 = src + static_cast<std::size_t>(a.i0) * w;
      const float* r1 = src + static_cast<std::size_t>(a.i1) * w;
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx_[static_cast<std::size_t>(ox)];
        const float top = r0[b.i0] + b.w1 * (r0[b.i1] - r0[b.i0]);
        const float bot = r1[b.i0] + b.w1 * (r1[b.i1] - r1[b.i0]);
        dst[static_cast<std::size_t>(oy) * out_w + ox] = top + a.w1 * (bot - top);
      }
    }
  }
  return y;
}

Tensor Resize::backward(const Tensor& dy) const {
  const int h = in_shape_[2];
  const int w = in_shape_[3];
  const int out_h = dy.dim(2);
  const int out_w = dy.dim(3);
  Tensor dx(in_shape_);
  for (int p = 0; p < in_shape_[0] * in_shape_[1]; ++p) {
    const float* g = dy.data() + static_cast<std::size_t>(p) * out_h * out_w;
    float* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty_[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx_[static_cast<std::size_t>(ox)];
        const float v = g[static_cast<std::size_t>(oy) * out_w + ox];
        const float vt = v * (1.0f - a.w1);
        const float vb = v * a.w1;
        dst[static_cast<std::size_t>(a.i0) * w + b.i0] += vt * (1.0f - b.w1);
        dst[static_cast<std::size_t>(a.i0) * w + b.i1] += vt * b.w1;
        dst[static_cast<std::size_t>(a.i1) * w + b.i0] += vb * (1.0f - b.w1);
        dst[static_cast<std::size_t>(a.i1) * w + b.i1] += vb * b.w1;
      }
    }
  }
  return dx;
}

// ------------------------------------------------------- AdaptiveAvgPool

Tensor AdaptiveAvgPool::forward(const Tensor& x) {
  in_shape_ = x.shape();
  const int h = x.dim(2);
  const int w = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), grid_, grid_});
  for (int p = 0; p < x.dim(0) * x.dim(1); ++p) {
    const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
    for (int gy = 0; gy < grid_; ++gy) {
      const int y0 = gy * h / grid_;
      const int y1 = ((gy + 1) * h + grid_ - 1) / grid_;
      for (int gx = 0; gx < grid_; ++gx) {
        const int x0 = gx * w / grid_;
        const int x1 = ((gx + 1) * w + grid_ - 1) / grid_;
        double sum = 0.0;
        for (int yy = y0; yy < y1; ++yy) {
          for (int xx = x0; xx < x1; ++xx) sum += src[static_cast<std::size_t>(yy) * w + xx];
        }
        y[(static_cast<std::size_t>(p) * grid_ + gy) * grid_ + gx] = static_cast<float>(sum / ((y1 - y0) * (x1 - x0)));
      }
    }
  }
  return y;
}

Tensor AdaptiveAvgPool::backward(const Tensor& dy) const {
  const int h = in_shape_[2];
  const int w = in_shape_[3];
  Tensor dx(in_shape_);
  for (int p = 0; p < in_shape_[0] * in_shape_[1]; ++p) {
    float* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
    for (int gy = 0; gy < grid_; ++gy) {
      const int y0 = gy * h / grid_;
      const int y1 = ((gy + 1) * h + grid_ - 1) / grid_;
      for (int gx = 0; gx < grid_; ++gx) {
        const int x0 = gx * w / grid_;
        const int x1 = ((gx + 1) * w + grid_ - 1) / grid_;
        const float g = dy[(static_cast<std::size_t>(p) * grid_ + gy) * grid_ + gx] /
                        static_cast<float>((y1 - y0) * (x1 - x0));
        for (int yy = y0; yy < y1; ++yy) {
          for (int xx = x0; xx < x1; ++xx) dst[static_cast<std::size_t>(yy) * w + xx] += g;
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------- utilities

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& output) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(output[i] > 0.0f)) dx[i] = 0.0f;
  }
  return dx;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  const Tensor& first = *parts.front();
  const int n = first.dim(0);
  const int h = first.dim(2);
  const int w = first.dim(3);
  int channels = 0;
  for (const auto* p : parts) {
    if (p->dim(0) != n || p->dim(2) != h || p->dim(3) != w) {
      throw MismatchError("concat: " + shape_string(p->shape()) + " vs " + shape_string(first.shape()));
    }
    channels += p->dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor y({n, channels, h, w});
  for (int s = 0; s < n; ++s) {
    float* dst = y.data() + static_cast<std::size_t>(s) * channels * plane;
    for (const auto* p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p->dim(1)) * plane;
      std::memcpy(dst, p->data() + static_cast<std::size_t>(s) * chunk, chunk * sizeof(float));
      dst += chunk;
    }
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& channels) {
  const int n = x.dim(0);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Tensor> out;
  for (int c : channels) out.emplace_back(Shape{n, c, h, w});
  for (int s = 0; s < n; ++s) {
    const float* src = x.data() + static_cast<std::size_t>(s) * x.dim(1) * plane;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const std::size_t chunk = static_cast<std::size_t>(channels[k]) * plane;
      std::memcpy(out[k].data() + static_cast<std::size_t>(s) * chunk, src, chunk * sizeof(float));
      src += chunk;
    }
  }
  return out;
}

}  // namespace noisylab::models

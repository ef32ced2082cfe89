#include "noisylab/training/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace noisylab::training {

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw std::out_of_range("cosine_lr: need 0 <= step <= total_steps, total_steps >= 1");
  }
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

Adam::Adam(std::vector<models::Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto* p : params_) {
    m_.emplace_back(p->buffer ? 0 : p->value.size(), 0.0f);
    v_.emplace_back(p->buffer ? 0 : p->value.size(), 0.0f);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    if (!p->trainable()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    float* w = p->value.data();
    const float* g = p->grad.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double grad = g[i] + options_.weight_decay * w[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * grad);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * grad * grad);
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

double clip_grad_norm(const std::vector<models::Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->trainable()) continue;
    for (float g : p->grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (auto* p : params) {
      if (!p->trainable()) continue;
      for (auto& g : p->grad.values()) g *= scale;
    }
  }
  return norm;
}

}  // namespace noisylab::training

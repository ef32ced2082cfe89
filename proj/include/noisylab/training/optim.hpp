#pragma once

#include <vector>

#include "noisylab/models/layers.hpp"

namespace noisylab::training {

/// lr = base_lr * (1 + cos(pi * step / total_steps)) / 2; no warmup, no restarts.
double cosine_lr(long step, long total_steps, double base_lr);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  ///< L2 term added to the gradient
};

/// Adam with bias correction. Buffers and frozen parameters are skipped and
/// keep their moment estimates.
class Adam {
 public:
  Adam(std::vector<models::Parameter*> params, AdamOptions options = {});
  void step(double lr);
  long steps() const noexcept { return t_; }

 private:
  std::vector<models::Parameter*> params_;
  AdamOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

/// Scales trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before scaling.
double clip_grad_norm(const std::vector<models::Parameter*>& params, double max_norm);

}  // namespace noisylab::training

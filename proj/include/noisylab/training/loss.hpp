#pragma once

#include <cstdint>
#include <span>

#include "noisylab/tensor.hpp"

namespace noisylab::training {

struct LossWeights {
  double cross_entropy = 1.0;
  double dice = 1.0;
};

struct LossResult {
  double value = 0.0;
  double cross_entropy = 0.0;
  double dice = 0.0;
  Tensor grad;  ///< dL/dlogits, same shape as the logits
};

/// w_ce * mean pixel cross-entropy + w_dice * soft Dice loss.
///
/// Dice = 1 - mean_k (2 sum p_k y_k + s) / (sum p_k + sum y_k + s) over the
/// classes present in `targets`, with softmax probabilities p, one-hot y and
/// sums over the whole batch. `targets` holds N*H*W class indices.
/// Throws NumericalError on non-finite logits.
LossResult combined_loss(const Tensor& logits, std::span<const std::uint8_t> targets, const LossWeights& weights = {},
                         double smoothing = 1.0);

}  // namespace noisylab::training

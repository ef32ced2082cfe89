#include "noisylab/training/loss.hpp"

#include <cmath>
#include <vector>

#include "noisylab/common.hpp"

namespace noisylab::training {

LossResult combined_loss(const Tensor& logits, std::span<const std::uint8_t> targets, const LossWeights& weights,
                         double smoothing) {
  if (logits.rank() != 4) throw MismatchError("logits must be [N,K,H,W]");
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  const std::size_t pixels = static_cast<std::size_t>(n) * plane;
  if (targets.size() != pixels) throw MismatchError("target count does not match logits");
  if (!all_finite(logits.values())) throw NumericalError("non-finite logits");

  // Softmax probabilities, kept in double.
  std::vector<double> prob(static_cast<std::size_t>(k) * pixels);
  const auto at = [&](int cls, std::size_t pixel) -> double& {
    return prob[static_cast<std::size_t>(cls) * pixels + pixel];
  };
  double ce = 0.0;
  for (int s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t pix = static_cast<std::size_t>(s) * plane + i;
      const auto logit = [&](int c) { return static_cast<double>(logits[(static_cast<std::size_t>(s) * k + c) * plane + i]); };
      double mx = logit(0);
      for (int c = 1; c < k; ++c) mx = std::max(mx, logit(c));
      double z = 0.0;
      for (int c = 0; c < k; ++c) z += std::exp(logit(c) - mx);
      const double log_z = mx + std::log(z);
      for (int c = 0; c < k; ++c) at(c, pix) = std::exp(logit(c) - log_z);
      const int t = targets[pix];
      if (t >= k) throw MismatchError("target class " + std::to_string(t) + " >= class count " + std::to_string(k));
      ce += log_z - logit(t);
    }
  }
  ce /= static_cast<double>(pixels);

  std::vector<double> inter(static_cast<std::size_t>(k), 0.0);
  std::vector<double> psum(static_cast<std::size_t>(k), 0.0);
  std::vector<double> ysum(static_cast<std::size_t>(k), 0.0);
  for (std::size_t pix = 0; pix < pixels; ++pix) {
    const int t = targets[pix];
    ysum[static_cast<std::size_t>(t)] += 1.0;
    inter[static_cast<std::size_t>(t)] += at(t, pix);
    for (int c = 0; c < k; ++c) psum[static_cast<std::size_t>(c)] += at(c, pix);
  }
  int present = 0;
  double dice_mean = 0.0;
  for (int c = 0; c < k; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (ysum[ci] == 0.0) continue;
    ++present;
    dice_mean += (2.0 * inter[ci] + smoothing) / (psum[ci] + ysum[ci] + smoothing);
  }
  dice_mean /= present;
  const double dice = 1.0 - dice_mean;

  LossResult result;
  result.cross_entropy = ce;
  result.dice = dice;
  result.value = weights.cross_entropy * ce + weights.dice * dice;
  result.grad = Tensor(logits.shape());

  // dL/dp per class for the Dice term, then through the softmax Jacobian.
  std::vector<double> denom(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    denom[ci] = psum[ci] + ysum[ci] + smoothing;
  }
  std::vector<double> g(static_cast<std::size_t>(k));
  for (int s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t pix = static_cast<std::size_t>(s) * plane + i;
      const int t = targets[pix];
      double dot = 0.0;
      for (int c = 0; c < k; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        double gc = 0.0;
        if (ysum[ci] > 0.0 && weights.dice != 0.0) {
          const double y = c == t ? 1.0 : 0.0;
          const double num = 2.0 * inter[ci] + smoothing;
          gc = -weights.dice / present * (2.0 * y * denom[ci] - num) / (denom[ci] * denom[ci]);
        }
        g[ci] = gc;
        dot += at(c, pix) * gc;
      }
      for (int c = 0; c < k; ++c) {
        const double p = at(c, pix);
        const double y = c == t ? 1.0 : 0.0;
        const double grad = p * (g[static_cast<std::size_t>(c)] - dot) +
                            weights.cross_entropy * (p - y) / static_cast<double>(pixels);
        result.grad[(static_cast<std::size_t>(s) * k + c) * plane + i] = static_cast<float>(grad);
      }
    }
  }
  return result;
}

}  // namespace noisylab::training

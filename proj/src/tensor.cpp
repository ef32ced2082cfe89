#include "noisylab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "noisylab/common.hpp"

namespace noisylab {

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

double normal(Rng& rng, double mean, double stddev) {
  // Box-Muller on our own uniform mapping so draws do not depend on the
  // standard library's distribution implementation.
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_numel(shape_)) {
    throw MismatchError("tensor payload of " + std::to_string(data_.size()) + " values does not match shape " +
                        shape_string(shape_));
  }
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw MismatchError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::sample(int n) const {
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_numel(inner);
  std::vector<float> values(data_.begin() + static_cast<std::ptrdiff_t>(stride * n),
                            data_.begin() + static_cast<std::ptrdiff_t>(stride * (n + 1)));
  return Tensor(std::move(inner), std::move(values));
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw MismatchError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::transform(a.data(), a.data() + a.size(), b.data(), a.data(), std::plus<>());
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace noisylab

#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace noisylab {

/// 64-byte aligned storage: vectorized reductions then sum in the same
/// order on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. Four-dimensional tensors are laid out
/// [N, C, H, W]; feature cubes are [C, H, W].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  /// Copy of the values as a plain vector.
  std::vector<float> to_vector() const { return {data_.begin(), data_.end()}; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // [N,C,H,W] accessors
  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(float value);
  void reshape(Shape shape);
  /// Copy of sample `n` of a batched tensor, with the leading axis dropped.
  Tensor sample(int n) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  FloatBuffer data_;
};

/// a += b, elementwise; shapes must match.
void add_inplace(Tensor& a, const Tensor& b);
bool all_finite(std::span<const float> values);

}  // namespace noisylab

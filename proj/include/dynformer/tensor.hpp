#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace dynformer {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorized Eigen kernels peel a scalar head
// whose length depends on the start address, so unaligned buffers would make
// results depend on where the heap happened to place them.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using TensorStorage = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Model activations use the layout
// [batch, N1, N2, channels]; complex data carries a trailing axis of
// extent 2 holding interleaved (real, imag) pairs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  // Copy of the values.
  std::vector<double> vec() const { return {data_.begin(), data_.end()}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  // Same data, new extents; the element count must agree.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  // Complex view helpers for tensors with a trailing (re, im) axis.
  bool is_complex() const { return !shape_.empty() && shape_.back() == 2; }
  std::complex<double> complex_at(std::size_t pair_index) const {
    return {data_[2 * pair_index], data_[2 * pair_index + 1]};
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  TensorStorage data_;
};

// Elementwise helpers used by tests, solvers and the harness. They are not
// recorded on any tape.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace dynformer

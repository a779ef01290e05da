#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mfq::nn {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorized kernels pick their summation
/// order from buffer alignment, so a fixed alignment keeps results
/// independent of heap history (e.g. across checkpoint resume).
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

using RealVec = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major array of doubles (NCHW for images, NF for features).
struct Tensor {
  Shape shape;
  RealVec data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values);

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  std::span<double> values() noexcept { return data; }
  std::span<const double> values() const noexcept { return data; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  /// Element (n, c, y, x) of a rank-4 tensor.
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((n * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  void fill(double v);
  double max_abs() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A trainable tensor: full-precision master value plus its gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  ///< weight decay applies

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), decay(wd) {}
  void zero_grad() { grad.fill(0.0); }
};

}  // namespace mfq::nn

#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace aot {

/// 64-byte aligned storage. Eigen's vectorized reductions peel scalars up to
/// the first aligned address, so without a fixed alignment the summation order,
/// and therefore the last bits of a result, would depend on where malloc put
/// the buffer.
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
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// NCHW extents of a rank-4 tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 double tensor in NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Pointer to the start of sample `n`.
  double* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }
  const double* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * sample_size();
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(shape_.c) * shape_.plane(); }

  void fill(double v);
  void zero() { fill(0.0); }

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  AlignedBuffer data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor& operator+=(Tensor& a, const Tensor& b);

/// 1 - t, elementwise.
Tensor one_minus(const Tensor& t);

/// Concatenates along the channel axis. All inputs share n, h, w.
Tensor concat_channels(std::span<const Tensor> parts);
/// Channels [begin, begin + count) of `t`.
Tensor slice_channels(const Tensor& t, int begin, int count);
/// Samples [begin, begin + count) of `t`.
Tensor slice_batch(const Tensor& t, int begin, int count);
Tensor concat_batch(std::span<const Tensor> parts);

/// Mean over non-overlapping factor x factor blocks.
Tensor area_downsample(const Tensor& t, int factor);

double sum(const Tensor& t);
double mean(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace aot

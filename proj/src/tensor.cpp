#include "aot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aot/error.hpp"

namespace aot {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

namespace {

template <typename Op>
Tensor zip(const Tensor& a, const Tensor& b, const char* what, Op op) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor operator-(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor operator*(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor operator*(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}
Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add-assign");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Tensor one_minus(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = 1.0 - t[i];
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts[0].shape();
  int channels = 0;
  for (const auto& p : parts) {
    if (p.n() != s.n || p.h() != s.h || p.w() != s.w) {
      throw ShapeError("concat_channels: " + p.shape().str() + " vs " + s.str());
    }
    channels += p.c();
  }
  s.c = channels;
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    double* dst = out.sample(n);
    for (const auto& p : parts) {
      const double* src = p.sample(n);
      dst = std::copy(src, src + p.sample_size(), dst);
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.c()) {
    throw ShapeError("slice_channels out of range");
  }
  Tensor out({t.n(), count, t.h(), t.w()});
  const std::size_t plane = t.shape().plane();
  for (int n = 0; n < t.n(); ++n) {
    const double* src = t.sample(n) + static_cast<std::size_t>(begin) * plane;
    std::copy(src, src + count * plane, out.sample(n));
  }
  return out;
}

Tensor slice_batch(const Tensor& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.n()) {
    throw ShapeError("slice_batch out of range");
  }
  Tensor out({count, t.c(), t.h(), t.w()});
  std::copy(t.sample(begin), t.sample(begin) + count * t.sample_size(), out.data());
  return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape s = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw ShapeError("concat_batch: " + p.shape().str() + " vs " + s.str());
    }
    total += p.n();
  }
  s.n = total;
  Tensor out(s);
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

Tensor area_downsample(const Tensor& t, int factor) {
  if (factor <= 0 || t.h() % factor != 0 || t.w() % factor != 0) {
    throw ShapeError("spatial size " + t.shape().str() + " not divisible by " +
                     std::to_string(factor));
  }
  Tensor out({t.n(), t.c(), t.h() / factor, t.w() / factor});
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int oy = 0; oy < out.h(); ++oy) {
        for (int ox = 0; ox < out.w(); ++ox) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) {
              acc += t.at(n, c, oy * factor + dy, ox * factor + dx);
            }
          }
          out.at(n, c, oy, ox) = acc * inv;
        }
      }
    }
  }
  return out;
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return acc;
}

double mean(const Tensor& t) { return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size()); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace aot

#include "aot/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "aot/error.hpp"
#include "aot/nn.hpp"

namespace aot {

namespace {

constexpr int kMaxAttempts = 64;

std::string percent(double v) {
  std::ostringstream os;
  const double p = v * 100.0;
  if (std::abs(p - std::round(p)) < 1e-9) {
    os << static_cast<long>(std::round(p));
  } else {
    os << p;
  }
  return os.str();
}

class StrokeCanvas {
 public:
  StrokeCanvas(int h, int w) : h_(h), w_(w), bits_(std::size_t(h) * w, 0) {}

  void disc(double cy, double cx, double r) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(h_ - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(w_ - 1, static_cast<int>(std::ceil(cx + r)));
    const double r2 = std::max(r * r, 0.25);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dy = y - cy;
        const double dx = x - cx;
        if (dy * dy + dx * dx <= r2) set(y, x);
      }
    }
  }

  void rect(int y, int x, int h, int w) {
    for (int yy = std::max(0, y); yy < std::min(h_, y + h); ++yy) {
      for (int xx = std::max(0, x); xx < std::min(w_, x + w); ++xx) set(yy, xx);
    }
  }

  long count() const { return count_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

 private:
  void set(int y, int x) {
    auto& b = bits_[std::size_t(y) * w_ + x];
    if (!b) {
      b = 1;
      ++count_;
    }
  }

  int h_;
  int w_;
  std::vector<std::uint8_t> bits_;
  long count_ = 0;
};

// One rejection-sampling attempt. Stamps brush discs along random walks and
// stops as soon as the hole count reaches the target.
bool try_fill(int h, int w, const RatioBucket& bucket, Rng& rng, int attempt,
              std::vector<std::uint8_t>& out) {
  const double total = static_cast<double>(h) * w;
  const long low_count = static_cast<long>(std::ceil(bucket.low * total - 1e-9));
  const long high_count = static_cast<long>(std::floor(bucket.high * total + 1e-9));
  if (high_count < low_count) return false;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long target = low_count + static_cast<long>(unit(rng) * ((high_count - low_count) / 2.0));

  // A single disc may not overshoot past high_count.
  const double slack = std::max(1.0, (high_count - target) / 2.0);
  double r_max = std::sqrt(slack / std::numbers::pi);
  r_max = std::min(r_max, std::min(h, w) / 8.0);
  r_max /= 1.0 + attempt / 4.0;
  r_max = std::max(r_max, 0.5);

  StrokeCanvas canvas(h, w);
  const int side = std::min(h, w);
  for (int strokes = 0; canvas.count() < target && strokes < 100000; ++strokes) {
    if (unit(rng) < 0.2) {
      const int rh = std::max(1, static_cast<int>(side * (0.1 + 0.2 * unit(rng))));
      const int rw = std::max(1, static_cast<int>(side * (0.1 + 0.2 * unit(rng))));
      if (static_cast<long>(rh) * rw <= target - canvas.count()) {
        canvas.rect(static_cast<int>(unit(rng) * (h - rh + 1)),
                    static_cast<int>(unit(rng) * (w - rw + 1)), rh, rw);
      }
      continue;
    }
    const double r = std::max(0.5, r_max * (1.0 / 3.0 + 2.0 / 3.0 * unit(rng)));
    double y = unit(rng) * (h - 1);
    double x = unit(rng) * (w - 1);
    double angle = unit(rng) * 2.0 * std::numbers::pi;
    const int vertices = 4 + static_cast<int>(unit(rng) * 9);
    for (int v = 0; v < vertices && canvas.count() < target; ++v) {
      angle += (unit(rng) - 0.5) * std::numbers::pi;
      const double len = side * (1.0 / 16.0 + unit(rng) * (3.0 / 16.0));
      const double step = std::max(0.5, r / 2.0);
      for (double t = 0.0; t <= len && canvas.count() < target; t += step) {
        canvas.disc(y, x, r);
        y = std::clamp(y + step * std::sin(angle), 0.0, h - 1.0);
        x = std::clamp(x + step * std::cos(angle), 0.0, w - 1.0);
      }
    }
  }
  const long count = canvas.count();
  if (count < low_count || count > high_count) return false;
  out = canvas.bits();
  return true;
}

}  // namespace

void RatioBucket::validate() const {
  if (!(low >= 0.0 && low < 1.0 && high > 0.0 && high <= 1.0 && low < high)) {
    std::ostringstream os;
    os << "invalid ratio bucket [" << low << ", " << high << "]";
    throw Error(ErrorCode::kInvalidArgument, os.str());
  }
}

std::string RatioBucket::label() const { return percent(low) + "-" + percent(high) + "%"; }

std::vector<RatioBucket> standard_buckets() {
  return {{0.01, 0.1}, {0.1, 0.2}, {0.2, 0.3}, {0.3, 0.4}, {0.4, 0.5}, {0.5, 0.6}};
}

std::vector<RatioBucket> parse_buckets(const std::string& text) {
  if (text == "paper" || text == "standard") return standard_buckets();
  std::vector<RatioBucket> out;
  std::stringstream list(text);
  std::string item;
  while (std::getline(list, item, ',')) {
    const bool pct = !item.empty() && item.back() == '%';
    if (pct) item.pop_back();
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) throw ConfigError("bad bucket '" + item + "'");
    RatioBucket b;
    try {
      b.low = std::stod(item.substr(0, dash));
      b.high = std::stod(item.substr(dash + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad bucket '" + item + "'");
    }
    if (pct) {
      b.low /= 100.0;
      b.high /= 100.0;
    }
    b.validate();
    out.push_back(b);
  }
  if (out.empty()) throw ConfigError("empty bucket list");
  return out;
}

Tensor generate_free_form_mask(int height, int width, const RatioBucket& bucket,
                               std::uint64_t seed) {
  if (height < 32 || width < 32) {
    throw Error(ErrorCode::kInvalidArgument, "mask size must be at least 32x32");
  }
  bucket.validate();
  // Large holes are drawn as their complement so the strokes mark known pixels.
  const bool invert = bucket.low > 0.5;
  const RatioBucket draw = invert ? RatioBucket{1.0 - bucket.high, 1.0 - bucket.low} : bucket;

  std::vector<std::uint8_t> bits;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt),
                     (static_cast<std::uint64_t>(height) << 32) | static_cast<std::uint32_t>(width)));
    if (try_fill(height, width, draw, rng, attempt, bits)) {
      Tensor mask({1, 1, height, width});
      for (std::size_t i = 0; i < bits.size(); ++i) mask[i] = (bits[i] != 0) != invert ? 1.0 : 0.0;
      return mask;
    }
  }
  throw Error(ErrorCode::kUnreachableBucket,
              "cannot hit bucket " + bucket.label() + " at " + std::to_string(height) + "x" +
                  std::to_string(width));
}

double compute_hole_ratio(const Tensor& mask) {
  if (mask.empty()) return 0.0;
  std::size_t holes = 0;
  for (double v : mask.values()) holes += v == 1.0 ? 1 : 0;
  return static_cast<double>(holes) / static_cast<double>(mask.size());
}

void validate_mask(const Tensor& mask) {
  if (mask.c() != 1) throw ShapeError("mask must have one channel, got " + mask.shape().str());
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorCode::kInvalidArgument, "mask is not binary");
  }
}

std::vector<double> gaussian_kernel_1d(int kernel_size, double sigma) {
  if (kernel_size < 1) throw Error(ErrorCode::kInvalidArgument, "kernel size must be positive");
  if (sigma <= 0.0) sigma = kernel_size / 6.0;
  const int taps = kernel_size | 1;
  const int radius = taps / 2;
  std::vector<double> k(taps);
  double total = 0.0;
  for (int i = 0; i < taps; ++i) {
    const double d = i - radius;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Tensor soft_patch_label(const Tensor& mask, int downsample_factor, int kernel_size, double sigma) {
  if (mask.c() != 1) throw ShapeError("mask must have one channel");
  if (downsample_factor <= 0 || mask.h() % downsample_factor || mask.w() % downsample_factor) {
    throw ShapeError("mask " + mask.shape().str() + " not divisible by " +
                     std::to_string(downsample_factor));
  }
  const auto k = gaussian_kernel_1d(kernel_size, sigma);
  const int radius = static_cast<int>(k.size()) / 2;
  const int h = mask.h();
  const int w = mask.w();
  const Tensor known = one_minus(mask);
  Tensor horiz(known.shape());
  Tensor blurred(known.shape());
  for (int n = 0; n < mask.n(); ++n) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += k[t + radius] * known.at(n, 0, y, reflect_index(x + t, w));
        }
        horiz.at(n, 0, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += k[t + radius] * horiz.at(n, 0, reflect_index(y + t, h), x);
        }
        blurred.at(n, 0, y, x) = acc;
      }
    }
  }
  Tensor label = area_downsample(blurred, downsample_factor);
  for (double& v : label.values()) v = std::clamp(v, 0.0, 1.0);
  return label;
}

Tensor hard_patch_label(const Tensor& mask, int downsample_factor) {
  if (mask.c() != 1) throw ShapeError("mask must have one channel");
  Tensor label = area_downsample(one_minus(mask), downsample_factor);
  for (double& v : label.values()) v = v > 0.5 ? 1.0 : 0.0;
  return label;
}

Tensor decode_mask(std::span<const std::uint8_t> bytes, int tolerance) {
  const Image8 img = decode_image(bytes, PixelLayout::kNative);
  if (img.channels != 1) throw DecodeError("mask must be a single-channel image");
  Tensor mask({1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const int v = img.pixels[i];
    if (v <= tolerance) {
      mask[i] = 0.0;
    } else if (v >= 255 - tolerance) {
      mask[i] = 1.0;
    } else {
      throw DecodeError("mask has intermediate value " + std::to_string(v));
    }
  }
  return mask;
}

Tensor load_mask(const std::filesystem::path& path, int tolerance) {
  const auto bytes = read_file(path);
  try {
    return decode_mask(bytes, tolerance);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

Image8 mask_to_image(const Tensor& mask, int n) {
  Image8 img(mask.w(), mask.h(), 1);
  for (int y = 0; y < mask.h(); ++y) {
    for (int x = 0; x < mask.w(); ++x) img.at(x, y, 0) = mask.at(n, 0, y, x) >= 0.5 ? 255 : 0;
  }
  return img;
}

}  // namespace aot

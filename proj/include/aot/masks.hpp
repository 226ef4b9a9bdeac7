#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aot/image_io.hpp"
#include "aot/tensor.hpp"

namespace aot {

/// Closed interval [low, high] of hole-to-image ratios.
struct RatioBucket {
  double low = 0.0;
  double high = 1.0;

  void validate() const;
  bool contains(double ratio) const { return ratio >= low && ratio <= high; }
  /// "10-20%" style label.
  std::string label() const;
  bool operator==(const RatioBucket&) const = default;
};

/// The six evaluation buckets 1-10%, 10-20%, ..., 50-60%.
std::vector<RatioBucket> standard_buckets();

/// Parses "0.1-0.2", "10-20%", or a comma-separated list of these.
std::vector<RatioBucket> parse_buckets(const std::string& text);

/// Free-form brush-stroke mask of shape (1, 1, height, width) whose hole
/// ratio lies inside `bucket`. Pure function of its arguments.
Tensor generate_free_form_mask(int height, int width, const RatioBucket& bucket,
                               std::uint64_t seed);

double compute_hole_ratio(const Tensor& mask);

/// Throws unless every element is exactly 0 or 1 and there is one channel.
void validate_mask(const Tensor& mask);

/// Normalized 1-D Gaussian with an odd tap count (even sizes grow by one).
std::vector<double> gaussian_kernel_1d(int kernel_size, double sigma);

/// Mirror index into [0, n) without repeating the edge sample.
int reflect_index(int i, int n);

/// Gaussian-blurred (reflect padding) then area-downsampled 1 - mask.
/// sigma <= 0 selects kernel_size / 6.
Tensor soft_patch_label(const Tensor& mask, int downsample_factor, int kernel_size = 70,
                        double sigma = 0.0);

/// Area-downsampled 1 - mask binarized at 0.5 (ties count as fake).
Tensor hard_patch_label(const Tensor& mask, int downsample_factor);

/// Reads an 8-bit single-channel PNG (255 = hole). Values farther than
/// `tolerance` from both 0 and 255 are rejected.
Tensor load_mask(const std::filesystem::path& path, int tolerance = 0);
Tensor decode_mask(std::span<const std::uint8_t> bytes, int tolerance = 0);
Image8 mask_to_image(const Tensor& mask, int n = 0);

}  // namespace aot

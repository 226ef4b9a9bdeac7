#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aot/tensor.hpp"

namespace aot {

/// 8-bit interleaved image (row-major, channels fastest).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c) : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c) {}
  std::uint8_t& at(int x, int y, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

enum class PixelLayout { kRgb, kGray, kNative };

/// Decodes PNG or JPEG (sniffed from the magic bytes). kNative keeps a
/// grayscale PNG single-channel and everything else RGB.
Image8 decode_image(std::span<const std::uint8_t> bytes, PixelLayout layout = PixelLayout::kRgb);
Image8 load_image(const std::filesystem::path& path, PixelLayout layout = PixelLayout::kRgb);

std::vector<std::uint8_t> encode_png(const Image8& image);
void save_png(const std::filesystem::path& path, const Image8& image);

/// uint8 [0,255] -> [-1,1], shape (1, channels, h, w).
Tensor image_to_tensor(const Image8& image);
/// Sample `n` of a [-1,1] tensor back to uint8 with rounding and clamping.
Image8 tensor_to_image(const Tensor& t, int n = 0);

/// Antialiased bilinear (triangle filter) resize of every plane.
Tensor resize_bilinear(const Tensor& t, int out_h, int out_w);
/// Largest centered square crop.
Tensor center_crop_square(const Tensor& t);
Tensor crop(const Tensor& t, int y0, int x0, int h, int w);

}  // namespace aot

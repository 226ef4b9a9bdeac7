#include "aot/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "aot/error.hpp"

namespace aot {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= 8 && std::equal(kSig, kSig + 8, b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

Image8 decode_png(std::span<const std::uint8_t> bytes, PixelLayout layout) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DecodeError("png: " + msg);
  }
  const bool native_gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  const bool gray = layout == PixelLayout::kGray || (layout == PixelLayout::kNative && native_gray);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out(static_cast<int>(img.width), static_cast<int>(img.height), gray ? 1 : 3);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DecodeError("png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_quiet(j_common_ptr, int) {}

Image8 decode_jpeg(std::span<const std::uint8_t> bytes, PixelLayout layout) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_quiet;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  const bool gray = layout == PixelLayout::kGray ||
                    (layout == PixelLayout::kNative && cinfo.num_components == 1);
  cinfo.out_color_space = gray ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Image8(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height),
               gray ? 1 : 3);
  const std::size_t stride = std::size_t(out.width) * out.channels;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  // Truncated streams only raise warnings; treat them as corrupt.
  const long warnings = err.base.num_warnings;
  jpeg_destroy_decompress(&cinfo);
  if (warnings > 0) throw DecodeError("jpeg: corrupt or truncated stream");
  return out;
}

double triangle(double x) {
  x = std::abs(x);
  return x < 1.0 ? 1.0 - x : 0.0;
}

struct Taps {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

Taps resample_taps(int in, int out) {
  Taps taps;
  const double scale = static_cast<double>(in) / out;
  const double support = std::max(1.0, scale);
  taps.first.resize(out);
  taps.weights.resize(out);
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    std::vector<double> w;
    double total = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double v = triangle((i - center) / support);
      w.push_back(v);
      total += v;
    }
    for (double& v : w) v /= total;
    taps.first[o] = lo;
    taps.weights[o] = std::move(w);
  }
  return taps;
}

}  // namespace

Image8 decode_image(std::span<const std::uint8_t> bytes, PixelLayout layout) {
  if (is_png(bytes)) return decode_png(bytes, layout);
  if (is_jpeg(bytes)) return decode_jpeg(bytes, layout);
  throw DecodeError("unrecognized image format");
}

Image8 load_image(const std::filesystem::path& path, PixelLayout layout) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes, layout);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorCode::kInvalidArgument, "encode_png supports 1 or 3 channels");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIo, std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const Image8& image) {
  write_file_atomic(path, encode_png(image));
}

Tensor image_to_tensor(const Image8& image) {
  Tensor t({1, image.channels, image.height, image.width});
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        t.at(0, c, y, x) = image.at(x, y, c) / 127.5 - 1.0;
      }
    }
  }
  return t;
}

Image8 tensor_to_image(const Tensor& t, int n) {
  Image8 image(t.w(), t.h(), t.c());
  for (int c = 0; c < t.c(); ++c) {
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) {
        const double v = std::round((t.at(n, c, y, x) + 1.0) * 127.5);
        image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return image;
}

Tensor resize_bilinear(const Tensor& t, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
  if (out_h == t.h() && out_w == t.w()) return t;
  const Taps ty = resample_taps(t.h(), out_h);
  const Taps tx = resample_taps(t.w(), out_w);
  Tensor horiz({t.n(), t.c(), t.h(), out_w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < t.h(); ++y) {
        for (int o = 0; o < out_w; ++o) {
          double acc = 0.0;
          const auto& w = tx.weights[o];
          for (std::size_t k = 0; k < w.size(); ++k) {
            const int ix = std::clamp(tx.first[o] + static_cast<int>(k), 0, t.w() - 1);
            acc += w[k] * t.at(n, c, y, ix);
          }
          horiz.at(n, c, y, o) = acc;
        }
      }
    }
  }
  Tensor out({t.n(), t.c(), out_h, out_w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int o = 0; o < out_h; ++o) {
        const auto& w = ty.weights[o];
        for (int x = 0; x < out_w; ++x) {
          double acc = 0.0;
          for (std::size_t k = 0; k < w.size(); ++k) {
            const int iy = std::clamp(ty.first[o] + static_cast<int>(k), 0, t.h() - 1);
            acc += w[k] * horiz.at(n, c, iy, x);
          }
          out.at(n, c, o, x) = acc;
        }
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& t, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > t.h() || x0 + w > t.w()) throw ShapeError("crop out of range");
  Tensor out({t.n(), t.c(), h, w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = t.at(n, c, y0 + y, x0 + x);
      }
    }
  }
  return out;
}

Tensor center_crop_square(const Tensor& t) {
  const int side = std::min(t.h(), t.w());
  return crop(t, (t.h() - side) / 2, (t.w() - side) / 2, side, side);
}

}  // namespace aot

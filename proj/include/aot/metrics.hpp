#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aot/data.hpp"
#include "aot/losses.hpp"
#include "aot/masks.hpp"
#include "aot/tensor.hpp"

namespace aot {

inline constexpr double kPsnrCap = 100.0;

/// Per-sample PSNR in dB on the [0, 1] scale, capped at kPsnrCap.
std::vector<double> psnr(const Tensor& x, const Tensor& z);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Per-sample single-scale SSIM on the [0, 1] scale, averaged over channels
/// and over every valid window position.
std::vector<double> ssim(const Tensor& x, const Tensor& z, const SsimOptions& options = {});

/// Per-sample mean absolute error on the [0, 1] scale.
std::vector<double> l1_error(const Tensor& x, const Tensor& z);

struct FidResult {
  double value = 0.0;
  bool regularized = false;  ///< A covariance needed the epsilon ridge.
  bool undersampled = false;  ///< Fewer samples than feature dimensions.
};

/// Frechet distance between Gaussian fits of two feature sets (one row per sample).
FidResult fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake);

struct MetricsRow {
  RatioBucket bucket;
  std::size_t samples = 0;
  double l1 = 0.0;  ///< Units of 1e-2.
  double psnr = 0.0;
  double ssim = 0.0;
  double fid = 0.0;
  bool fid_regularized = false;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::string extractor_fingerprint;
  std::uint64_t seed = 0;
};

/// Inpaints `image` under `mask`; both tensors have batch 1.
using InpaintFn = std::function<Tensor(const Tensor& image, const Tensor& mask)>;

/// Mask seed for image `index` in bucket `bucket_index`.
std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t index, std::size_t bucket_index);

/// Every image of `dataset` paired with one seeded mask per bucket. The
/// composed output is scored against the original image.
MetricsReport evaluate(const InpaintFn& inpaint, const ImageSource& dataset,
                       const std::vector<RatioBucket>& buckets, std::uint64_t seed,
                       const FeatureExtractor& extractor, std::size_t max_images = 0);

std::string report_csv(const MetricsReport& report);
/// Metric-by-bucket grid.
std::string report_table(const MetricsReport& report);

}  // namespace aot

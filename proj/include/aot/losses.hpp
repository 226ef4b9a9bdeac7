#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aot/archive.hpp"
#include "aot/nn.hpp"
#include "aot/tensor.hpp"

namespace aot {

enum class ExtractorSource { kPretrainedFile, kFixedRandom, kIdentity };

/// How to obtain the frozen feature network.
struct ExtractorConfig {
  /// "auto" (pretrained file from $AOT_CACHE_DIR when present, otherwise
  /// random), "random", "identity", or a path to a weight archive.
  std::string source = "auto";
  std::uint64_t seed = 1;
  /// Channel divisor applied to the VGG19 widths for the random fallback.
  int width_divisor = 8;
  std::vector<std::string> taps{"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"};
};

/// File name looked up under $AOT_CACHE_DIR for pretrained weights.
inline constexpr const char* kPretrainedWeightsFile = "vgg19_features.aott";

/// Frozen VGG19-topology feature network returning activations at named
/// post-rectifier taps. Inputs are [-1, 1] images; ImageNet normalization is
/// applied internally.
class FeatureExtractor {
 public:
  static FeatureExtractor fixed_random(std::uint64_t seed, int width_divisor = 8,
                                       std::vector<std::string> taps = ExtractorConfig{}.taps);
  static FeatureExtractor from_archive(const Archive& weights,
                                       std::vector<std::string> taps = ExtractorConfig{}.taps);
  static FeatureExtractor from_file(const std::filesystem::path& path,
                                    std::vector<std::string> taps = ExtractorConfig{}.taps);
  /// Single tap equal to the raw input.
  static FeatureExtractor identity();
  static FeatureExtractor resolve(const ExtractorConfig& config);

  FeatureExtractor(FeatureExtractor&&) = default;
  FeatureExtractor& operator=(FeatureExtractor&&) = default;

  /// Tap activations; caches state for backward().
  std::vector<Tensor> forward(const Tensor& image);
  /// Tap activations without caching.
  std::vector<Tensor> infer(const Tensor& image) const;
  /// d(loss)/d(image) given d(loss)/d(tap) for every tap of the last forward().
  Tensor backward(const std::vector<Tensor>& tap_grads);

  /// Global-average-pooled deepest tap, shape (N, C, 1, 1).
  Tensor pooled_features(const Tensor& image) const;

  const std::vector<std::string>& taps() const { return tap_names_; }
  ExtractorSource source() const { return source_; }
  int min_resolution() const { return min_resolution_; }
  /// Short digest of the weights; labels reports that depend on them.
  std::string fingerprint() const;
  std::vector<ParamRef> parameters();
  /// Tensor archive of the weights (float32), loadable by from_archive().
  Archive export_weights();

 private:
  FeatureExtractor() = default;
  void build(const std::vector<int>& widths, Rng* rng, std::vector<std::string> taps);
  void check_input(const Tensor& image) const;
  Tensor normalize(const Tensor& image) const;

  ExtractorSource source_ = ExtractorSource::kFixedRandom;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> layer_names_;
  std::vector<int> layer_index_;  // torchvision "features.N" index per layer
  std::vector<std::string> tap_names_;
  std::vector<std::size_t> tap_layers_;
  int min_resolution_ = 1;
};

struct LossWeights {
  double lambda_adv = 0.01;
  double lambda_rec = 1.0;
  double lambda_per = 0.1;
  double lambda_sty = 250.0;

  void validate() const;
};

struct LossComponents {
  double adv = 0.0;
  double rec = 0.0;
  double per = 0.0;
  double sty = 0.0;
};

/// Mean absolute difference between the target and the raw generator output.
double l1_rec(const Tensor& x, const Tensor& g_out);
/// d(l1_rec)/d(g_out).
Tensor l1_rec_grad(const Tensor& x, const Tensor& g_out);

/// Per-sample F F^T / (C H W), shape (N, 1, C, C).
Tensor gram(const Tensor& features);
/// d(loss)/d(features) given d(loss)/d(gram).
Tensor gram_backward(const Tensor& features, const Tensor& grad_gram);

struct FeatureLoss {
  double value = 0.0;
  std::vector<Tensor> tap_grads;  ///< d(value)/d(z-side tap activations)
};

/// Sum over taps of mean |phi(x) - phi(z)|.
FeatureLoss perceptual_from_features(const std::vector<Tensor>& fx, const std::vector<Tensor>& fz);
/// Mean over taps of mean |gram(phi(x)) - gram(phi(z))|.
FeatureLoss style_from_features(const std::vector<Tensor>& fx, const std::vector<Tensor>& fz);

double perceptual(const Tensor& x, const Tensor& z, const FeatureExtractor& fx);
double style(const Tensor& x, const Tensor& z, const FeatureExtractor& fx);

/// Weighted sum; throws DivergenceError on a non-finite component.
double total_loss(const LossComponents& c, const LossWeights& w, long step = -1);

}  // namespace aot

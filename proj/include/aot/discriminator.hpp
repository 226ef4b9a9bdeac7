#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aot/nn.hpp"
#include "aot/tensor.hpp"

namespace aot {

/// Source of the per-patch regression target for inpainted images.
enum class TargetMode {
  kSoftMask,  ///< Gaussian-blurred, downsampled known-pixel map.
  kHardMask,  ///< Downsampled known-pixel map, binarized.
  kPatchGan,  ///< Every patch of an inpainted image is fake.
};

std::string to_string(TargetMode mode);
TargetMode parse_target_mode(const std::string& text);

struct DiscriminatorConfig {
  int num_layers = 4;
  int base_channels = 64;
  TargetMode target_mode = TargetMode::kSoftMask;
  bool spectral_norm = true;

  void validate() const;
  /// Total spatial reduction: 2^num_layers.
  int downsample_factor() const { return 1 << num_layers; }
};

/// Fully convolutional patch classifier: num_layers stride-2 4x4 convolutions
/// with leaky rectifiers, followed by a 3x3 projection to one channel.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& image);
  /// Returns d(loss)/d(image); accumulates parameter gradients when enabled.
  Tensor backward(const Tensor& grad_map);

  void set_requires_grad(bool enabled) { net_.set_requires_grad(enabled); }
  void advance_power_iteration();

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();
  void walk(const LayerVisitor& fn) const { net_.walk("net", fn); }
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  Sequential net_;
  std::vector<Conv2d*> convs_;
};

/// Per-patch regression target for the inpainted batch under `mode`.
Tensor discriminator_target(const Tensor& mask, TargetMode mode, int downsample_factor,
                            int kernel_size = 70, double sigma = 0.0);

/// Area-downsampled hole mask used to weight the generator's adversarial term.
Tensor adversarial_weight(const Tensor& mask, int downsample_factor);

struct DLoss {
  double value = 0.0;
  Tensor grad_fake;
  Tensor grad_real;
};

struct GAdvLoss {
  double value = 0.0;
  Tensor grad_fake;
};

/// mean((fake - label)^2) + mean((real - 1)^2).
double d_loss(const Tensor& pred_fake, const Tensor& pred_real, const Tensor& label);
DLoss d_loss_with_grad(const Tensor& pred_fake, const Tensor& pred_real, const Tensor& label);

/// sum((fake - 1)^2 * w) / max(sum(w), eps); 0 for an empty mask.
double g_adv_loss(const Tensor& pred_fake, const Tensor& weight);
GAdvLoss g_adv_loss_with_grad(const Tensor& pred_fake, const Tensor& weight);

}  // namespace aot

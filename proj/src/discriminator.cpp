#include "aot/discriminator.hpp"

#include <algorithm>

#include "aot/error.hpp"
#include "aot/masks.hpp"

namespace aot {

namespace {
constexpr double kMaskMassEpsilon = 1e-8;
}

std::string to_string(TargetMode mode) {
  switch (mode) {
    case TargetMode::kSoftMask:
      return "sm";
    case TargetMode::kHardMask:
      return "hm";
    case TargetMode::kPatchGan:
      return "patchgan";
  }
  return "sm";
}

TargetMode parse_target_mode(const std::string& text) {
  if (text == "sm") return TargetMode::kSoftMask;
  if (text == "hm") return TargetMode::kHardMask;
  if (text == "patchgan") return TargetMode::kPatchGan;
  throw ConfigError("unknown discriminator target mode '" + text + "'");
}

void DiscriminatorConfig::validate() const {
  if (num_layers < 1 || num_layers > 8) throw ConfigError("discriminator layers must be in [1, 8]");
  if (base_channels < 1) throw ConfigError("discriminator channels must be positive");
}

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(mix_seed(seed, 0x646973ULL));
  int in = 3;
  for (int i = 0; i < config.num_layers; ++i) {
    const int out = config.base_channels * (1 << std::min(i, 3));
    ConvOptions o{in, out, 4, 2, 1, 1, true, config.spectral_norm};
    convs_.push_back(&net_.add<Conv2d>(o, rng));
    net_.add<LeakyReLU>(0.2);
    in = out;
  }
  convs_.push_back(&net_.add<Conv2d>(ConvOptions{in, 1, 3, 1, 1, 1, true, config.spectral_norm}, rng));
}

Tensor Discriminator::forward(const Tensor& image) {
  const int f = config_.downsample_factor();
  if (image.c() != 3 || image.h() % f != 0 || image.w() % f != 0) {
    throw ShapeError("discriminator input " + image.shape().str() + " must be RGB and divisible by " +
                     std::to_string(f));
  }
  return net_.forward(image);
}

Tensor Discriminator::backward(const Tensor& grad_map) { return net_.backward(grad_map); }

void Discriminator::advance_power_iteration() {
  for (auto* c : convs_) c->advance_power_iteration();
}

std::vector<ParamRef> Discriminator::parameters() {
  std::vector<ParamRef> out;
  net_.collect_parameters("net", out);
  return out;
}

std::vector<BufferRef> Discriminator::buffers() {
  std::vector<BufferRef> out;
  net_.collect_buffers("net", out);
  return out;
}

Tensor discriminator_target(const Tensor& mask, TargetMode mode, int downsample_factor,
                            int kernel_size, double sigma) {
  switch (mode) {
    case TargetMode::kSoftMask:
      return soft_patch_label(mask, downsample_factor, kernel_size, sigma);
    case TargetMode::kHardMask:
      return hard_patch_label(mask, downsample_factor);
    case TargetMode::kPatchGan:
      return Tensor(area_downsample(mask, downsample_factor).shape(), 0.0);
  }
  throw ConfigError("unknown target mode");
}

Tensor adversarial_weight(const Tensor& mask, int downsample_factor) {
  return area_downsample(mask, downsample_factor);
}

DLoss d_loss_with_grad(const Tensor& pred_fake, const Tensor& pred_real, const Tensor& label) {
  require_same_shape(pred_fake, label, "d_loss");
  DLoss out;
  out.grad_fake = Tensor(pred_fake.shape());
  out.grad_real = Tensor(pred_real.shape());
  const double nf = static_cast<double>(pred_fake.size());
  const double nr = static_cast<double>(pred_real.size());
  double fake = 0.0;
  for (std::size_t i = 0; i < pred_fake.size(); ++i) {
    const double r = pred_fake[i] - label[i];
    fake += r * r;
    out.grad_fake[i] = 2.0 * r / nf;
  }
  double real = 0.0;
  for (std::size_t i = 0; i < pred_real.size(); ++i) {
    const double r = pred_real[i] - 1.0;
    real += r * r;
    out.grad_real[i] = 2.0 * r / nr;
  }
  out.value = fake / nf + real / nr;
  return out;
}

double d_loss(const Tensor& pred_fake, const Tensor& pred_real, const Tensor& label) {
  return d_loss_with_grad(pred_fake, pred_real, label).value;
}

GAdvLoss g_adv_loss_with_grad(const Tensor& pred_fake, const Tensor& weight) {
  require_same_shape(pred_fake, weight, "g_adv_loss");
  GAdvLoss out;
  out.grad_fake = Tensor(pred_fake.shape());
  const double mass = sum(weight);
  if (mass <= 0.0) return out;
  const double denom = std::max(mass, kMaskMassEpsilon);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_fake.size(); ++i) {
    const double r = pred_fake[i] - 1.0;
    acc += r * r * weight[i];
    out.grad_fake[i] = 2.0 * r * weight[i] / denom;
  }
  out.value = acc / denom;
  return out;
}

double g_adv_loss(const Tensor& pred_fake, const Tensor& weight) {
  return g_adv_loss_with_grad(pred_fake, weight).value;
}

}  // namespace aot

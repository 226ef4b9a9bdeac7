#include "aot/generator.hpp"

#include <algorithm>

#include "aot/error.hpp"

namespace aot {

std::string to_string(ResidualMode mode) {
  return mode == ResidualMode::kGated ? "gated" : "identity";
}

ResidualMode parse_residual_mode(const std::string& text) {
  if (text == "gated") return ResidualMode::kGated;
  if (text == "identity") return ResidualMode::kIdentity;
  throw ConfigError("unknown residual mode '" + text + "'");
}

void AotBlockConfig::validate() const {
  if (rates.empty()) throw ConfigError("AOT block needs at least one branch");
  if (width <= 0 || width % static_cast<int>(rates.size()) != 0) {
    throw ConfigError("block width " + std::to_string(width) + " not divisible by " +
                      std::to_string(rates.size()) + " branches");
  }
  if (kernel_size <= 0 || kernel_size % 2 == 0) throw ConfigError("block kernel must be odd");
  for (int r : rates) {
    if (r <= 0) throw ConfigError("dilation rates must be positive");
  }
}

void GeneratorConfig::validate() const {
  if (input_channels != 4) throw ConfigError("generator input is RGB + mask (4 channels)");
  if (output_channels != 3) throw ConfigError("generator output is RGB (3 channels)");
  if (num_blocks < 1) throw ConfigError("generator needs at least one AOT block");
  if (base_width <= 0 || base_width % 4 != 0) {
    throw ConfigError("base width must be a positive multiple of 4");
  }
  if (block.width != base_width) throw ConfigError("block width must equal the base width");
  block.validate();
}

GeneratorConfig GeneratorConfig::full_scale() { return GeneratorConfig{}; }

GeneratorConfig GeneratorConfig::desk_scale(int width) {
  GeneratorConfig c;
  c.base_width = width;
  c.block.width = width;
  return c;
}

Tensor gated_residual(const Tensor& x1, const Tensor& x2, const Tensor& g) {
  require_same_shape(x1, x2, "gated_residual");
  require_same_shape(x1, g, "gated_residual");
  Tensor out(x1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x1[i] * g[i] + x2[i] * (1.0 - g[i]);
  return out;
}

// ---------------------------------------------------------------------------

AotBlock::AotBlock(const AotBlockConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int k = config.kernel_size;
  for (int rate : config.rates) {
    ConvOptions o{config.width, config.branch_width(), k, 1, rate * (k / 2), rate};
    branches_.push_back(std::make_unique<Conv2d>(o, rng));
    branch_acts_.emplace_back();
  }
  fuse_ = std::make_unique<Conv2d>(ConvOptions{config.width, config.width, 3, 1, 1, 1}, rng);
  if (config.residual_mode == ResidualMode::kGated) {
    gate_conv_ = std::make_unique<Conv2d>(ConvOptions{config.width, config.width, 3, 1, 1, 1}, rng);
  }
}

Tensor AotBlock::forward(const Tensor& x1) {
  if (x1.c() != config_.width) {
    throw ShapeError("AOT block expects " + std::to_string(config_.width) + " channels, got " +
                     x1.shape().str());
  }
  x1_ = x1;
  std::vector<Tensor> parts;
  parts.reserve(branches_.size());
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    parts.push_back(branch_acts_[i].forward(branches_[i]->forward(x1)));
  }
  x2_ = fuse_act_.forward(fuse_->forward(concat_channels(parts)));
  if (config_.residual_mode == ResidualMode::kIdentity) {
    gate_ = Tensor();
    return x1 + x2_;
  }
  gate_ = gate_act_.forward(gate_conv_->forward(x1));
  return gated_residual(x1, x2_, gate_);
}

Tensor AotBlock::infer(const Tensor& x1) const {
  if (x1.c() != config_.width) {
    throw ShapeError("AOT block expects " + std::to_string(config_.width) + " channels, got " +
                     x1.shape().str());
  }
  std::vector<Tensor> parts;
  parts.reserve(branches_.size());
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    parts.push_back(branch_acts_[i].infer(branches_[i]->infer(x1)));
  }
  const Tensor x2 = fuse_act_.infer(fuse_->infer(concat_channels(parts)));
  if (config_.residual_mode == ResidualMode::kIdentity) return x1 + x2;
  return gated_residual(x1, x2, gate_act_.infer(gate_conv_->infer(x1)));
}

Tensor AotBlock::backward(const Tensor& grad_out) {
  Tensor dx1;
  Tensor dx2;
  if (config_.residual_mode == ResidualMode::kIdentity) {
    dx1 = grad_out;
    dx2 = grad_out;
  } else {
    dx1 = Tensor(grad_out.shape());
    dx2 = Tensor(grad_out.shape());
    Tensor dg(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
      dx1[i] = grad_out[i] * gate_[i];
      dx2[i] = grad_out[i] * (1.0 - gate_[i]);
      dg[i] = grad_out[i] * (x1_[i] - x2_[i]);
    }
    dx1 += gate_conv_->backward(gate_act_.backward(dg));
  }
  const Tensor dcat = fuse_->backward(fuse_act_.backward(dx2));
  const int bw = config_.branch_width();
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const Tensor part = slice_channels(dcat, static_cast<int>(i) * bw, bw);
    dx1 += branches_[i]->backward(branch_acts_[i].backward(part));
  }
  return dx1;
}

void AotBlock::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    branches_[i]->collect_parameters(join_name(prefix, "branch" + std::to_string(i)), out);
  }
  fuse_->collect_parameters(join_name(prefix, "fuse"), out);
  if (gate_conv_) gate_conv_->collect_parameters(join_name(prefix, "gate"), out);
}

void AotBlock::set_requires_grad(bool enabled) {
  requires_grad_ = enabled;
  for (auto& b : branches_) b->set_requires_grad(enabled);
  fuse_->set_requires_grad(enabled);
  if (gate_conv_) gate_conv_->set_requires_grad(enabled);
}

void AotBlock::walk(const std::string& path, const LayerVisitor& fn) const {
  fn(kind(), path);
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const auto p = join_name(path, "branch" + std::to_string(i));
    branches_[i]->walk(p, fn);
    branch_acts_[i].walk(p + ".act", fn);
  }
  fuse_->walk(join_name(path, "fuse"), fn);
  fuse_act_.walk(join_name(path, "fuse.act"), fn);
  if (gate_conv_) {
    gate_conv_->walk(join_name(path, "gate"), fn);
    gate_act_.walk(join_name(path, "gate.act"), fn);
  }
}

std::vector<ParamRef> AotBlock::branch_parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    branches_[i]->collect_parameters("branch" + std::to_string(i), out);
  }
  return out;
}

// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  Rng rng(mix_seed(seed, 0x67656eULL));
  const int w = config.base_width;
  encoder_.add<Conv2d>(ConvOptions{config.input_channels, w / 4, 7, 1, 3, 1}, rng);
  encoder_.add<ReLU>();
  encoder_.add<Conv2d>(ConvOptions{w / 4, w / 2, 4, 2, 1, 1}, rng);
  encoder_.add<ReLU>();
  encoder_.add<Conv2d>(ConvOptions{w / 2, w, 4, 2, 1, 1}, rng);
  encoder_.add<ReLU>();
  for (int i = 0; i < config.num_blocks; ++i) {
    blocks_.push_back(&body_.add<AotBlock>(config.block, rng));
  }
  decoder_.add<ConvTranspose2d>(ConvOptions{w, w / 2, 4, 2, 1, 1}, rng);
  decoder_.add<ReLU>();
  decoder_.add<ConvTranspose2d>(ConvOptions{w / 2, w / 4, 4, 2, 1, 1}, rng);
  decoder_.add<ReLU>();
  decoder_.add<Conv2d>(ConvOptions{w / 4, config.output_channels, 3, 1, 1, 1}, rng);
  decoder_.add<Tanh>();
}

namespace {

void check_generator_input(const Tensor& masked_image, const Tensor& mask) {
  if (masked_image.c() != 3 || mask.c() != 1 || masked_image.n() != mask.n() ||
      masked_image.h() != mask.h() || masked_image.w() != mask.w()) {
    throw ShapeError("generator input " + masked_image.shape().str() + " with mask " +
                     mask.shape().str());
  }
  if (mask.h() % 4 != 0 || mask.w() % 4 != 0) {
    throw ShapeError("generator input size must be divisible by 4, got " + mask.shape().str());
  }
}

}  // namespace

Tensor Generator::forward(const Tensor& masked_image, const Tensor& mask) {
  check_generator_input(masked_image, mask);
  const Tensor parts[] = {masked_image, mask};
  return decoder_.forward(body_.forward(encoder_.forward(concat_channels(parts))));
}

Tensor Generator::infer(const Tensor& masked_image, const Tensor& mask) const {
  check_generator_input(masked_image, mask);
  const Tensor parts[] = {masked_image, mask};
  return decoder_.infer(body_.infer(encoder_.infer(concat_channels(parts))));
}

void Generator::backward(const Tensor& grad_output) {
  encoder_.backward(body_.backward(decoder_.backward(grad_output)));
}

std::vector<ParamRef> Generator::parameters() {
  std::vector<ParamRef> out;
  encoder_.collect_parameters("encoder", out);
  body_.collect_parameters("blocks", out);
  decoder_.collect_parameters("decoder", out);
  return out;
}

void Generator::walk(const LayerVisitor& fn) const {
  encoder_.walk("encoder", fn);
  body_.walk("blocks", fn);
  decoder_.walk("decoder", fn);
}

// ---------------------------------------------------------------------------

namespace {

void check_pair(const Tensor& image, const Tensor& mask) {
  if (mask.c() != 1 || image.n() != mask.n() || image.h() != mask.h() || image.w() != mask.w()) {
    throw ShapeError("image " + image.shape().str() + " and mask " + mask.shape().str() +
                     " are not aligned");
  }
}

}  // namespace

Tensor compose(const Tensor& image, const Tensor& generated, const Tensor& mask) {
  check_pair(image, mask);
  require_same_shape(image, generated, "compose");
  Tensor z(image.shape());
  const std::size_t plane = image.shape().plane();
  for (int n = 0; n < image.n(); ++n) {
    const double* m = mask.sample(n);
    for (int c = 0; c < image.c(); ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * image.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        z[off + i] = m[i] == 0.0 ? image[off + i] : std::clamp(generated[off + i], -1.0, 1.0);
      }
    }
  }
  return z;
}

Tensor mask_image(const Tensor& image, const Tensor& mask) {
  check_pair(image, mask);
  Tensor out(image.shape());
  const std::size_t plane = image.shape().plane();
  for (int n = 0; n < image.n(); ++n) {
    const double* m = mask.sample(n);
    for (int c = 0; c < image.c(); ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * image.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = image[off + i] * (1.0 - m[i]);
    }
  }
  return out;
}

Tensor inpaint(const Generator& gen, const Tensor& image, const Tensor& mask) {
  check_pair(image, mask);
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorCode::kInvalidArgument, "mask is not binary");
  }
  return compose(image, gen.infer(mask_image(image, mask), mask), mask);
}

}  // namespace aot

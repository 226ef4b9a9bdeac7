#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "aot/nn.hpp"
#include "aot/tensor.hpp"

namespace aot {

enum class ResidualMode { kGated, kIdentity };

std::string to_string(ResidualMode mode);
ResidualMode parse_residual_mode(const std::string& text);

struct AotBlockConfig {
  int width = 256;
  std::vector<int> rates{1, 2, 4, 8};
  ResidualMode residual_mode = ResidualMode::kGated;
  int kernel_size = 3;

  void validate() const;
  /// Output channels of each dilated branch.
  int branch_width() const { return width / static_cast<int>(rates.size()); }
};

struct GeneratorConfig {
  int input_channels = 4;
  int base_width = 256;
  int num_blocks = 8;
  AotBlockConfig block{};
  int output_channels = 3;

  void validate() const;
  /// Full-scale layout: 8 blocks, rates 1,2,4,8, width 256.
  static GeneratorConfig full_scale();
  /// Same block structure shrunk to a CPU-friendly width.
  static GeneratorConfig desk_scale(int width = 32);
};

/// x1 * g + x2 * (1 - g), elementwise.
Tensor gated_residual(const Tensor& x1, const Tensor& x2, const Tensor& g);

/// Split-transform-merge block: parallel dilated branches, concatenation,
/// a fusing convolution, and a gated or identity residual connection.
class AotBlock final : public Layer {
 public:
  AotBlock(const AotBlockConfig& config, Rng& rng);

  std::string_view kind() const override { return "aot_block"; }
  Tensor forward(const Tensor& x1) override;
  Tensor infer(const Tensor& x1) const override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void set_requires_grad(bool enabled) override;
  void walk(const std::string& path, const LayerVisitor& fn) const override;

  const AotBlockConfig& config() const { return config_; }
  /// Gate values from the last forward pass (empty in identity mode).
  const Tensor& last_gate() const { return gate_; }

  /// Parameters of the split-transform steps (branch convolutions only).
  std::vector<ParamRef> branch_parameters();
  Conv2d& branch(std::size_t i) { return *branches_[i]; }
  Conv2d& fuse() { return *fuse_; }
  Conv2d* gate_conv() { return gate_conv_.get(); }

 private:
  AotBlockConfig config_;
  std::vector<std::unique_ptr<Conv2d>> branches_;
  std::vector<ReLU> branch_acts_;
  std::unique_ptr<Conv2d> fuse_;
  ReLU fuse_act_;
  std::unique_ptr<Conv2d> gate_conv_;
  Sigmoid gate_act_;

  Tensor x1_;
  Tensor x2_;
  Tensor gate_;
};

/// Encoder -> stacked AOT blocks -> decoder, taking the masked image and the
/// mask as a 4-channel input and producing a tanh image in [-1, 1].
class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed);

  /// Raw output G(masked_image, mask).
  Tensor forward(const Tensor& masked_image, const Tensor& mask);
  /// forward() without caching; safe on a generator shared across threads.
  Tensor infer(const Tensor& masked_image, const Tensor& mask) const;
  /// Accumulates parameter gradients for d(loss)/d(output).
  void backward(const Tensor& grad_output);

  std::vector<ParamRef> parameters();
  void walk(const LayerVisitor& fn) const;
  const GeneratorConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  AotBlock& block(std::size_t i) { return *blocks_[i]; }

 private:
  GeneratorConfig config_;
  std::uint64_t seed_;
  Sequential encoder_;
  std::vector<AotBlock*> blocks_;
  Sequential body_;
  Sequential decoder_;
};

/// x * (1 - m) + generated * m with known pixels copied verbatim.
/// `mask` has one channel and broadcasts over the image channels.
Tensor compose(const Tensor& image, const Tensor& generated, const Tensor& mask);

/// x * (1 - m) broadcast over channels.
Tensor mask_image(const Tensor& image, const Tensor& mask);

/// Full inpainting pass: returns the composed result.
Tensor inpaint(const Generator& gen, const Tensor& image, const Tensor& mask);

}  // namespace aot

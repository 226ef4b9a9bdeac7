#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aot/tensor.hpp"

namespace aot {

using Rng = std::mt19937_64;

/// Mixes several integers into one seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

struct Parameter {
  Tensor value;
  Tensor grad;

  explicit Parameter(Shape s) : value(s), grad(s) {}
  Parameter() = default;
};

struct ParamRef {
  std::string name;
  Parameter* param;
};

struct BufferRef {
  std::string name;
  Tensor* value;
};

using LayerVisitor = std::function<void(std::string_view kind, const std::string& path)>;

/// A differentiable layer. forward() caches what backward() needs, so a
/// backward call must follow the forward call it differentiates.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string_view kind() const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  /// Same result as forward() without touching any cached state; safe to call
  /// concurrently on a shared layer.
  virtual Tensor infer(const Tensor& x) const = 0;
  /// Accumulates parameter gradients (when enabled) and returns d(loss)/d(input).
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<ParamRef>& /*out*/) {}
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<BufferRef>& /*out*/) {}
  virtual void set_requires_grad(bool enabled) { requires_grad_ = enabled; }
  virtual void walk(const std::string& path, const LayerVisitor& fn) const { fn(kind(), path); }

  bool requires_grad() const { return requires_grad_; }

 protected:
  bool requires_grad_ = true;
};

struct ConvOptions {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  bool bias = true;
  bool spectral_norm = false;
};

class Conv2d final : public Layer {
 public:
  Conv2d(const ConvOptions& opts, Rng& rng);

  std::string_view kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;

  const ConvOptions& options() const { return opts_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

  /// Runs one power iteration and stores the refined left singular vector.
  void advance_power_iteration();
  /// Largest singular value estimate used by the last forward pass.
  double spectral_sigma() const { return sigma_; }

 private:
  void refresh_effective_weight();
  Tensor apply(const Tensor& x, const double* weights) const;

  ConvOptions opts_;
  Parameter weight_;
  Parameter bias_;
  Tensor sn_u_;
  // Spectral-norm state from the last forward.
  AlignedBuffer effective_;
  AlignedBuffer u_;
  AlignedBuffer v_;
  double sigma_ = 1.0;
  Tensor input_;
};

class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(const ConvOptions& opts, Rng& rng);

  std::string_view kind() const override { return "conv_transpose2d"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;

  Parameter& weight() { return weight_; }

 private:
  ConvOptions opts_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// Spectrally normalized copy of a (rows x cols) weight matrix. Fills the
/// refined singular vectors and returns sigma.
double spectral_normalize(const double* weight, int rows, int cols, const double* u_in,
                          AlignedBuffer& effective, AlignedBuffer& u_out,
                          AlignedBuffer& v_out);

class ReLU final : public Layer {
 public:
  std::string_view kind() const override { return "relu"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

class LeakyReLU final : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  std::string_view kind() const override { return "leaky_relu"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double slope_;
  Tensor input_;
};

class Sigmoid final : public Layer {
 public:
  std::string_view kind() const override { return "sigmoid"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

class Tanh final : public Layer {
 public:
  std::string_view kind() const override { return "tanh"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

/// 2x2 max pooling with stride 2.
class MaxPool2d final : public Layer {
 public:
  std::string_view kind() const override { return "max_pool2d"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_{};
  std::vector<std::size_t> argmax_;
};

class Sequential : public Layer {
 public:
  std::string_view kind() const override { return "sequential"; }
  Tensor forward(const Tensor& x) override;
  Tensor infer(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void set_requires_grad(bool enabled) override;
  void walk(const std::string& path, const LayerVisitor& fn) const override;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

std::string join_name(const std::string& prefix, std::string_view leaf);

/// Total element count over a parameter list.
std::size_t parameter_count(const std::vector<ParamRef>& params);
void zero_grads(const std::vector<ParamRef>& params);

// Lowering helpers shared by the convolution layers. `cols` is laid out as
// (channels * kernel * kernel) rows by (out_h * out_w) columns.
struct ConvGeometry {
  int channels;
  int height;
  int width;
  int kernel;
  int stride;
  int padding;
  int dilation;
  int out_h;
  int out_w;
};

void im2col(const double* src, const ConvGeometry& g, double* cols);
void col2im(const double* cols, const ConvGeometry& g, double* dst);

int conv_out_size(int in, int kernel, int stride, int padding, int dilation);

}  // namespace aot

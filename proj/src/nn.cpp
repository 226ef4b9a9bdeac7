#include "aot/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "aot/error.hpp"

namespace aot {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void he_normal(Tensor& t, double fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(fan_in, 1.0)));
  for (double& v : t.values()) v = dist(rng);
}

void normalize(Eigen::VectorXd& v) {
  const double norm = v.norm();
  v /= std::max(norm, 1e-12);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return step(step(step(a) ^ b) ^ c);
}

int conv_out_size(int in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

void im2col(const double* src, const ConvGeometry& g, double* cols) {
  const int out_plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = src + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = cols;
        cols += out_plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* line = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.width) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* dst) {
  const int out_plane = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    double* plane = dst + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols;
        cols += out_plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= g.height) continue;
          double* line = plane + static_cast<std::size_t>(iy) * g.width;
          const double* srcrow = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            if (ix >= 0 && ix < g.width) line[ix] += srcrow[ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const ConvOptions& opts, Rng& rng)
    : opts_(opts),
      weight_({opts.out_channels, opts.in_channels, opts.kernel, opts.kernel}),
      bias_({1, opts.bias ? opts.out_channels : 0, 1, 1}) {
  if (opts.in_channels <= 0 || opts.out_channels <= 0 || opts.kernel <= 0 || opts.stride <= 0 ||
      opts.dilation <= 0 || opts.padding < 0) {
    throw ConfigError("invalid convolution options");
  }
  he_normal(weight_.value, static_cast<double>(opts.in_channels) * opts.kernel * opts.kernel, rng);
  if (opts.spectral_norm) {
    sn_u_ = Tensor({1, 1, 1, opts.out_channels});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : sn_u_.values()) v = dist(rng);
    Eigen::VectorXd u = ConstVecMap(sn_u_.data(), opts.out_channels);
    normalize(u);
    VecMap(sn_u_.data(), opts.out_channels) = u;
  }
}

double spectral_normalize(const double* weight, int rows, int cols, const double* u_in,
                          AlignedBuffer& effective, AlignedBuffer& u_out,
                          AlignedBuffer& v_out) {
  ConstMapRM w(weight, rows, cols);
  Eigen::VectorXd v = w.transpose() * ConstVecMap(u_in, rows);
  normalize(v);
  Eigen::VectorXd u = w * v;
  normalize(u);
  const double sigma = u.dot(w * v);
  u_out.assign(u.data(), u.data() + rows);
  v_out.assign(v.data(), v.data() + cols);
  effective.resize(static_cast<std::size_t>(rows) * cols);
  MapRM(effective.data(), rows, cols) = w / sigma;
  return sigma;
}

void Conv2d::refresh_effective_weight() {
  const int rows = opts_.out_channels;
  const int cols = static_cast<int>(weight_.value.size()) / rows;
  sigma_ = spectral_normalize(weight_.value.data(), rows, cols, sn_u_.data(), effective_, u_, v_);
}

void Conv2d::advance_power_iteration() {
  if (!opts_.spectral_norm) return;
  refresh_effective_weight();
  std::copy(u_.begin(), u_.end(), sn_u_.data());
}

Tensor Conv2d::apply(const Tensor& x, const double* wptr) const {
  if (x.c() != opts_.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(opts_.in_channels) + " channels, got " +
                     x.shape().str());
  }
  const int out_h = conv_out_size(x.h(), opts_.kernel, opts_.stride, opts_.padding, opts_.dilation);
  const int out_w = conv_out_size(x.w(), opts_.kernel, opts_.stride, opts_.padding, opts_.dilation);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d input too small: " + x.shape().str());

  const ConvGeometry g{x.c(), x.h(), x.w(), opts_.kernel, opts_.stride, opts_.padding,
                       opts_.dilation, out_h, out_w};
  const int krows = x.c() * opts_.kernel * opts_.kernel;
  const int plane = out_h * out_w;
  AlignedBuffer cols(static_cast<std::size_t>(krows) * plane);
  Tensor out({x.n(), opts_.out_channels, out_h, out_w});
  ConstMapRM w(wptr, opts_.out_channels, krows);
  for (int n = 0; n < x.n(); ++n) {
    im2col(x.sample(n), g, cols.data());
    MapRM o(out.sample(n), opts_.out_channels, plane);
    o.noalias() = w * ConstMapRM(cols.data(), krows, plane);
    if (opts_.bias) o.colwise() += ConstVecMap(bias_.value.data(), opts_.out_channels);
  }
  return out;
}

Tensor Conv2d::forward(const Tensor& x) {
  input_ = x;
  if (!opts_.spectral_norm) return apply(x, weight_.value.data());
  refresh_effective_weight();
  return apply(x, effective_.data());
}

Tensor Conv2d::infer(const Tensor& x) const {
  if (!opts_.spectral_norm) return apply(x, weight_.value.data());
  AlignedBuffer effective, u, v;
  const int rows = opts_.out_channels;
  spectral_normalize(weight_.value.data(), rows, static_cast<int>(weight_.value.size()) / rows,
                     sn_u_.data(), effective, u, v);
  return apply(x, effective.data());
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int out_h = grad_out.h();
  const int out_w = grad_out.w();
  const ConvGeometry g{x.c(), x.h(), x.w(), opts_.kernel, opts_.stride, opts_.padding,
                       opts_.dilation, out_h, out_w};
  const int krows = x.c() * opts_.kernel * opts_.kernel;
  const int plane = out_h * out_w;
  const int cout = opts_.out_channels;
  const double* wptr = opts_.spectral_norm ? effective_.data() : weight_.value.data();
  ConstMapRM w(wptr, cout, krows);

  AlignedBuffer cols(static_cast<std::size_t>(krows) * plane);
  MatrixRM dw_eff = MatrixRM::Zero(requires_grad_ ? cout : 0, requires_grad_ ? krows : 0);
  Tensor dx(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    ConstMapRM go(grad_out.sample(n), cout, plane);
    if (requires_grad_) {
      im2col(x.sample(n), g, cols.data());
      dw_eff.noalias() += go * ConstMapRM(cols.data(), krows, plane).transpose();
      if (opts_.bias) VecMap(bias_.grad.data(), cout) += go.rowwise().sum();
    }
    MapRM(cols.data(), krows, plane).noalias() = w.transpose() * go;
    col2im(cols.data(), g, dx.sample(n));
  }

  if (requires_grad_) {
    MapRM dw(weight_.grad.data(), cout, krows);
    if (opts_.spectral_norm) {
      // W_eff = W / sigma with sigma = u^T W v and u, v held fixed.
      const double inner = (dw_eff.array() * w.array()).sum();
      ConstVecMap u(u_.data(), cout);
      ConstVecMap v(v_.data(), krows);
      dw += dw_eff / sigma_ - (inner / sigma_) * (u * v.transpose());
    } else {
      dw += dw_eff;
    }
  }
  return dx;
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_});
  if (opts_.bias) out.push_back({join_name(prefix, "bias"), &bias_});
}

void Conv2d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  if (opts_.spectral_norm) out.push_back({join_name(prefix, "sn_u"), &sn_u_});
}

// ---------------------------------------------------------------------------
// ConvTranspose2d, weight laid out (in, out, k, k).

ConvTranspose2d::ConvTranspose2d(const ConvOptions& opts, Rng& rng)
    : opts_(opts),
      weight_({opts.in_channels, opts.out_channels, opts.kernel, opts.kernel}),
      bias_({1, opts.bias ? opts.out_channels : 0, 1, 1}) {
  if (opts.in_channels <= 0 || opts.out_channels <= 0 || opts.kernel <= 0 || opts.stride <= 0) {
    throw ConfigError("invalid transposed convolution options");
  }
  if (opts.spectral_norm) throw ConfigError("spectral norm is not supported on conv_transpose2d");
  const double fan_in = static_cast<double>(opts.in_channels) * opts.kernel * opts.kernel /
                        (static_cast<double>(opts.stride) * opts.stride);
  he_normal(weight_.value, fan_in, rng);
}

Tensor ConvTranspose2d::infer(const Tensor& x) const {
  if (x.c() != opts_.in_channels) {
    throw ShapeError("conv_transpose2d expects " + std::to_string(opts_.in_channels) +
                     " channels, got " + x.shape().str());
  }
  const int out_h = (x.h() - 1) * opts_.stride - 2 * opts_.padding +
                    opts_.dilation * (opts_.kernel - 1) + 1;
  const int out_w = (x.w() - 1) * opts_.stride - 2 * opts_.padding +
                    opts_.dilation * (opts_.kernel - 1) + 1;
  const ConvGeometry g{opts_.out_channels, out_h, out_w, opts_.kernel, opts_.stride,
                       opts_.padding, opts_.dilation, x.h(), x.w()};
  const int krows = opts_.out_channels * opts_.kernel * opts_.kernel;
  const int plane = x.h() * x.w();
  AlignedBuffer cols(static_cast<std::size_t>(krows) * plane);
  ConstMapRM w(weight_.value.data(), opts_.in_channels, krows);
  Tensor out({x.n(), opts_.out_channels, out_h, out_w});
  for (int n = 0; n < x.n(); ++n) {
    MapRM(cols.data(), krows, plane).noalias() =
        w.transpose() * ConstMapRM(x.sample(n), opts_.in_channels, plane);
    col2im(cols.data(), g, out.sample(n));
    if (opts_.bias) {
      MapRM(out.sample(n), opts_.out_channels, out_h * out_w).colwise() +=
          ConstVecMap(bias_.value.data(), opts_.out_channels);
    }
  }
  return out;
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const ConvGeometry g{opts_.out_channels, grad_out.h(), grad_out.w(), opts_.kernel,
                       opts_.stride, opts_.padding, opts_.dilation, x.h(), x.w()};
  const int krows = opts_.out_channels * opts_.kernel * opts_.kernel;
  const int plane = x.h() * x.w();
  AlignedBuffer cols(static_cast<std::size_t>(krows) * plane);
  ConstMapRM w(weight_.value.data(), opts_.in_channels, krows);
  MapRM dw(weight_.grad.data(), opts_.in_channels, krows);
  Tensor dx(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    im2col(grad_out.sample(n), g, cols.data());
    ConstMapRM gc(cols.data(), krows, plane);
    MapRM(dx.sample(n), opts_.in_channels, plane).noalias() = w * gc;
    if (requires_grad_) {
      dw.noalias() += ConstMapRM(x.sample(n), opts_.in_channels, plane) * gc.transpose();
      if (opts_.bias) {
        VecMap(bias_.grad.data(), opts_.out_channels) +=
            ConstMapRM(grad_out.sample(n), opts_.out_channels, grad_out.h() * grad_out.w())
                .rowwise()
                .sum();
      }
    }
  }
  return dx;
}

void ConvTranspose2d::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_});
  if (opts_.bias) out.push_back({join_name(prefix, "bias"), &bias_});
}

// ---------------------------------------------------------------------------
// Pointwise activations

Tensor ReLU::infer(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor ReLU::forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = output_[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor LeakyReLU::infer(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  return out;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] = input_[i] > 0.0 ? grad_out[i] : slope_ * grad_out[i];
  }
  return dx;
}

Tensor Sigmoid::infer(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return out;
}

Tensor Sigmoid::forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] = grad_out[i] * output_[i] * (1.0 - output_[i]);
  }
  return dx;
}

Tensor Tanh::infer(const Tensor& x) const {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

Tensor Tanh::forward(const Tensor& x) {
  output_ = infer(x);
  return output_;
}

Tensor Tanh::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] = grad_out[i] * (1.0 - output_[i] * output_[i]);
  }
  return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
  input_shape_ = x.shape();
  Tensor out({x.n(), x.c(), x.h() / 2, x.w() / 2});
  argmax_.resize(out.size());
  std::size_t k = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < out.h(); ++oy) {
        for (int ox = 0; ox < out.w(); ++ox, ++k) {
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  ((static_cast<std::size_t>(n) * x.c() + c) * x.h() + 2 * oy + dy) * x.w() +
                  2 * ox + dx;
              if (x[idx] > best_v) {
                best_v = x[idx];
                best = idx;
              }
            }
          }
          out[k] = best_v;
          argmax_[k] = best;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::infer(const Tensor& x) const {
  Tensor out({x.n(), x.c(), x.h() / 2, x.w() / 2});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < out.h(); ++oy) {
        for (int ox = 0; ox < out.w(); ++ox) {
          out.at(n, c, oy, ox) =
              std::max(std::max(x.at(n, c, 2 * oy, 2 * ox), x.at(n, c, 2 * oy, 2 * ox + 1)),
                       std::max(x.at(n, c, 2 * oy + 1, 2 * ox), x.at(n, c, 2 * oy + 1, 2 * ox + 1)));
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(input_shape_);
  for (std::size_t k = 0; k < grad_out.size(); ++k) dx[argmax_[k]] += grad_out[k];
  return dx;
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h);
  return h;
}

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = layer->infer(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters(join_name(prefix, std::to_string(i)), out);
  }
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_buffers(join_name(prefix, std::to_string(i)), out);
  }
}

void Sequential::set_requires_grad(bool enabled) {
  requires_grad_ = enabled;
  for (auto& layer : layers_) layer->set_requires_grad(enabled);
}

void Sequential::walk(const std::string& path, const LayerVisitor& fn) const {
  fn(kind(), path);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->walk(join_name(path, std::to_string(i)), fn);
  }
}

std::string join_name(const std::string& prefix, std::string_view leaf) {
  if (prefix.empty()) return std::string(leaf);
  return prefix + "." + std::string(leaf);
}

std::size_t parameter_count(const std::vector<ParamRef>& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.param->value.size();
  return total;
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.param->grad.zero();
}

}  // namespace aot

#include "aot/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "aot/encoding.hpp"
#include "aot/error.hpp"

namespace aot {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using MapRM = Eigen::Map<MatrixRM>;

constexpr double kImageNetMean[3] = {0.485, 0.456, 0.406};
constexpr double kImageNetStd[3] = {0.229, 0.224, 0.225};

// VGG19 feature stack; 0 marks a 2x2 max pool.
constexpr int kVgg19[] = {64,  64,  0,   128, 128, 0,   256, 256, 256, 256, 0,
                          512, 512, 512, 512, 0,   512, 512, 512, 512, 0};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

FeatureExtractor FeatureExtractor::fixed_random(std::uint64_t seed, int width_divisor,
                                                std::vector<std::string> taps) {
  if (width_divisor < 1) throw ConfigError("extractor width divisor must be >= 1");
  std::vector<int> widths;
  for (int w : kVgg19) widths.push_back(w == 0 ? 0 : std::max(1, w / width_divisor));
  FeatureExtractor fx;
  Rng rng(mix_seed(seed, 0x766767ULL));
  fx.build(widths, &rng, std::move(taps));
  fx.source_ = ExtractorSource::kFixedRandom;
  return fx;
}

FeatureExtractor FeatureExtractor::from_archive(const Archive& weights,
                                                std::vector<std::string> taps) {
  std::vector<int> widths;
  int index = 0;
  for (int w : kVgg19) {
    if (w == 0) {
      widths.push_back(0);
      index += 1;
      continue;
    }
    const auto* t = weights.find("features." + std::to_string(index) + ".weight");
    widths.push_back(t && !t->dims.empty() ? static_cast<int>(t->dims[0]) : w);
    index += 2;
  }
  FeatureExtractor fx;
  Rng rng(0);
  fx.build(widths, &rng, std::move(taps));
  for (auto& p : fx.parameters()) {
    const auto& t = weights.get(p.name);
    if (t.numel() != p.param->value.size()) {
      throw Error(ErrorCode::kIncompatibleCheckpoint, "extractor tensor '" + p.name + "' has " +
                                                          std::to_string(t.numel()) + " elements");
    }
    std::copy(t.values.begin(), t.values.end(), p.param->value.data());
  }
  fx.source_ = ExtractorSource::kPretrainedFile;
  return fx;
}

FeatureExtractor FeatureExtractor::from_file(const std::filesystem::path& path,
                                             std::vector<std::string> taps) {
  return from_archive(load_archive(path), std::move(taps));
}

FeatureExtractor FeatureExtractor::identity() {
  FeatureExtractor fx;
  fx.source_ = ExtractorSource::kIdentity;
  fx.tap_names_ = {"input"};
  return fx;
}

FeatureExtractor FeatureExtractor::resolve(const ExtractorConfig& config) {
  if (config.source == "identity") return identity();
  if (config.source == "random") {
    return fixed_random(config.seed, config.width_divisor, config.taps);
  }
  if (config.source == "auto") {
    if (const char* dir = std::getenv("AOT_CACHE_DIR")) {
      const auto path = std::filesystem::path(dir) / kPretrainedWeightsFile;
      if (std::filesystem::exists(path)) return from_file(path, config.taps);
    }
    return fixed_random(config.seed, config.width_divisor, config.taps);
  }
  return from_file(config.source, config.taps);
}

void FeatureExtractor::build(const std::vector<int>& widths, Rng* rng,
                             std::vector<std::string> taps) {
  if (taps.empty()) throw ConfigError("extractor needs at least one tap");
  // Name every rectifier the way the VGG literature does (relu<stage>_<conv>).
  std::vector<std::string> names;
  std::vector<int> indices;
  std::vector<int> pools_before;
  int stage = 1;
  int conv = 1;
  int index = 0;
  int pools = 0;
  for (int w : widths) {
    if (w == 0) {
      names.push_back("pool" + std::to_string(stage));
      indices.push_back(index++);
      pools_before.push_back(pools);
      ++pools;
      ++stage;
      conv = 1;
      continue;
    }
    names.push_back("conv" + std::to_string(stage) + "_" + std::to_string(conv));
    indices.push_back(index++);
    pools_before.push_back(pools);
    names.push_back("relu" + std::to_string(stage) + "_" + std::to_string(conv));
    indices.push_back(index++);
    pools_before.push_back(pools);
    ++conv;
  }
  std::vector<std::size_t> tap_layers;
  for (const auto& t : taps) {
    auto it = std::find(names.begin(), names.end(), t);
    if (it == names.end() || t.rfind("relu", 0) != 0) {
      throw ConfigError("unknown extractor tap '" + t + "'");
    }
    tap_layers.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  if (!std::is_sorted(tap_layers.begin(), tap_layers.end())) {
    throw ConfigError("extractor taps must be listed shallow to deep");
  }
  const std::size_t last = tap_layers.back();

  int in = 3;
  std::size_t k = 0;
  for (int w : widths) {
    if (k > last) break;
    if (w == 0) {
      layers_.push_back(std::make_unique<MaxPool2d>());
      ++k;
      continue;
    }
    layers_.push_back(std::make_unique<Conv2d>(ConvOptions{in, w, 3, 1, 1, 1}, *rng));
    ++k;
    if (k <= last) {
      layers_.push_back(std::make_unique<ReLU>());
      ++k;
    }
    in = w;
  }
  layers_.resize(last + 1);
  layer_names_.assign(names.begin(), names.begin() + static_cast<long>(last) + 1);
  layer_index_.assign(indices.begin(), indices.begin() + static_cast<long>(last) + 1);
  tap_names_ = std::move(taps);
  tap_layers_ = std::move(tap_layers);
  min_resolution_ = 1 << pools_before[last];
  for (auto& l : layers_) l->set_requires_grad(false);
}

void FeatureExtractor::check_input(const Tensor& image) const {
  if (image.c() != 3) throw ShapeError("extractor expects RGB input, got " + image.shape().str());
  if (image.h() < min_resolution_ || image.w() < min_resolution_) {
    throw ShapeError("extractor needs at least " + std::to_string(min_resolution_) +
                     " pixels per side, got " + image.shape().str());
  }
}

Tensor FeatureExtractor::normalize(const Tensor& image) const {
  Tensor out(image.shape());
  const std::size_t plane = image.shape().plane();
  for (int n = 0; n < image.n(); ++n) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[off + i] = ((image[off + i] + 1.0) * 0.5 - kImageNetMean[c]) / kImageNetStd[c];
      }
    }
  }
  return out;
}

std::vector<Tensor> FeatureExtractor::forward(const Tensor& image) {
  check_input(image);
  if (source_ == ExtractorSource::kIdentity) return {image};
  std::vector<Tensor> taps;
  Tensor h = normalize(image);
  std::size_t next = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h);
    while (next < tap_layers_.size() && tap_layers_[next] == i) {
      taps.push_back(h);
      ++next;
    }
  }
  return taps;
}

std::vector<Tensor> FeatureExtractor::infer(const Tensor& image) const {
  check_input(image);
  if (source_ == ExtractorSource::kIdentity) return {image};
  std::vector<Tensor> taps;
  Tensor h = normalize(image);
  std::size_t next = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->infer(h);
    while (next < tap_layers_.size() && tap_layers_[next] == i) {
      taps.push_back(h);
      ++next;
    }
  }
  return taps;
}

Tensor FeatureExtractor::backward(const std::vector<Tensor>& tap_grads) {
  if (tap_grads.size() != tap_names_.size()) {
    throw ShapeError("extractor backward expects one gradient per tap");
  }
  if (source_ == ExtractorSource::kIdentity) return tap_grads[0];
  Tensor g;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    for (std::size_t t = 0; t < tap_layers_.size(); ++t) {
      if (tap_layers_[t] != i) continue;
      if (g.empty()) {
        g = tap_grads[t];
      } else {
        g += tap_grads[t];
      }
    }
    g = layers_[i]->backward(g);
  }
  // Chain through the [-1,1] -> ImageNet normalization.
  const std::size_t plane = g.shape().plane();
  for (int n = 0; n < g.n(); ++n) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) g[off + i] *= 0.5 / kImageNetStd[c];
    }
  }
  return g;
}

Tensor FeatureExtractor::pooled_features(const Tensor& image) const {
  const Tensor deep = infer(image).back();
  Tensor out({deep.n(), deep.c(), 1, 1});
  const std::size_t plane = deep.shape().plane();
  for (int n = 0; n < deep.n(); ++n) {
    for (int c = 0; c < deep.c(); ++c) {
      double acc = 0.0;
      for (int y = 0; y < deep.h(); ++y) {
        for (int x = 0; x < deep.w(); ++x) acc += deep.at(n, c, y, x);
      }
      out.at(n, c, 0, 0) = acc / static_cast<double>(plane);
    }
  }
  return out;
}

std::vector<ParamRef> FeatureExtractor::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters("features." + std::to_string(layer_index_[i]), out);
  }
  return out;
}

std::string FeatureExtractor::fingerprint() const {
  if (source_ == ExtractorSource::kIdentity) return "identity";
  std::vector<std::uint8_t> bytes;
  auto* self = const_cast<FeatureExtractor*>(this);
  for (const auto& p : self->parameters()) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.param->value.data());
    bytes.insert(bytes.end(), raw, raw + p.param->value.size() * sizeof(double));
  }
  return sha256_hex(bytes).substr(0, 16);
}

Archive FeatureExtractor::export_weights() {
  Archive a;
  a.metadata = {{"format", "aot-extractor"},
                {"topology", "vgg19"},
                {"taps", tap_names_},
                {"fingerprint", fingerprint()}};
  for (const auto& p : parameters()) {
    ArchiveTensor t;
    t.name = p.name;
    t.dtype = DType::kFloat32;
    const Shape s = p.param->value.shape();
    if (p.name.ends_with(".bias")) {
      t.dims = {static_cast<std::uint64_t>(s.c)};
    } else {
      t.dims = {std::uint64_t(s.n), std::uint64_t(s.c), std::uint64_t(s.h), std::uint64_t(s.w)};
    }
    t.values.assign(p.param->value.values().begin(), p.param->value.values().end());
    a.tensors.push_back(std::move(t));
  }
  return a;
}

// ---------------------------------------------------------------------------

void LossWeights::validate() const {
  if (lambda_adv < 0 || lambda_rec < 0 || lambda_per < 0 || lambda_sty < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

double l1_rec(const Tensor& x, const Tensor& g_out) {
  require_same_shape(x, g_out, "l1_rec");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - g_out[i]);
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

Tensor l1_rec_grad(const Tensor& x, const Tensor& g_out) {
  require_same_shape(x, g_out, "l1_rec");
  Tensor g(x.shape());
  const double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = sign(g_out[i] - x[i]) * inv;
  return g;
}

Tensor gram(const Tensor& features) {
  const int c = features.c();
  const int hw = features.h() * features.w();
  const double scale = 1.0 / (static_cast<double>(c) * hw);
  Tensor out({features.n(), 1, c, c});
  for (int n = 0; n < features.n(); ++n) {
    ConstMapRM f(features.sample(n), c, hw);
    MapRM(out.sample(n), c, c).noalias() = (f * f.transpose()) * scale;
  }
  return out;
}

Tensor gram_backward(const Tensor& features, const Tensor& grad_gram) {
  const int c = features.c();
  const int hw = features.h() * features.w();
  const double scale = 1.0 / (static_cast<double>(c) * hw);
  Tensor out(features.shape());
  for (int n = 0; n < features.n(); ++n) {
    ConstMapRM f(features.sample(n), c, hw);
    ConstMapRM dg(grad_gram.sample(n), c, c);
    MapRM(out.sample(n), c, hw).noalias() = ((dg + dg.transpose()) * f) * scale;
  }
  return out;
}

FeatureLoss perceptual_from_features(const std::vector<Tensor>& fx, const std::vector<Tensor>& fz) {
  if (fx.size() != fz.size()) throw ShapeError("perceptual: tap count mismatch");
  FeatureLoss out;
  for (std::size_t t = 0; t < fx.size(); ++t) {
    require_same_shape(fx[t], fz[t], "perceptual");
    const double inv = 1.0 / static_cast<double>(fx[t].size());
    Tensor g(fz[t].shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = fz[t][i] - fx[t][i];
      acc += std::abs(d);
      g[i] = sign(d) * inv;
    }
    out.value += acc * inv;
    out.tap_grads.push_back(std::move(g));
  }
  return out;
}

FeatureLoss style_from_features(const std::vector<Tensor>& fx, const std::vector<Tensor>& fz) {
  if (fx.size() != fz.size() || fx.empty()) throw ShapeError("style: tap count mismatch");
  FeatureLoss out;
  const double taps = static_cast<double>(fx.size());
  for (std::size_t t = 0; t < fx.size(); ++t) {
    require_same_shape(fx[t], fz[t], "style");
    const Tensor gx = gram(fx[t]);
    const Tensor gz = gram(fz[t]);
    const double inv = 1.0 / static_cast<double>(gx.size());
    Tensor dg(gz.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < dg.size(); ++i) {
      const double d = gz[i] - gx[i];
      acc += std::abs(d);
      dg[i] = sign(d) * inv / taps;
    }
    out.value += acc * inv / taps;
    out.tap_grads.push_back(gram_backward(fz[t], dg));
  }
  return out;
}

double perceptual(const Tensor& x, const Tensor& z, const FeatureExtractor& fx) {
  require_same_shape(x, z, "perceptual");
  return perceptual_from_features(fx.infer(x), fx.infer(z)).value;
}

double style(const Tensor& x, const Tensor& z, const FeatureExtractor& fx) {
  require_same_shape(x, z, "style");
  return style_from_features(fx.infer(x), fx.infer(z)).value;
}

double total_loss(const LossComponents& c, const LossWeights& w, long step) {
  for (double v : {c.adv, c.rec, c.per, c.sty}) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss component";
      if (step >= 0) os << " at step " << step;
      throw DivergenceError(step, os.str());
    }
  }
  return w.lambda_adv * c.adv + w.lambda_rec * c.rec + w.lambda_per * c.per +
         w.lambda_sty * c.sty;
}

}  // namespace aot

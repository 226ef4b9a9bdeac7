#include "aot/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aot/encoding.hpp"
#include "aot/error.hpp"
#include "aot/image_io.hpp"
#include "aot/masks.hpp"

namespace aot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "aot-checkpoint";
constexpr int kSchemaVersion = 1;

std::uint64_t gen_seed(std::uint64_t seed) { return mix_seed(seed, 0x6E6); }
std::uint64_t disc_seed(std::uint64_t seed) { return mix_seed(seed, 0xD15C); }
std::uint64_t sampler_seed(std::uint64_t seed) { return mix_seed(seed, 0x5A3F); }

AdamConfig adam_config(const TrainConfig& t) {
  return {t.lr, t.adam_beta1, t.adam_beta2, t.adam_eps};
}

// grad (N, C, H, W) times a one-channel mask broadcast over C.
Tensor mask_grad(const Tensor& grad, const Tensor& mask) {
  Tensor out(grad.shape());
  const std::size_t plane = grad.shape().plane();
  for (int n = 0; n < grad.n(); ++n) {
    const double* m = mask.sample(n);
    for (int c = 0; c < grad.c(); ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * grad.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = grad[off + i] * m[i];
    }
  }
  return out;
}

json report_json(const LossReport& r) {
  return json::array({r.step, r.adv_g, r.adv_d, r.rec, r.per, r.sty, r.total});
}

LossReport report_from(const json& j) {
  return {j[0].get<long>(),   j[1].get<double>(), j[2].get<double>(), j[3].get<double>(),
          j[4].get<double>(), j[5].get<double>(), j[6].get<double>()};
}

// Sections that must agree between a checkpoint and a run resuming it.
json resume_identity(const AppConfig& c) {
  json j = c.to_json();
  j["train"].erase("steps");
  j["train"].erase("checkpoint_every");
  j.erase("eval");
  j.erase("serve");
  j.erase("data");
  return j;
}

}  // namespace

Adam::Adam(std::vector<ParamRef> params, const AdamConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.param->value.shape());
    v_.emplace_back(p.param->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k].param;
    double* m = m_[k].data();
    double* v = v_[k].data();
    double* w = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::export_state(const std::string& prefix, Archive& out) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].name;
    const auto dims = stored_dims(name, m_[k].shape());
    out.tensors.push_back({prefix + name + ".m", dims, DType::kFloat64,
                           std::vector<double>(m_[k].values().begin(), m_[k].values().end())});
    out.tensors.push_back({prefix + name + ".v", dims, DType::kFloat64,
                           std::vector<double>(v_[k].values().begin(), v_[k].values().end())});
  }
}

void Adam::import_state(const std::string& prefix, const Archive& in, long steps_taken) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].name;
    for (auto [suffix, dst] : {std::pair{".m", &m_[k]}, std::pair{".v", &v_[k]}}) {
      const auto& t = in.get(prefix + name + suffix);
      if (t.values.size() != dst->size()) {
        throw Error(ErrorCode::kIncompatibleCheckpoint, "optimizer state for '" + name + "' has the wrong size");
      }
      std::copy(t.values.begin(), t.values.end(), dst->data());
    }
  }
  t_ = steps_taken;
}

double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.param->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      for (double& g : p.param->grad.values()) g *= scale;
    }
  }
  return norm;
}

std::string loss_csv_row(const LossReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.adv_g << ',' << r.adv_d << ',' << r.rec << ',' << r.per << ','
     << r.sty << ',' << r.total;
  return os.str();
}

std::vector<std::uint64_t> stored_dims(const std::string& name, const Shape& shape) {
  if (name.size() >= 5 && name.ends_with(".bias")) return {static_cast<std::uint64_t>(shape.c)};
  return {static_cast<std::uint64_t>(shape.n), static_cast<std::uint64_t>(shape.c),
          static_cast<std::uint64_t>(shape.h), static_cast<std::uint64_t>(shape.w)};
}

void append_parameters(const std::string& prefix, const std::vector<ParamRef>& params, DType dtype,
                       Archive& out) {
  for (const auto& p : params) {
    const auto& v = p.param->value;
    out.tensors.push_back({prefix + p.name, stored_dims(p.name, v.shape()), dtype,
                           std::vector<double>(v.values().begin(), v.values().end())});
  }
}

void load_parameters(const std::string& prefix, const std::vector<ParamRef>& params,
                     const Archive& in) {
  for (const auto& p : params) {
    const auto& t = in.get(prefix + p.name);
    if (t.dims != stored_dims(p.name, p.param->value.shape())) {
      throw Error(ErrorCode::kIncompatibleCheckpoint,
                  "tensor '" + prefix + p.name + "' has a shape that does not match the model");
    }
    std::copy(t.values.begin(), t.values.end(), p.param->value.data());
  }
}

Trainer::Trainer(const AppConfig& config) : Trainer(config, FeatureExtractor::resolve(config.extractor)) {}

Trainer::Trainer(const AppConfig& config, FeatureExtractor fx)
    : config_(config),
      gen_((config.validate(), config.generator), gen_seed(config.train.seed)),
      disc_(config.discriminator, disc_seed(config.train.seed)),
      fx_(std::move(fx)),
      opt_g_(gen_.parameters(), adam_config(config.train)),
      opt_d_(disc_.parameters(), adam_config(config.train)),
      rng_(sampler_seed(config.train.seed)) {
  if (config_.train.image_size < fx_.min_resolution()) {
    throw ConfigError("image_size is below the feature extractor's minimum resolution");
  }
}

LossReport Trainer::train_step(const Tensor& x, const Tensor& m) {
  validate_mask(m);
  if (x.c() != 3 || m.n() != x.n() || m.h() != x.h() || m.w() != x.w()) {
    throw ShapeError("train_step: image batch " + x.shape().str() + " and mask batch " +
                     m.shape().str() + " do not pair");
  }
  const long step = step_ + 1;
  const LossWeights& lw = config_.loss;
  const int factor = disc_.config().downsample_factor();

  // Generator output; z is treated as a constant input for the D update.
  const Tensor g = gen_.forward(mask_image(x, m), m);
  const Tensor z = compose(x, g, m);

  // Discriminator update.
  disc_.set_requires_grad(true);
  disc_.advance_power_iteration();
  zero_grads(opt_d_.params());
  const Tensor zx[] = {z, x};
  const Tensor pred = disc_.forward(concat_batch(zx));
  const Tensor pred_fake = slice_batch(pred, 0, x.n());
  const Tensor pred_real = slice_batch(pred, x.n(), x.n());
  const Tensor label = discriminator_target(m, config_.discriminator.target_mode, factor,
                                            config_.mask.kernel_size, config_.mask.sigma);
  const DLoss dl = d_loss_with_grad(pred_fake, pred_real, label);
  if (!std::isfinite(dl.value)) {
    throw DivergenceError(step, "discriminator loss is not finite at step " + std::to_string(step));
  }
  const Tensor dgrads[] = {dl.grad_fake, dl.grad_real};
  disc_.backward(concat_batch(dgrads));
  if (config_.train.grad_clip > 0) clip_grad_norm(opt_d_.params(), config_.train.grad_clip);
  opt_d_.step();

  // Generator update against the refreshed discriminator.
  disc_.set_requires_grad(false);
  LossComponents comp;
  const GAdvLoss ga = g_adv_loss_with_grad(disc_.forward(z), adversarial_weight(m, factor));
  comp.adv = ga.value;
  Tensor dz = disc_.backward(ga.grad_fake * lw.lambda_adv);

  const std::vector<Tensor> feats_x = fx_.infer(x);
  const std::vector<Tensor> feats_z = fx_.forward(z);
  const FeatureLoss per = perceptual_from_features(feats_x, feats_z);
  const FeatureLoss sty = style_from_features(feats_x, feats_z);
  comp.per = per.value;
  comp.sty = sty.value;
  std::vector<Tensor> tap_grads;
  for (std::size_t i = 0; i < feats_z.size(); ++i) {
    tap_grads.push_back(per.tap_grads[i] * lw.lambda_per + sty.tap_grads[i] * lw.lambda_sty);
  }
  dz += fx_.backward(tap_grads);

  comp.rec = l1_rec(x, g);
  const double total = total_loss(comp, lw, step);

  Tensor dg = l1_rec_grad(x, g) * lw.lambda_rec;
  dg += mask_grad(dz, m);
  zero_grads(opt_g_.params());
  gen_.backward(dg);
  if (config_.train.grad_clip > 0) clip_grad_norm(opt_g_.params(), config_.train.grad_clip);
  opt_g_.step();
  disc_.set_requires_grad(true);

  step_ = step;
  LossReport report{step, comp.adv, dl.value, comp.rec, comp.per, comp.sty, total};
  history_.push_back(report);
  while (history_.size() > static_cast<std::size_t>(config_.train.history)) history_.pop_front();
  return report;
}

void Trainer::sample_batch(const ImageSource& source, Tensor& images, Tensor& masks) {
  if (source.empty()) throw Error(ErrorCode::kNotFound, "training set is empty");
  const auto n = source.size();
  const auto batch = static_cast<std::size_t>(config_.train.batch_size);
  std::vector<std::size_t> picks;
  if (batch <= n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng_);
      std::swap(order[i], order[j]);
      picks.push_back(order[i]);
    }
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      picks.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_));
    }
  }

  std::vector<Tensor> imgs;
  std::vector<Tensor> ms;
  const auto& buckets = config_.train.mask_buckets;
  for (auto idx : picks) {
    imgs.push_back(config_.train.random_crop ? source.load_random_crop(idx, rng_) : source.load(idx));
    const auto b = std::uniform_int_distribution<std::size_t>(0, buckets.size() - 1)(rng_);
    const std::uint64_t mask_seed = rng_();
    ms.push_back(generate_free_form_mask(source.target_size(), source.target_size(), buckets[b], mask_seed));
  }
  images = concat_batch(imgs);
  masks = concat_batch(ms);
}

Archive Trainer::to_archive() const {
  auto& self = const_cast<Trainer&>(*this);  // parameter views are non-const handles
  Archive a;
  std::ostringstream rng_state;
  rng_state << rng_;
  json history = json::array();
  for (const auto& r : history_) history.push_back(report_json(r));
  a.metadata = {
      {"format", kCheckpointFormat},
      {"schema_version", kSchemaVersion},
      {"config", config_.to_json()},
      {"config_hash", config_.hash()},
      {"step", step_},
      {"seed", config_.train.seed},
      {"rng_state", rng_state.str()},
      {"extractor_fingerprint", fx_.fingerprint()},
      {"optimizer_steps", {{"generator", opt_g_.steps_taken()}, {"discriminator", opt_d_.steps_taken()}}},
      {"hyperparameters",
       {{"lambda_adv", config_.loss.lambda_adv},
        {"lambda_rec", config_.loss.lambda_rec},
        {"lambda_per", config_.loss.lambda_per},
        {"lambda_sty", config_.loss.lambda_sty},
        {"lr", config_.train.lr},
        {"adam_beta1", config_.train.adam_beta1},
        {"adam_beta2", config_.train.adam_beta2},
        {"batch_size", config_.train.batch_size}}},
      {"history", history},
  };
  append_parameters("generator.", self.gen_.parameters(), DType::kFloat64, a);
  append_parameters("discriminator.", self.disc_.parameters(), DType::kFloat64, a);
  for (const auto& b : self.disc_.buffers()) {
    const auto& v = *b.value;
    a.tensors.push_back({"discriminator." + b.name, {static_cast<std::uint64_t>(v.size())},
                         DType::kFloat64, std::vector<double>(v.values().begin(), v.values().end())});
  }
  opt_g_.export_state("optim.generator.", a);
  opt_d_.export_state("optim.discriminator.", a);
  return a;
}

void Trainer::save_checkpoint(const fs::path& path) const { save_archive(path, to_archive()); }

Trainer Trainer::from_archive(const Archive& a) {
  const json& meta = a.metadata;
  if (meta.value("format", "") != kCheckpointFormat) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "not a training checkpoint");
  }
  if (meta.value("schema_version", 0) != kSchemaVersion) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "unsupported checkpoint schema version");
  }
  AppConfig config;
  try {
    config = AppConfig::from_json(meta.at("config"));
  } catch (const Error& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, std::string("checkpoint config: ") + e.what());
  }
  Trainer t(config);
  if (meta.value("extractor_fingerprint", "") != t.fx_.fingerprint()) {
    throw Error(ErrorCode::kIncompatibleCheckpoint,
                "feature extractor differs from the one the checkpoint was trained with");
  }
  load_parameters("generator.", t.gen_.parameters(), a);
  load_parameters("discriminator.", t.disc_.parameters(), a);
  for (const auto& b : t.disc_.buffers()) {
    const auto& stored = a.get("discriminator." + b.name);
    if (stored.values.size() != b.value->size()) {
      throw Error(ErrorCode::kIncompatibleCheckpoint, "buffer '" + b.name + "' has the wrong size");
    }
    std::copy(stored.values.begin(), stored.values.end(), b.value->data());
  }
  const json& opt = meta.at("optimizer_steps");
  t.opt_g_.import_state("optim.generator.", a, opt.at("generator").get<long>());
  t.opt_d_.import_state("optim.discriminator.", a, opt.at("discriminator").get<long>());
  std::istringstream rng_state(meta.at("rng_state").get<std::string>());
  rng_state >> t.rng_;
  if (!rng_state) throw Error(ErrorCode::kIncompatibleCheckpoint, "corrupt RNG state");
  t.step_ = meta.at("step").get<long>();
  for (const auto& r : meta.at("history")) t.history_.push_back(report_from(r));
  return t;
}

Trainer Trainer::from_checkpoint(const fs::path& path) {
  const Archive a = load_archive(path);
  try {
    return from_archive(a);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + ": " + e.what());
  }
}

TrainResult train(const AppConfig& config, const ImageSource& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw Error(ErrorCode::kNotFound, "training set is empty");
  if (dataset.target_size() != config.train.image_size) {
    throw ConfigError("dataset resolution does not match train.image_size");
  }
  fs::create_directories(options.out_dir);

  std::optional<Trainer> trainer;
  if (options.resume) {
    trainer.emplace(Trainer::from_checkpoint(*options.resume));
    if (resume_identity(trainer->config()) != resume_identity(config)) {
      throw Error(ErrorCode::kIncompatibleCheckpoint,
                  "checkpoint was trained with a different configuration");
    }
  } else {
    trainer.emplace(config);
  }

  // Keep only CSV rows the resumed state has already accounted for.
  const fs::path csv_path = options.out_dir / kLossCsvFile;
  std::string csv = std::string(kLossCsvHeader) + "\n";
  if (options.resume && fs::exists(csv_path)) {
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stol(line.substr(0, line.find(','))) <= trainer->step()) csv += line + "\n";
    }
  }
  std::ofstream out(csv_path, std::ios::trunc);
  out << csv;
  out.flush();

  TrainResult result;
  Tensor images;
  Tensor masks;
  while (trainer->step() < config.train.steps) {
    trainer->sample_batch(dataset, images, masks);
    const LossReport r = trainer->train_step(images, masks);
    out << loss_csv_row(r) << "\n";
    out.flush();
    result.losses.push_back(r);
    if (options.on_step) options.on_step(r);
    if (config.train.checkpoint_every > 0 && r.step % config.train.checkpoint_every == 0) {
      trainer->save_checkpoint(options.out_dir / ("checkpoint_step" + std::to_string(r.step) + ".aot"));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + csv_path.string());
  result.checkpoint = options.out_dir / kFinalCheckpointFile;
  trainer->save_checkpoint(result.checkpoint);
  result.steps = trainer->step();
  return result;
}

InferenceModel load_inference_model(const fs::path& path) {
  const auto bytes = read_file(path);
  Archive a;
  try {
    a = parse_archive(bytes);
  } catch (const DecodeError& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + ": " + e.what());
  }
  if (a.metadata.value("format", "") != kCheckpointFormat) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + " is not a checkpoint");
  }
  try {
    AppConfig config = AppConfig::from_json(a.metadata.at("config"));
    Generator gen(config.generator, gen_seed(config.train.seed));
    load_parameters("generator.", gen.parameters(), a);
    return {std::move(config), std::move(gen), sha256_hex(bytes)};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path.string() + ": " + e.what());
  }
}

}  // namespace aot

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aot/archive.hpp"
#include "aot/config.hpp"
#include "aot/data.hpp"
#include "aot/discriminator.hpp"
#include "aot/generator.hpp"
#include "aot/losses.hpp"

namespace aot {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction and a constant learning rate.
class Adam {
 public:
  Adam(std::vector<ParamRef> params, const AdamConfig& config);

  void step();
  long steps_taken() const { return t_; }
  const std::vector<ParamRef>& params() const { return params_; }

  /// Moments as "<prefix><param>.m" / ".v" tensors.
  void export_state(const std::string& prefix, Archive& out) const;
  void import_state(const std::string& prefix, const Archive& in, long steps_taken);

 private:
  std::vector<ParamRef> params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

/// Scales every gradient so the joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm);

struct LossReport {
  long step = 0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double rec = 0.0;
  double per = 0.0;
  double sty = 0.0;
  double total = 0.0;
  bool operator==(const LossReport&) const = default;
};

inline constexpr const char* kLossCsvHeader = "step,adv_g,adv_d,rec,per,sty,total";
std::string loss_csv_row(const LossReport& r);

/// Generator, discriminator, both optimizers, the sampling RNG, and the loss
/// history. One train_step is one discriminator update followed by one
/// generator update.
class Trainer {
 public:
  explicit Trainer(const AppConfig& config);

  /// Restores every piece of state saved by save_checkpoint().
  static Trainer from_checkpoint(const std::filesystem::path& path);
  static Trainer from_archive(const Archive& archive);

  LossReport train_step(const Tensor& images, const Tensor& masks);

  /// Draws a batch and per-sample masks from the internal RNG.
  void sample_batch(const ImageSource& source, Tensor& images, Tensor& masks);

  Archive to_archive() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  const AppConfig& config() const { return config_; }
  long step() const { return step_; }
  Generator& generator() { return gen_; }
  Discriminator& discriminator() { return disc_; }
  FeatureExtractor& extractor() { return fx_; }
  const std::deque<LossReport>& history() const { return history_; }

 private:
  Trainer(const AppConfig& config, FeatureExtractor fx);

  AppConfig config_;
  Generator gen_;
  Discriminator disc_;
  FeatureExtractor fx_;
  Adam opt_g_;
  Adam opt_d_;
  Rng rng_;
  long step_ = 0;
  std::deque<LossReport> history_;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Called after every step.
  std::function<void(const LossReport&)> on_step;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  long steps = 0;
  std::vector<LossReport> losses;  ///< Steps run by this call.
};

inline constexpr const char* kFinalCheckpointFile = "checkpoint.aot";
inline constexpr const char* kLossCsvFile = "losses.csv";

/// Runs config.train.steps total steps (counting any resumed ones), writing
/// periodic checkpoints, the final checkpoint, and the loss CSV to out_dir.
TrainResult train(const AppConfig& config, const ImageSource& dataset, const TrainOptions& options);

/// Frozen generator for inference, plus the checkpoint's identity.
struct InferenceModel {
  AppConfig config;
  Generator generator;
  std::string fingerprint;  ///< SHA-256 of the checkpoint file.
};

InferenceModel load_inference_model(const std::filesystem::path& path);

/// Converts a parameter shape to its stored dims (biases are 1-D).
std::vector<std::uint64_t> stored_dims(const std::string& name, const Shape& shape);
void append_parameters(const std::string& prefix, const std::vector<ParamRef>& params, DType dtype,
                       Archive& out);
void load_parameters(const std::string& prefix, const std::vector<ParamRef>& params,
                     const Archive& in);

}  // namespace aot

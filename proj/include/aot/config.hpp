#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aot/discriminator.hpp"
#include "aot/generator.hpp"
#include "aot/losses.hpp"
#include "aot/masks.hpp"
#include "json.hpp"

namespace aot {

struct MaskConfig {
  int kernel_size = 70;
  /// <= 0 selects kernel_size / 6.
  double sigma = 0.0;
};

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  long steps = 500;
  int image_size = 512;
  std::uint64_t seed = 0;
  std::vector<RatioBucket> mask_buckets = standard_buckets();
  /// 0 disables periodic checkpoints.
  long checkpoint_every = 0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  bool random_crop = false;
  /// Capacity of the in-memory loss history ring buffer.
  int history = 1000;
};

struct DataConfig {
  double split_fraction = 0.9;
  std::uint64_t split_seed = 0;
  /// "all", "train", or "test".
  std::string split = "all";
};

struct EvalConfig {
  std::vector<RatioBucket> buckets = standard_buckets();
  std::uint64_t seed = 0;
  int image_size = 512;
  /// 0 evaluates every image.
  int max_images = 0;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int max_inflight = 4;
  int max_side = 512;
  std::size_t max_payload_bytes = 16u << 20;
};

/// One schema shared by train, eval, and serve. Every field is optional in
/// the JSON form; absent fields take the preset's value.
struct AppConfig {
  std::string preset = "paper";
  GeneratorConfig generator{};
  DiscriminatorConfig discriminator{};
  MaskConfig mask{};
  LossWeights loss{};
  ExtractorConfig extractor{};
  TrainConfig train{};
  DataConfig data{};
  EvalConfig eval{};
  ServeConfig serve{};

  /// "paper": full-scale layout. "desk": same structure at width 32 and 64 px.
  static AppConfig preset_named(const std::string& name);

  nlohmann::json to_json() const;
  /// Strict: keys absent from the schema are errors.
  static AppConfig from_json(const nlohmann::json& j);
  static AppConfig load(const std::string& path);

  /// "section.key=value"; the value is parsed as JSON, falling back to a string.
  void apply_override(const std::string& assignment);
  void validate() const;
  /// Digest of the canonical JSON form.
  std::string hash() const;
};

}  // namespace aot

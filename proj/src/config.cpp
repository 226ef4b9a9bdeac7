#include "aot/config.hpp"

#include <fstream>
#include <sstream>

#include "aot/encoding.hpp"
#include "aot/error.hpp"

namespace aot {

using nlohmann::json;

namespace {

json buckets_json(const std::vector<RatioBucket>& buckets) {
  json out = json::array();
  for (const auto& b : buckets) out.push_back(json::array({b.low, b.high}));
  return out;
}

std::vector<RatioBucket> buckets_from(const json& j) {
  if (j.is_string()) return parse_buckets(j.get<std::string>());
  std::vector<RatioBucket> out;
  for (const auto& item : j) {
    if (item.is_string()) {
      for (const auto& b : parse_buckets(item.get<std::string>())) out.push_back(b);
      continue;
    }
    if (!item.is_array() || item.size() != 2) throw ConfigError("bucket must be [low, high]");
    RatioBucket b{item[0].get<double>(), item[1].get<double>()};
    b.validate();
    out.push_back(b);
  }
  if (out.empty()) throw ConfigError("bucket list is empty");
  return out;
}

// Bucket lists are leaves: they replace the base value instead of merging.
bool is_leaf_key(const std::string& key) { return key == "mask_buckets" || key == "buckets"; }

void strict_merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError(path + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key_path + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && !is_leaf_key(it.key())) {
      strict_merge(slot, it.value(), key_path);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

AppConfig AppConfig::preset_named(const std::string& name) {
  AppConfig c;
  c.preset = name;
  if (name == "paper") return c;
  if (name == "desk") {
    c.generator = GeneratorConfig::desk_scale(32);
    c.discriminator.base_channels = 16;
    c.extractor.source = "random";
    c.train.image_size = 64;
    c.eval.image_size = 64;
    c.serve.max_side = 512;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

json AppConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["generator"] = {
      {"input_channels", generator.input_channels},
      {"base_width", generator.base_width},
      {"num_blocks", generator.num_blocks},
      {"output_channels", generator.output_channels},
      {"block",
       {{"width", generator.block.width},
        {"rates", generator.block.rates},
        {"residual_mode", to_string(generator.block.residual_mode)},
        {"kernel_size", generator.block.kernel_size}}},
  };
  j["discriminator"] = {
      {"num_layers", discriminator.num_layers},
      {"base_channels", discriminator.base_channels},
      {"target_mode", to_string(discriminator.target_mode)},
      {"spectral_norm", discriminator.spectral_norm},
  };
  j["mask"] = {{"kernel_size", mask.kernel_size}, {"sigma", mask.sigma}};
  j["loss"] = {
      {"lambda_adv", loss.lambda_adv},
      {"lambda_rec", loss.lambda_rec},
      {"lambda_per", loss.lambda_per},
      {"lambda_sty", loss.lambda_sty},
  };
  j["extractor"] = {
      {"source", extractor.source},
      {"seed", extractor.seed},
      {"width_divisor", extractor.width_divisor},
      {"taps", extractor.taps},
  };
  j["train"] = {
      {"batch_size", train.batch_size},
      {"lr", train.lr},
      {"adam_beta1", train.adam_beta1},
      {"adam_beta2", train.adam_beta2},
      {"adam_eps", train.adam_eps},
      {"steps", train.steps},
      {"image_size", train.image_size},
      {"seed", train.seed},
      {"mask_buckets", buckets_json(train.mask_buckets)},
      {"checkpoint_every", train.checkpoint_every},
      {"grad_clip", train.grad_clip},
      {"random_crop", train.random_crop},
      {"history", train.history},
  };
  j["data"] = {
      {"split_fraction", data.split_fraction},
      {"split_seed", data.split_seed},
      {"split", data.split},
  };
  j["eval"] = {
      {"buckets", buckets_json(eval.buckets)},
      {"seed", eval.seed},
      {"image_size", eval.image_size},
      {"max_images", eval.max_images},
  };
  j["serve"] = {
      {"host", serve.host},
      {"port", serve.port},
      {"max_inflight", serve.max_inflight},
      {"max_side", serve.max_side},
      {"max_payload_bytes", serve.max_payload_bytes},
  };
  return j;
}

AppConfig AppConfig::from_json(const json& patch) {
  if (!patch.is_object()) throw ConfigError("config document must be a JSON object");
  std::string preset = "paper";
  if (patch.contains("preset")) {
    if (!patch["preset"].is_string()) throw ConfigError("preset must be a string");
    preset = patch["preset"].get<std::string>();
  }
  json j = preset_named(preset).to_json();
  strict_merge(j, patch, "");

  AppConfig c;
  c.preset = preset;
  const json& g = j["generator"];
  c.generator.input_channels = get<int>(g, "input_channels");
  c.generator.base_width = get<int>(g, "base_width");
  c.generator.num_blocks = get<int>(g, "num_blocks");
  c.generator.output_channels = get<int>(g, "output_channels");
  const json& b = g["block"];
  c.generator.block.width = get<int>(b, "width");
  c.generator.block.rates = get<std::vector<int>>(b, "rates");
  c.generator.block.residual_mode = parse_residual_mode(get<std::string>(b, "residual_mode"));
  c.generator.block.kernel_size = get<int>(b, "kernel_size");

  const json& d = j["discriminator"];
  c.discriminator.num_layers = get<int>(d, "num_layers");
  c.discriminator.base_channels = get<int>(d, "base_channels");
  c.discriminator.target_mode = parse_target_mode(get<std::string>(d, "target_mode"));
  c.discriminator.spectral_norm = get<bool>(d, "spectral_norm");

  c.mask.kernel_size = get<int>(j["mask"], "kernel_size");
  c.mask.sigma = get<double>(j["mask"], "sigma");

  const json& l = j["loss"];
  c.loss.lambda_adv = get<double>(l, "lambda_adv");
  c.loss.lambda_rec = get<double>(l, "lambda_rec");
  c.loss.lambda_per = get<double>(l, "lambda_per");
  c.loss.lambda_sty = get<double>(l, "lambda_sty");

  const json& e = j["extractor"];
  c.extractor.source = get<std::string>(e, "source");
  c.extractor.seed = get<std::uint64_t>(e, "seed");
  c.extractor.width_divisor = get<int>(e, "width_divisor");
  c.extractor.taps = get<std::vector<std::string>>(e, "taps");

  const json& t = j["train"];
  c.train.batch_size = get<int>(t, "batch_size");
  c.train.lr = get<double>(t, "lr");
  c.train.adam_beta1 = get<double>(t, "adam_beta1");
  c.train.adam_beta2 = get<double>(t, "adam_beta2");
  c.train.adam_eps = get<double>(t, "adam_eps");
  c.train.steps = get<long>(t, "steps");
  c.train.image_size = get<int>(t, "image_size");
  c.train.seed = get<std::uint64_t>(t, "seed");
  c.train.mask_buckets = buckets_from(t["mask_buckets"]);
  c.train.checkpoint_every = get<long>(t, "checkpoint_every");
  c.train.grad_clip = get<double>(t, "grad_clip");
  c.train.random_crop = get<bool>(t, "random_crop");
  c.train.history = get<int>(t, "history");

  const json& da = j["data"];
  c.data.split_fraction = get<double>(da, "split_fraction");
  c.data.split_seed = get<std::uint64_t>(da, "split_seed");
  c.data.split = get<std::string>(da, "split");

  const json& ev = j["eval"];
  c.eval.buckets = buckets_from(ev["buckets"]);
  c.eval.seed = get<std::uint64_t>(ev, "seed");
  c.eval.image_size = get<int>(ev, "image_size");
  c.eval.max_images = get<int>(ev, "max_images");

  const json& s = j["serve"];
  c.serve.host = get<std::string>(s, "host");
  c.serve.port = get<int>(s, "port");
  c.serve.max_inflight = get<int>(s, "max_inflight");
  c.serve.max_side = get<int>(s, "max_side");
  c.serve.max_payload_bytes = get<std::size_t>(s, "max_payload_bytes");

  c.validate();
  return c;
}

AppConfig AppConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open config '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void AppConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }

  // Build a nested patch {"a": {"b": value}} from "a.b".
  json patch = json::object();
  json* cursor = &patch;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    keys.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) cursor = &(*cursor)[keys[i]];
  (*cursor)[keys.back()] = value;

  json current = to_json();
  if (keys.size() == 1 && keys[0] == "preset") {
    // Switching preset resets everything else to that preset's defaults.
    *this = from_json(patch);
    return;
  }
  strict_merge(current, patch, "");
  *this = from_json(current);
}

void AppConfig::validate() const {
  generator.validate();
  discriminator.validate();
  loss.validate();
  if (mask.kernel_size < 1) throw ConfigError("mask.kernel_size must be positive");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (train.adam_beta1 < 0 || train.adam_beta1 >= 1 || train.adam_beta2 < 0 ||
      train.adam_beta2 >= 1) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(train.adam_eps > 0)) throw ConfigError("train.adam_eps must be positive");
  if (train.steps < 0) throw ConfigError("train.steps must be non-negative");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  if (train.grad_clip < 0) throw ConfigError("train.grad_clip must be non-negative");
  if (train.history < 1) throw ConfigError("train.history must be positive");
  const int factor = discriminator.downsample_factor();
  for (int size : {train.image_size, eval.image_size}) {
    if (size < 32 || size % factor != 0) {
      throw ConfigError("image_size " + std::to_string(size) + " must be >= 32 and divisible by " +
                        std::to_string(factor));
    }
  }
  if (!(data.split_fraction > 0 && data.split_fraction < 1)) {
    throw ConfigError("data.split_fraction must lie in (0, 1)");
  }
  if (data.split != "all" && data.split != "train" && data.split != "test") {
    throw ConfigError("data.split must be all, train, or test");
  }
  if (eval.max_images < 0) throw ConfigError("eval.max_images must be non-negative");
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve.port out of range");
  if (serve.max_inflight < 1) throw ConfigError("serve.max_inflight must be positive");
  if (serve.max_side < 16) throw ConfigError("serve.max_side must be at least 16");
  if (serve.max_payload_bytes < 1) throw ConfigError("serve.max_payload_bytes must be positive");
}

std::string AppConfig::hash() const { return sha256_hex(to_json().dump()); }

}  // namespace aot

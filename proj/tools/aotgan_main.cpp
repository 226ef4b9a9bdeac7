// Command-line front end. Talks to the library only through the C API.
//
// Exit codes: 0 success, otherwise the aot_status value of the failure
// (2 missing file, 3 shape mismatch, 4 incompatible checkpoint, ...).

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "aotgan/aotgan.h"
#include "json.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int report(aot_status status) {
  if (status != AOT_OK) {
    std::fprintf(stderr, "error (%s): %s\n", aot_status_name(status), aot_last_error());
  }
  return static_cast<int>(status);
}

struct Globals {
  std::string config_path;
  long long seed = -1;
  std::string device = "cpu";
  std::string out;
  std::string buckets;
  std::vector<std::string> overrides;
  int verbosity = 0;
};

// Config file, then the dedicated flags, then --override (overrides win).
aot_status build_config(const Globals& g, aot_config** out) {
  if (g.device != "cpu") {
    std::fprintf(stderr, "error: device '%s' is not available (only cpu)\n", g.device.c_str());
    return AOT_ERR_CONFIG;
  }
  aot_config* c = nullptr;
  aot_status s = aot_config_load(g.config_path.empty() ? nullptr : g.config_path.c_str(), &c);
  if (s != AOT_OK) return s;
  std::vector<std::string> assignments;
  if (g.seed >= 0) {
    assignments.push_back("train.seed=" + std::to_string(g.seed));
    assignments.push_back("eval.seed=" + std::to_string(g.seed));
  }
  if (!g.buckets.empty()) {
    const std::string quoted = nlohmann::json(g.buckets).dump();
    assignments.push_back("train.mask_buckets=" + quoted);
    assignments.push_back("eval.buckets=" + quoted);
  }
  assignments.insert(assignments.end(), g.overrides.begin(), g.overrides.end());
  for (const auto& a : assignments) {
    s = aot_config_override(c, a.c_str());
    if (s != AOT_OK) {
      aot_config_free(c);
      return s;
    }
  }
  *out = c;
  return AOT_OK;
}

nlohmann::json config_json(const aot_config* c) {
  char* text = nullptr;
  if (aot_config_to_json(c, &text) != AOT_OK) return {};
  auto j = nlohmann::json::parse(text);
  aot_string_free(text);
  return j;
}

struct ConfigHandle {
  aot_config* ptr = nullptr;
  ~ConfigHandle() { aot_config_free(ptr); }
};

void print_step(const aot_loss_report* r, void* user) {
  const int verbosity = *static_cast<const int*>(user);
  if (verbosity > 0 || r->step % 10 == 0 || r->step == 1) {
    std::printf("step %ld  adv_g %.5f  adv_d %.5f  rec %.5f  per %.5f  sty %.5f  total %.5f\n",
                r->step, r->adv_g, r->adv_d, r->rec, r->per, r->sty, r->total);
    std::fflush(stdout);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AOT-GAN image inpainting: train, infer, evaluate, generate masks, serve"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "Seed for training and evaluation");
  app.add_option("--device", g.device, "Compute device (cpu)");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--buckets", g.buckets, "Hole-ratio buckets, e.g. paper or 10-20%,20-30%");
  app.add_option("--override", g.overrides, "Config override key=value (repeatable)");
  app.add_flag("-v,--verbose", g.verbosity, "More output");

  // train
  auto* train = app.add_subcommand("train", "Train a model on an image directory");
  std::string train_data, resume;
  train->add_option("--data", train_data, "Image directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  // infer
  auto* infer = app.add_subcommand("infer", "Inpaint one image");
  std::string checkpoint, image, mask;
  int max_side = 0;
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer->add_option("--image", image, "Input image (PNG or JPEG)")->required();
  infer->add_option("--mask", mask, "Mask PNG, 255 = hole")->required();
  infer->add_option("--max-side", max_side, "Downscale for inference above this size (0 = never)");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint over hole-ratio buckets");
  std::string eval_data;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Image directory")->required();

  // genmask
  auto* genmask = app.add_subcommand("genmask", "Write a free-form mask PNG");
  int height = 512, width = 512;
  genmask->add_option("--height", height, "Mask height");
  genmask->add_option("--width", width, "Mask width");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  std::string serve_checkpoint, host;
  int port = -1, max_inflight = -1;
  serve->add_option("--checkpoint", serve_checkpoint, "Checkpoint to serve");
  serve->add_option("--port", port, "Listen port");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--max-inflight", max_inflight, "Concurrent request limit");

  // export-weights
  auto* export_w = app.add_subcommand("export-weights", "Write weights as a tensor archive");
  std::string export_checkpoint;
  export_w->add_option("--checkpoint", export_checkpoint,
                       "Export this checkpoint's generator instead of the feature extractor");

  CLI11_PARSE(app, argc, argv);

  if (port >= 0) g.overrides.push_back("serve.port=" + std::to_string(port));
  if (max_inflight >= 0) g.overrides.push_back("serve.max_inflight=" + std::to_string(max_inflight));
  if (!host.empty()) g.overrides.push_back("serve.host=" + nlohmann::json(host).dump());

  ConfigHandle cfg;
  if (const aot_status s = build_config(g, &cfg.ptr); s != AOT_OK) return report(s);

  if (*train) {
    const std::string out = g.out.empty() ? "runs/train" : g.out;
    const aot_status s = aot_train(cfg.ptr, train_data.c_str(), out.c_str(),
                                   resume.empty() ? nullptr : resume.c_str(), print_step, &g.verbosity);
    if (s == AOT_OK) std::printf("checkpoint written to %s/checkpoint.aot\n", out.c_str());
    return report(s);
  }

  if (*infer) {
    if (g.out.empty()) {
      std::fprintf(stderr, "error: infer needs --out\n");
      return AOT_ERR_INVALID_ARGUMENT;
    }
    aot_model* model = nullptr;
    aot_status s = aot_model_load(checkpoint.c_str(), &model);
    if (s != AOT_OK) return report(s);
    double ratio = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    s = aot_inpaint_files(model, image.c_str(), mask.c_str(), g.out.c_str(), max_side, &ratio);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (s == AOT_OK) {
      std::printf("wrote %s (hole ratio %.4f, %.0f ms, model %s)\n", g.out.c_str(), ratio, ms,
                  aot_model_fingerprint(model));
    }
    aot_model_free(model);
    return report(s);
  }

  if (*eval) {
    const std::string out = g.out.empty() ? "metrics.csv" : g.out;
    char* table = nullptr;
    const aot_status s = aot_evaluate(cfg.ptr, checkpoint.c_str(), eval_data.c_str(), out.c_str(), &table);
    if (s == AOT_OK) {
      std::fputs(table, stdout);
      aot_string_free(table);
    }
    return report(s);
  }

  if (*genmask) {
    if (g.out.empty()) {
      std::fprintf(stderr, "error: genmask needs --out\n");
      return AOT_ERR_INVALID_ARGUMENT;
    }
    const auto j = config_json(cfg.ptr);
    const auto& buckets = j["eval"]["buckets"];
    if (!g.buckets.empty() && buckets.size() != 1) {
      std::fprintf(stderr, "error: genmask takes exactly one bucket\n");
      return AOT_ERR_INVALID_ARGUMENT;
    }
    // Without --buckets, the bucket is picked from the standard six by seed.
    const auto seed = static_cast<std::uint64_t>(g.seed < 0 ? 0 : g.seed);
    const auto& b = g.buckets.empty() ? buckets[seed % buckets.size()] : buckets[0];
    double ratio = 0.0;
    const aot_status s = aot_generate_mask(height, width, b[0].get<double>(), b[1].get<double>(),
                                           seed, g.out.c_str(), &ratio);
    if (s == AOT_OK) std::printf("wrote %s (hole ratio %.4f)\n", g.out.c_str(), ratio);
    return report(s);
  }

  if (*serve) {
    aot_server* server = nullptr;
    aot_status s = aot_server_create(cfg.ptr, serve_checkpoint.empty() ? nullptr : serve_checkpoint.c_str(),
                                     &server);
    if (s != AOT_OK) return report(s);
    int bound = 0;
    s = aot_server_start(server, &bound);
    if (s != AOT_OK) {
      aot_server_free(server);
      return report(s);
    }
    std::printf("listening on port %d\n", bound);
    std::fflush(stdout);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    s = aot_server_stop(server);
    aot_server_free(server);
    return report(s);
  }

  if (*export_w) {
    if (g.out.empty()) {
      std::fprintf(stderr, "error: export-weights needs --out\n");
      return AOT_ERR_INVALID_ARGUMENT;
    }
    const aot_status s = aot_export_weights(
        cfg.ptr, export_checkpoint.empty() ? nullptr : export_checkpoint.c_str(), g.out.c_str());
    if (s == AOT_OK) std::printf("wrote %s\n", g.out.c_str());
    return report(s);
  }
  return 0;
}

#include "aotgan/aotgan.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include "aot/config.hpp"
#include "aot/data.hpp"
#include "aot/error.hpp"
#include "aot/image_io.hpp"
#include "aot/masks.hpp"
#include "aot/metrics.hpp"
#include "aot/service.hpp"
#include "aot/trainer.hpp"

struct aot_config {
  aot::AppConfig value;
};

struct aot_model {
  aot::InferenceModel value;
};

struct aot_server {
  std::unique_ptr<aot::InpaintService> service;
};

namespace {

namespace fs = std::filesystem;

thread_local std::string g_last_error;

aot_status fail(aot_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

aot_status from_code(aot::ErrorCode code) {
  switch (code) {
    case aot::ErrorCode::kInvalidArgument: return AOT_ERR_INVALID_ARGUMENT;
    case aot::ErrorCode::kNotFound: return AOT_ERR_NOT_FOUND;
    case aot::ErrorCode::kShapeMismatch: return AOT_ERR_SHAPE_MISMATCH;
    case aot::ErrorCode::kIncompatibleCheckpoint: return AOT_ERR_INCOMPATIBLE_CHECKPOINT;
    case aot::ErrorCode::kConfig: return AOT_ERR_CONFIG;
    case aot::ErrorCode::kDivergence: return AOT_ERR_DIVERGENCE;
    case aot::ErrorCode::kDecode: return AOT_ERR_DECODE;
    case aot::ErrorCode::kUnreachableBucket: return AOT_ERR_UNREACHABLE_BUCKET;
    case aot::ErrorCode::kIo: return AOT_ERR_IO;
    case aot::ErrorCode::kInternal: return AOT_ERR_INTERNAL;
  }
  return AOT_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into status codes.
template <typename F>
aot_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    fn();
    return AOT_OK;
  } catch (const aot::Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(AOT_ERR_INTERNAL, "out of memory");
  } catch (const fs::filesystem_error& e) {
    return fail(AOT_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(AOT_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw aot::Error(aot::ErrorCode::kInvalidArgument, what);
}

aot::Split parse_split(const std::string& s) {
  if (s == "train") return aot::Split::kTrain;
  if (s == "test") return aot::Split::kTest;
  return aot::Split::kAll;
}

aot::ImageSource open_corpus(const aot::AppConfig& c, const char* dir, int size) {
  return aot::open_source(dir, parse_split(c.data.split), c.data.split_fraction, c.data.split_seed, size);
}

}  // namespace

extern "C" {

const char* aot_last_error(void) { return g_last_error.c_str(); }

const char* aot_status_name(aot_status status) {
  switch (status) {
    case AOT_OK: return "ok";
    case AOT_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case AOT_ERR_NOT_FOUND: return "not_found";
    case AOT_ERR_SHAPE_MISMATCH: return "shape_mismatch";
    case AOT_ERR_INCOMPATIBLE_CHECKPOINT: return "incompatible_checkpoint";
    case AOT_ERR_CONFIG: return "config";
    case AOT_ERR_DIVERGENCE: return "divergence";
    case AOT_ERR_DECODE: return "decode";
    case AOT_ERR_UNREACHABLE_BUCKET: return "unreachable_bucket";
    case AOT_ERR_IO: return "io";
    case AOT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void aot_string_free(char* s) { std::free(s); }

aot_status aot_config_load(const char* path, aot_config** out) {
  return guarded([&] {
    require(out != nullptr, "out is null");
    auto c = std::make_unique<aot_config>();
    c->value = path ? aot::AppConfig::load(path) : aot::AppConfig::preset_named("paper");
    *out = c.release();
  });
}

aot_status aot_config_override(aot_config* config, const char* assignment) {
  return guarded([&] {
    require(config && assignment, "null argument");
    config->value.apply_override(assignment);
  });
}

aot_status aot_config_to_json(const aot_config* config, char** out_json) {
  return guarded([&] {
    require(config && out_json, "null argument");
    *out_json = dup_string(config->value.to_json().dump(2));
  });
}

void aot_config_free(aot_config* config) { delete config; }

aot_status aot_model_load(const char* checkpoint_path, aot_model** out) {
  return guarded([&] {
    require(checkpoint_path && out, "null argument");
    *out = new aot_model{aot::load_inference_model(checkpoint_path)};
  });
}

void aot_model_free(aot_model* model) { delete model; }

const char* aot_model_fingerprint(const aot_model* model) {
  return model ? model->value.fingerprint.c_str() : "";
}

aot_status aot_model_info(const aot_model* model, char** out_json) {
  return guarded([&] {
    require(model && out_json, "null argument");
    const auto& g = model->value.config.generator;
    nlohmann::json j = {{"fingerprint", model->value.fingerprint},
                        {"blocks", g.num_blocks},
                        {"rates", g.block.rates},
                        {"width", g.base_width},
                        {"residual_mode", aot::to_string(g.block.residual_mode)}};
    *out_json = dup_string(j.dump());
  });
}

aot_status aot_inpaint_files(const aot_model* model, const char* image_path, const char* mask_path,
                             const char* out_path, int max_side, double* hole_ratio) {
  return guarded([&] {
    require(model && image_path && mask_path && out_path, "null argument");
    const aot::Tensor image = aot::image_to_tensor(aot::load_image(image_path));
    const aot::Tensor mask = aot::load_mask(mask_path);
    if (image.h() != mask.h() || image.w() != mask.w()) {
      throw aot::ShapeError("image is " + std::to_string(image.w()) + "x" + std::to_string(image.h()) +
                            " but mask is " + std::to_string(mask.w()) + "x" + std::to_string(mask.h()));
    }
    const auto result = aot::inpaint_any_size(model->value.generator, image, mask, max_side);
    aot::save_png(out_path, aot::tensor_to_image(result.result));
    if (hole_ratio) *hole_ratio = aot::compute_hole_ratio(mask);
  });
}

aot_status aot_inpaint_rgb8(const aot_model* model, const uint8_t* rgb, const uint8_t* mask,
                            int width, int height, int max_side, uint8_t* out_rgb) {
  return guarded([&] {
    require(model && rgb && mask && out_rgb, "null argument");
    require(width > 0 && height > 0, "width and height must be positive");
    aot::Image8 img(width, height, 3);
    std::memcpy(img.pixels.data(), rgb, img.pixels.size());
    aot::Tensor m({1, 1, height, width});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask[i] ? 1.0 : 0.0;
    const auto result = aot::inpaint_any_size(model->value.generator, aot::image_to_tensor(img), m, max_side);
    const aot::Image8 out = aot::tensor_to_image(result.result);
    std::memcpy(out_rgb, out.pixels.data(), out.pixels.size());
  });
}

aot_status aot_train(const aot_config* config, const char* corpus_dir, const char* out_dir,
                     const char* resume_path, aot_step_callback callback, void* user) {
  return guarded([&] {
    require(config && corpus_dir && out_dir, "null argument");
    const auto& c = config->value;
    const auto source = open_corpus(c, corpus_dir, c.train.image_size);
    aot::TrainOptions opts;
    opts.out_dir = out_dir;
    if (resume_path) opts.resume = fs::path(resume_path);
    if (callback) {
      opts.on_step = [callback, user](const aot::LossReport& r) {
        const aot_loss_report rep{r.step, r.adv_g, r.adv_d, r.rec, r.per, r.sty, r.total};
        callback(&rep, user);
      };
    }
    aot::train(c, source, opts);
  });
}

aot_status aot_evaluate(const aot_config* config, const char* checkpoint_path,
                        const char* corpus_dir, const char* csv_path, char** out_table) {
  return guarded([&] {
    require(config && checkpoint_path && corpus_dir && csv_path, "null argument");
    const auto& c = config->value;
    const auto model = aot::load_inference_model(checkpoint_path);
    const auto source = open_corpus(c, corpus_dir, c.eval.image_size);
    const auto fx = aot::FeatureExtractor::resolve(c.extractor);
    const aot::InpaintFn fn = [&](const aot::Tensor& image, const aot::Tensor& mask) {
      return aot::inpaint(model.generator, image, mask);
    };
    const auto report = aot::evaluate(fn, source, c.eval.buckets, c.eval.seed, fx,
                                      static_cast<std::size_t>(c.eval.max_images));
    const std::string table = aot::report_table(report);
    const fs::path csv(csv_path);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    aot::write_file_atomic(csv, aot::report_csv(report));
    fs::path txt = csv;
    txt.replace_extension(".txt");
    aot::write_file_atomic(txt, table);
    if (out_table) *out_table = dup_string(table);
  });
}

aot_status aot_generate_mask(int height, int width, double low, double high, uint64_t seed,
                             const char* out_path, double* hole_ratio) {
  return guarded([&] {
    require(out_path != nullptr, "null argument");
    const aot::RatioBucket bucket{low, high};
    bucket.validate();
    const aot::Tensor mask = aot::generate_free_form_mask(height, width, bucket, seed);
    aot::save_png(out_path, aot::mask_to_image(mask));
    if (hole_ratio) *hole_ratio = aot::compute_hole_ratio(mask);
  });
}

aot_status aot_export_weights(const aot_config* config, const char* checkpoint_path,
                              const char* out_path) {
  return guarded([&] {
    require(config && out_path, "null argument");
    aot::Archive archive;
    if (checkpoint_path) {
      auto model = aot::load_inference_model(checkpoint_path);
      archive.metadata = {{"format", "aot-generator"},
                          {"fingerprint", model.fingerprint},
                          {"generator", model.config.to_json()["generator"]}};
      aot::append_parameters("", model.generator.parameters(), aot::DType::kFloat32, archive);
    } else {
      auto fx = aot::FeatureExtractor::resolve(config->value.extractor);
      archive = fx.export_weights();
    }
    aot::save_archive(out_path, archive);
  });
}

aot_status aot_server_create(const aot_config* config, const char* checkpoint_path,
                             aot_server** out) {
  return guarded([&] {
    require(config && out, "null argument");
    auto s = std::make_unique<aot_server>();
    s->service = std::make_unique<aot::InpaintService>(config->value.serve);
    if (checkpoint_path) s->service->load_model(checkpoint_path);
    *out = s.release();
  });
}

aot_status aot_server_load_model(aot_server* server, const char* checkpoint_path) {
  return guarded([&] {
    require(server && checkpoint_path, "null argument");
    server->service->load_model(checkpoint_path);
  });
}

aot_status aot_server_start(aot_server* server, int* bound_port) {
  return guarded([&] {
    require(server != nullptr, "null argument");
    const int port = server->service->start();
    if (bound_port) *bound_port = port;
  });
}

aot_status aot_server_stop(aot_server* server) {
  return guarded([&] {
    require(server != nullptr, "null argument");
    server->service->stop();
  });
}

void aot_server_free(aot_server* server) { delete server; }

}  // extern "C"

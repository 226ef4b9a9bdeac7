#include "aot/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>

#include "httplib.h"
#include "json.hpp"

#include "aot/encoding.hpp"
#include "aot/error.hpp"
#include "aot/generator.hpp"
#include "aot/image_io.hpp"
#include "aot/masks.hpp"

namespace aot {

using nlohmann::json;

namespace {

ServiceReply error_reply(int status, const std::string& reason, const std::string& detail = {}) {
  json j = {{"error", reason}};
  if (!detail.empty()) j["detail"] = detail;
  return {status, j.dump()};
}

int round_up4(int v) { return (v + 3) / 4 * 4; }

// Edge-replicates `t` to (h, w); extra rows/cols go at the bottom/right.
Tensor pad_replicate(const Tensor& t, int h, int w) {
  Tensor out({t.n(), t.c(), h, w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          out.at(n, c, y, x) = t.at(n, c, std::min(y, t.h() - 1), std::min(x, t.w() - 1));
        }
      }
    }
  }
  return out;
}

Tensor pad_zero(const Tensor& t, int h, int w) {
  Tensor out({t.n(), t.c(), h, w});
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < t.h(); ++y) {
        for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y, x);
      }
    }
  }
  return out;
}

class InflightGuard {
 public:
  explicit InflightGuard(std::atomic<int>& counter) : counter_(counter) { value_ = ++counter_; }
  ~InflightGuard() { --counter_; }
  int value() const { return value_; }

 private:
  std::atomic<int>& counter_;
  int value_;
};

}  // namespace

InpaintOutcome inpaint_any_size(const Generator& gen, const Tensor& image, const Tensor& mask,
                                int max_side) {
  validate_mask(mask);
  if (image.n() != 1 || mask.n() != 1 || image.h() != mask.h() || image.w() != mask.w()) {
    throw ShapeError("image " + image.shape().str() + " and mask " + mask.shape().str() +
                     " differ in size");
  }
  const int h = image.h();
  const int w = image.w();
  const int longest = std::max(h, w);
  InpaintOutcome out;
  out.resized = max_side > 0 && longest > max_side;

  Tensor img = image;
  Tensor m = mask;
  int wh = h;
  int ww = w;
  if (out.resized) {
    const double s = static_cast<double>(max_side) / longest;
    wh = std::max(4, static_cast<int>(std::lround(h * s)));
    ww = std::max(4, static_cast<int>(std::lround(w * s)));
    img = resize_bilinear(image, wh, ww);
    // Any pixel touched by the hole stays a hole at working resolution.
    m = resize_bilinear(mask, wh, ww);
    for (double& v : m.values()) v = v > 0.0 ? 1.0 : 0.0;
  }
  const int ph = round_up4(wh);
  const int pw = round_up4(ww);
  if (ph != wh || pw != ww) {
    img = pad_replicate(img, ph, pw);
    m = pad_zero(m, ph, pw);
  }
  Tensor g = gen.infer(mask_image(img, m), m);
  if (ph != wh || pw != ww) g = crop(g, 0, 0, wh, ww);
  if (out.resized) g = resize_bilinear(g, h, w);
  out.result = compose(image, g, mask);
  return out;
}

InpaintService::InpaintService(const ServeConfig& config, LogSink log)
    : config_(config), log_(std::move(log)) {}

InpaintService::~InpaintService() { stop(); }

void InpaintService::load_model(const std::filesystem::path& checkpoint) {
  set_model(std::make_shared<const InferenceModel>(load_inference_model(checkpoint)));
}

void InpaintService::set_model(std::shared_ptr<const InferenceModel> model) {
  std::unique_lock lock(model_mutex_);
  model_ = std::move(model);
}

std::shared_ptr<const InferenceModel> InpaintService::model() const {
  std::shared_lock lock(model_mutex_);
  return model_;
}

void InpaintService::log(const std::string& line) const {
  if (log_) {
    log_(line);
  } else {
    static std::mutex io;
    std::lock_guard lock(io);
    std::fprintf(stderr, "%s\n", line.c_str());
  }
}

ServiceReply InpaintService::handle_model() const {
  const auto m = model();
  if (!m) return error_reply(503, "model_not_loaded");
  const auto& g = m->config.generator;
  json j = {
      {"fingerprint", m->fingerprint},
      {"blocks", g.num_blocks},
      {"rates", g.block.rates},
      {"width", g.base_width},
      {"residual_mode", to_string(g.block.residual_mode)},
      {"max_resolution", config_.max_side},
  };
  return {200, j.dump()};
}

ServiceReply InpaintService::handle_inpaint(const std::string& body) {
  const auto start = std::chrono::steady_clock::now();
  const InflightGuard guard(inflight_);
  ServiceReply reply;
  std::string fingerprint = "-";
  double ratio = -1;
  if (guard.value() > config_.max_inflight) {
    reply = error_reply(429, "too_many_requests");
  } else if (body.size() > config_.max_payload_bytes) {
    reply = error_reply(413, "payload_too_large");
  } else if (const auto m = model(); !m) {
    reply = error_reply(503, "model_not_loaded");
  } else {
    fingerprint = m->fingerprint;
    reply = run_inpaint(body, *m, &ratio);
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "POST /api/v1/inpaint status=%d fingerprint=%s hole_ratio=%.6f timing_ms=%.1f",
                reply.status, fingerprint.c_str(), ratio, ms);
  log(buf);
  return reply;
}

ServiceReply InpaintService::run_inpaint(const std::string& body, const InferenceModel& model,
                                         double* hole_ratio) {
  const auto start = std::chrono::steady_clock::now();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, "malformed_json", e.what());
  }
  if (!req.is_object() || !req.contains("image") || !req.contains("mask") ||
      !req["image"].is_string() || !req["mask"].is_string()) {
    return error_reply(400, "malformed_request", "image and mask must be base64 strings");
  }
  int max_side = config_.max_side;
  if (req.contains("options")) {
    const json& opt = req["options"];
    if (!opt.is_object()) return error_reply(400, "malformed_request", "options must be an object");
    if (opt.contains("max_side")) {
      if (!opt["max_side"].is_number_integer() || opt["max_side"].get<int>() < 4) {
        return error_reply(400, "malformed_request", "options.max_side must be an integer >= 4");
      }
      max_side = std::min(max_side, opt["max_side"].get<int>());
    }
  }

  Tensor image;
  Tensor mask;
  try {
    image = image_to_tensor(decode_image(base64_decode(req["image"].get<std::string>())));
  } catch (const Error& e) {
    return error_reply(400, "invalid_image", e.what());
  }
  try {
    mask = decode_mask(base64_decode(req["mask"].get<std::string>()));
  } catch (const Error& e) {
    return error_reply(400, "invalid_mask", e.what());
  }
  if (image.h() != mask.h() || image.w() != mask.w()) {
    return error_reply(400, "shape_mismatch",
                       "image is " + std::to_string(image.w()) + "x" + std::to_string(image.h()) +
                           ", mask is " + std::to_string(mask.w()) + "x" + std::to_string(mask.h()));
  }

  InpaintOutcome out;
  try {
    out = inpaint_any_size(model.generator, image, mask, max_side);
  } catch (const Error& e) {
    return error_reply(500, "inference_failed", e.what());
  }
  *hole_ratio = compute_hole_ratio(mask);
  const auto png = encode_png(tensor_to_image(out.result));
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  json j = {
      {"result", base64_encode(png)},
      {"timing_ms", ms},
      {"model_fingerprint", model.fingerprint},
      {"hole_ratio", *hole_ratio},
      {"resized", out.resized},
      {"width", image.w()},
      {"height", image.h()},
  };
  return {200, j.dump()};
}

int InpaintService::start() {
  if (running_) return port_;
  server_ = std::make_unique<httplib::Server>();
  auto& srv = *server_;
  const int workers = std::max(2, config_.max_inflight + 2);
  srv.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  srv.set_payload_max_length(config_.max_payload_bytes);
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

  auto send = [](httplib::Response& res, const ServiceReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.Post("/api/v1/inpaint", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_inpaint(req.body));
  });
  srv.Get("/api/v1/model", [this, send](const httplib::Request&, httplib::Response& res) {
    const ServiceReply r = handle_model();
    log("GET /api/v1/model status=" + std::to_string(r.status));
    send(res, r);
  });
  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  // Oversized bodies are rejected by the transport before reaching a handler.
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      res.set_content(json({{"error", "payload_too_large"}}).dump(), "application/json");
    } else if (res.body.empty()) {
      res.set_content(json({{"error", "http_" + std::to_string(res.status)}}).dump(),
                      "application/json");
    }
  });

  if (config_.port == 0) {
    port_ = srv.bind_to_any_port(config_.host);
  } else {
    port_ = srv.bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) {
    server_.reset();
    throw Error(ErrorCode::kIo, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  running_ = true;
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  // A stop() issued before the listen loop starts would otherwise be lost.
  server_->wait_until_ready();
  return port_;
}

void InpaintService::stop() {
  if (!running_) return;
  server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
  running_ = false;
}

}  // namespace aot

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <shared_mutex>
#include <string>
#include <thread>

#include "aot/config.hpp"
#include "aot/tensor.hpp"
#include "aot/trainer.hpp"

namespace httplib {
class Server;
}

namespace aot {

struct ServiceReply {
  int status = 200;
  std::string body;  ///< JSON document.
};

struct InpaintOutcome {
  Tensor result;  ///< Composed image at native resolution.
  bool resized = false;
};

/// Runs the generator at a working resolution no larger than max_side (and
/// a multiple of 4), then re-composes at native resolution so known pixels
/// are copied from the input unchanged.
InpaintOutcome inpaint_any_size(const Generator& gen, const Tensor& image, const Tensor& mask,
                                int max_side);

/// JSON-over-HTTP front end for a loaded checkpoint. Request handling is
/// exposed directly (handle_*) so it can be exercised without sockets.
class InpaintService {
 public:
  using LogSink = std::function<void(const std::string&)>;

  explicit InpaintService(const ServeConfig& config, LogSink log = {});
  ~InpaintService();
  InpaintService(const InpaintService&) = delete;
  InpaintService& operator=(const InpaintService&) = delete;

  /// Loads a checkpoint and swaps it in; in-flight requests finish on the old model.
  void load_model(const std::filesystem::path& checkpoint);
  void set_model(std::shared_ptr<const InferenceModel> model);
  std::shared_ptr<const InferenceModel> model() const;

  ServiceReply handle_inpaint(const std::string& body);
  ServiceReply handle_model() const;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  int start();
  void stop();
  bool running() const { return running_.load(); }
  int port() const { return port_; }

 private:
  ServiceReply run_inpaint(const std::string& body, const InferenceModel& model, double* hole_ratio);
  void log(const std::string& line) const;

  ServeConfig config_;
  LogSink log_;
  mutable std::shared_mutex model_mutex_;
  std::shared_ptr<const InferenceModel> model_;
  std::atomic<int> inflight_{0};
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  int port_ = 0;
};

}  // namespace aot

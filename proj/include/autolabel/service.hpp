#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolabel/dataset.hpp"
#include "autolabel/detector.hpp"
#include "autolabel/review_queue.hpp"
#include "autolabel/selfloop.hpp"

namespace httplib {
class Server;
}

namespace autolabel {

/// Live objects a loop run needs, built from its configuration.
struct LoopResources {
  std::unique_ptr<DetectorBackend> backend;
  std::vector<std::unique_ptr<DetectorBackend>> committee;
  std::unique_ptr<RetrainHook> hook;
};

using LoopFactory = std::function<LoopResources(const LoopConfig&, const Dataset&)>;

/// Builds backends with make_backend and an ExternalRetrainHook (or a no-op
/// hook when no command is configured).
LoopResources default_loop_factory(const LoopConfig& config, const Dataset& ds,
                                   const std::filesystem::path& workdir);

struct ServiceOptions {
  std::filesystem::path workdir;        // loop hand-off files
  std::filesystem::path audit_file;     // iteration records
  std::filesystem::path image_root;     // relative image paths resolve here
  LoopConfig loop_defaults;             // /loop/start bodies override these keys
  LoopFactory factory;                  // empty = default_loop_factory
};

enum class LoopState { idle, running, finished, failed };
std::string_view to_string(LoopState s);

struct LoopStatus {
  LoopState state = LoopState::idle;
  int iteration = 0;             // current (running) or last started
  std::size_t completed = 0;     // iterations finished by this run
  std::string error;             // set when failed
};

/// The /api/v1 HTTP surface over one dataset store and its review queue.
class Service {
 public:
  Service(DatasetStore& store, ReviewQueue& queue, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Blocks serving until stop(). Returns false if the socket cannot bind.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

  /// Starts a loop on a worker thread. ConflictError if one is running.
  LoopStatus start_loop(const nlohmann::json& overrides);
  LoopStatus loop_status() const;
  /// Waits for the current loop thread, if any.
  void join_loop();

  httplib::Server& server() { return *server_; }

 private:
  void install_routes();

  DatasetStore& store_;
  ReviewQueue& queue_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;

  mutable std::mutex loop_mutex_;
  LoopStatus status_;
  std::thread loop_thread_;
};

/// Maps an engine error kind to an HTTP status code.
int http_status_for(const std::string& kind);

}  // namespace autolabel

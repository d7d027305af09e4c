#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>

namespace rulmdp {

inline constexpr const char* kApiVersion = "1";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path runs_dir = "runs";
  std::chrono::milliseconds long_poll{10'000};  // upper bound for GET /runs/{id}/pending
};

// HTTP front end over training runs. Runs execute on worker threads and are
// persisted under runs_dir/<run_id>/ (descriptor.json, curve.csv, feedback.csv);
// a restarted service reloads them, marking interrupted runs failed.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket and returns the port (useful with port 0).
  int bind();
  // Serves requests until stop(). Requires bind().
  void serve();
  // Stops listening, cancels active runs and joins their workers.
  void stop();
  // Waits until no run is pending or running; false on timeout.
  bool wait_idle(std::chrono::milliseconds timeout);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rulmdp

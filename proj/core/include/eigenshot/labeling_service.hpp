#pragma once

// HTTP front for a single annotation session. All mutations go through
// LabelingSession under one mutex; every response carries the revision it
// was computed at.
//
//   GET  /api/state       {kappa, kappa_max, spent, cap, pending_count, revision, finished}
//   GET  /api/queue       {revision, items: [{sample_id, asset_uri?, suggested_label?}]}
//   POST /api/labels      {sample_id, label} -> {accepted, remaining, revision}
//   GET  /api/metrics     {revision, history: [{kappa, bcubed_precision, eval_top1?, eval_mean_class?}]}
//   GET  /api/projection  {revision, points: [{sample_id, x, y, labeled}]}

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "eigenshot/eigen_loop.hpp"

namespace httplib {
class Server;
}

namespace eigenshot {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

class LabelingSession {
 public:
  /// Queues the first step right away unless `state` already has one pending.
  /// With a checkpoint dir, every accepted label is written to
  /// `<dir>/session.json` before the call returns.
  LabelingSession(LoopContext ctx, LoopState state,
                  std::optional<std::filesystem::path> checkpoint_dir = std::nullopt);

  /// Restores a session from `<dir>/session.json` (partial answers included).
  static std::unique_ptr<LabelingSession> restore(LoopContext ctx, const std::filesystem::path& checkpoint_dir);

  ApiResponse get_state() const;
  ApiResponse get_queue() const;
  ApiResponse get_metrics() const;
  ApiResponse get_projection() const;
  /// `if_match` is the client's revision; a mismatch is rejected with 409.
  ApiResponse post_label(const nlohmann::json& body, std::optional<std::uint64_t> if_match = std::nullopt);

  std::uint64_t revision() const;
  bool finished() const;
  LoopState snapshot() const;
  std::map<std::string, int> step_answers() const;

  /// Blocks until the budget or the pool is exhausted.
  void wait_until_finished() const;

 private:
  void advance_locked();
  void persist_locked() const;
  nlohmann::json state_json_locked() const;

  LoopContext ctx_;
  LoopState state_;
  std::map<std::string, int> answers_;  // labels accepted for the current step
  std::uint64_t revision_ = 0;
  std::optional<std::filesystem::path> checkpoint_dir_;
  mutable std::mutex mutex_;
  mutable std::condition_variable finished_cv_;
};

class LabelingServer {
 public:
  /// `static_dir`, when set, is served at "/".
  explicit LabelingServer(LabelingSession& session,
                          std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~LabelingServer();
  LabelingServer(const LabelingServer&) = delete;
  LabelingServer& operator=(const LabelingServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port, throws std::runtime_error if binding fails.
  int start(const std::string& host, int port);
  void stop();

 private:
  LabelingSession& session_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace eigenshot

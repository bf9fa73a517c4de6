#include "eigenshot/labeling_service.hpp"

#include <fstream>
#include <set>

#include <httplib.h>

namespace eigenshot {

namespace {

constexpr const char* kSessionFile = "session.json";

ApiResponse error(int status, const std::string& message, std::uint64_t revision) {
  return {status, {{"error", message}, {"revision", revision}}};
}

}  // namespace

LabelingSession::LabelingSession(LoopContext ctx, LoopState state,
                                 std::optional<std::filesystem::path> checkpoint_dir)
    : ctx_(std::move(ctx)), state_(std::move(state)), checkpoint_dir_(std::move(checkpoint_dir)) {
  if (state_.strategy == SamplingStrategy::kOracleBalanced) {
    throw std::invalid_argument("the labeling service cannot run oracle-balanced sampling");
  }
  std::lock_guard lock(mutex_);
  if (state_.pending.empty()) advance_locked();
  persist_locked();
}

std::unique_ptr<LabelingSession> LabelingSession::restore(LoopContext ctx,
                                                          const std::filesystem::path& checkpoint_dir) {
  const auto path = checkpoint_dir / kSessionFile;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("no session checkpoint at '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("session checkpoint is not valid JSON: ") + e.what());
  }
  auto session = std::make_unique<LabelingSession>(std::move(ctx), loop_state_from_json(doc.at("state")),
                                                   checkpoint_dir);
  std::lock_guard lock(session->mutex_);
  session->answers_ = doc.at("answers").get<std::map<std::string, int>>();
  session->revision_ = doc.at("revision").get<std::uint64_t>();
  session->persist_locked();
  return session;
}

void LabelingSession::advance_locked() {
  if (loop_finished(state_, ctx_)) return;
  const auto ids = select_next(state_, ctx_);
  if (!ids.empty()) state_ = begin_step(std::move(state_), ids);
}

void LabelingSession::persist_locked() const {
  if (!checkpoint_dir_) return;
  std::filesystem::create_directories(*checkpoint_dir_);
  const nlohmann::json doc = {{"state", to_json(state_)}, {"answers", answers_}, {"revision", revision_}};
  const auto path = *checkpoint_dir_ / kSessionFile;
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << doc.dump(1) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot write session checkpoint");
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json LabelingSession::state_json_locked() const {
  return {{"kappa", state_.kappa},
          {"kappa_max", state_.ledger.max_steps()},
          {"spent", state_.ledger.spent()},
          {"cap", state_.ledger.cap()},
          {"pending_count", state_.pending.size() - answers_.size()},
          {"revision", revision_},
          {"finished", loop_finished(state_, ctx_)}};
}

ApiResponse LabelingSession::get_state() const {
  std::lock_guard lock(mutex_);
  return {200, state_json_locked()};
}

ApiResponse LabelingSession::get_queue() const {
  std::lock_guard lock(mutex_);
  auto items = nlohmann::json::array();
  for (const auto& id : state_.pending) {
    if (answers_.contains(id)) continue;
    nlohmann::json item = {{"sample_id", id}};
    if (const auto it = ctx_.assets.find(id); it != ctx_.assets.end()) item["asset_uri"] = it->second;
    if (state_.classifier) {
      if (const auto row = ctx_.target.index_of(id)) {
        item["suggested_label"] = predict_one(*state_.classifier, ctx_.target.row(*row));
      }
    }
    items.push_back(std::move(item));
  }
  return {200, {{"revision", revision_}, {"items", std::move(items)}}};
}

ApiResponse LabelingSession::get_metrics() const {
  std::lock_guard lock(mutex_);
  auto history = nlohmann::json::array();
  for (const auto& rec : state_.history) {
    nlohmann::json h = {{"kappa", rec.kappa}, {"bcubed_precision", rec.bcubed_precision}};
    if (rec.eval) {
      h["eval_top1"] = rec.eval->top1_accuracy;
      h["eval_mean_class"] = rec.eval->mean_class_accuracy;
    }
    history.push_back(std::move(h));
  }
  return {200, {{"revision", revision_}, {"history", std::move(history)}}};
}

ApiResponse LabelingSession::get_projection() const {
  // The pool never changes, so only the labeled flags depend on the lock.
  const auto dims = std::min<std::size_t>(2, ctx_.target.dim());
  const RowMatrix coords = ctx_.target.empty() ? RowMatrix(0, 2) : pca_coordinates(ctx_.target, dims);
  std::lock_guard lock(mutex_);
  auto points = nlohmann::json::array();
  for (std::size_t i = 0; i < ctx_.target.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto& id = ctx_.target.id(i);
    points.push_back({{"sample_id", id},
                      {"x", coords(r, 0)},
                      {"y", dims > 1 ? coords(r, 1) : 0.0},
                      {"labeled", state_.labels.contains(id) || answers_.contains(id)}});
  }
  return {200, {{"revision", revision_}, {"points", std::move(points)}}};
}

ApiResponse LabelingSession::post_label(const nlohmann::json& body, std::optional<std::uint64_t> if_match) {
  std::unique_lock lock(mutex_);
  if (if_match && *if_match != revision_) {
    return error(409, "stale revision " + std::to_string(*if_match), revision_);
  }
  if (!body.is_object() || !body.contains("sample_id") || !body["sample_id"].is_string() ||
      !body.contains("label") || !body["label"].is_number_integer()) {
    return error(400, "body must be {\"sample_id\": string, \"label\": integer}", revision_);
  }
  const auto id = body["sample_id"].get<std::string>();
  const auto label = body["label"].get<long long>();

  if (answers_.contains(id)) return error(409, "'" + id + "' already labeled in this step", revision_);
  if (state_.labels.contains(id)) return error(409, "'" + id + "' was labeled in an earlier step", revision_);
  const bool queued = std::find(state_.pending.begin(), state_.pending.end(), id) != state_.pending.end();
  if (!queued) return error(404, "'" + id + "' is not awaiting annotation", revision_);
  if (label < 0 || label >= state_.ledger.num_classes()) {
    return error(422, "label must be in [0," + std::to_string(state_.ledger.num_classes()) + ")", revision_);
  }

  // Build the next state aside, persist it, then commit.
  auto answers = answers_;
  answers.emplace(id, static_cast<int>(label));
  const auto remaining = state_.pending.size() - answers.size();
  LoopState next = state_;
  if (remaining == 0) {
    next = submit_labels(state_, ctx_, answers);
    answers.clear();
  }
  std::swap(state_, next);
  std::swap(answers_, answers);
  ++revision_;
  try {
    if (remaining == 0) {
      if (checkpoint_dir_) write_checkpoint(state_, checkpoint_path(*checkpoint_dir_, state_.kappa));
      advance_locked();
    }
    persist_locked();
  } catch (...) {
    state_ = std::move(next);
    answers_ = std::move(answers);
    --revision_;
    throw;
  }

  nlohmann::json out = {{"accepted", true}, {"remaining", remaining}, {"revision", revision_},
                        {"kappa", state_.kappa}};
  const bool done = loop_finished(state_, ctx_);
  lock.unlock();
  if (done) finished_cv_.notify_all();
  return {200, std::move(out)};
}

std::uint64_t LabelingSession::revision() const {
  std::lock_guard lock(mutex_);
  return revision_;
}

bool LabelingSession::finished() const {
  std::lock_guard lock(mutex_);
  return loop_finished(state_, ctx_);
}

LoopState LabelingSession::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

std::map<std::string, int> LabelingSession::step_answers() const {
  std::lock_guard lock(mutex_);
  return answers_;
}

void LabelingSession::wait_until_finished() const {
  std::unique_lock lock(mutex_);
  finished_cv_.wait(lock, [&] { return loop_finished(state_, ctx_); });
}

// ---------------------------------------------------------------------------

LabelingServer::LabelingServer(LabelingSession& session, std::optional<std::filesystem::path> static_dir)
    : session_(session), server_(std::make_unique<httplib::Server>()) {
  auto reply = [](httplib::Response& res, const ApiResponse& api) {
    res.status = api.status;
    res.set_content(api.body.dump(), "application/json");
  };
  server_->Get("/api/state", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, session_.get_state());
  });
  server_->Get("/api/queue", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, session_.get_queue());
  });
  server_->Get("/api/metrics", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, session_.get_metrics());
  });
  server_->Get("/api/projection", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, session_.get_projection());
  });
  server_->Post("/api/labels", [this, reply](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::uint64_t> if_match;
    if (req.has_header("If-Match")) {
      auto value = req.get_header_value("If-Match");
      std::erase(value, '"');
      try {
        if_match = std::stoull(value);
      } catch (const std::exception&) {
        reply(res, {400, {{"error", "If-Match must be a revision number"}}});
        return;
      }
    }
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      reply(res, {400, {{"error", "body is not valid JSON"}}});
      return;
    }
    try {
      reply(res, session_.post_label(body, if_match));
    } catch (const std::exception& e) {
      reply(res, {500, {{"error", e.what()}}});
    }
  });
  if (static_dir && !server_->set_mount_point("/", static_dir->string())) {
    throw std::runtime_error("static directory '" + static_dir->string() + "' does not exist");
  }
}

LabelingServer::~LabelingServer() { stop(); }

int LabelingServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void LabelingServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace eigenshot

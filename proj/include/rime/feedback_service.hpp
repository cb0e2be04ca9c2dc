#pragma once

// Human preference collection. The trainer opens a query session on a
// FeedbackHub and blocks until enough labels arrive; the HTTP server exposes
// the open session to annotation clients. Every state change is appended to a
// JSONL journal and flushed to disk before it is acknowledged, and replaying
// the journal on startup restores pending sessions and submitted labels.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "rime/env.hpp"
#include "rime/log.hpp"
#include "rime/reward_model.hpp"

namespace rime {

/// Segment payload for annotation clients: per-step positions, states and
/// actions. Rewards are never included.
inline nlohmann::json segment_payload(const Segment& seg, const ContinuousEnv& env) {
  nlohmann::json positions = nlohmann::json::array(), states = nlohmann::json::array(),
                 actions = nlohmann::json::array();
  for (Eigen::Index t = 0; t < seg.length(); ++t) {
    const Vec s = seg.states.col(t);
    const Eigen::Vector2d p = env.render_position(s);
    positions.push_back({p.x(), p.y()});
    states.push_back(std::vector<double>(s.data(), s.data() + s.size()));
    actions.push_back(std::vector<double>(seg.actions.col(t).data(), seg.actions.col(t).data() + seg.actions.rows()));
  }
  return {{"positions", positions}, {"states", states}, {"actions", actions}, {"length", seg.length()}};
}

enum class SubmitStatus { accepted, malformed, unknown_query, duplicate, no_session };

struct SubmitResult {
  SubmitStatus status = SubmitStatus::malformed;
  std::string message;
  std::size_t remaining = 0;
};

struct HumanAnswer {
  PreferenceLabel label;
  std::string annotator;
};

struct SessionOutcome {
  std::map<std::string, HumanAnswer> answers;  // by query id
  bool skipped = false;                        // operator ended the session early
  bool shutdown = false;
};

inline std::optional<PreferenceLabel> parse_human_label(const std::string& s) {
  if (s == "left") return PreferenceLabel::left();
  if (s == "right") return PreferenceLabel::right();
  if (s == "equal") return PreferenceLabel::equal();
  return std::nullopt;
}

class FeedbackHub {
 public:
  /// Opens (creating if needed) data_dir/journal.jsonl and replays it.
  explicit FeedbackHub(const std::filesystem::path& data_dir) : journal_path_(data_dir / "journal.jsonl") {
    std::filesystem::create_directories(data_dir);
    replay();
    journal_ = std::fopen(journal_path_.c_str(), "a");
    if (!journal_) throw std::runtime_error("cannot open feedback journal " + journal_path_.string());
  }

  ~FeedbackHub() {
    shutdown();
    if (journal_) std::fclose(journal_);
  }

  FeedbackHub(const FeedbackHub&) = delete;
  FeedbackHub& operator=(const FeedbackHub&) = delete;

  const std::filesystem::path& journal_path() const { return journal_path_; }

  /// Opens a session; each query must carry a unique "id". A still-open session is superseded.
  void open_session(const std::string& session_id, std::vector<nlohmann::json> queries, std::size_t quota,
                    nlohmann::json env_meta = nlohmann::json::object()) {
    std::set<std::string> ids;
    for (const auto& q : queries)
      if (!q.contains("id") || !ids.insert(q["id"].get<std::string>()).second)
        throw std::invalid_argument("open_session: queries need unique ids");
    if (quota == 0 || quota > queries.size()) throw std::invalid_argument("open_session: quota out of range");
    std::lock_guard lock(mu_);
    if (session_ && !session_->closed) {
      if (session_->id == session_id) return;  // already restored from the journal
      log_warn("feedback: session " + session_->id + " superseded by " + session_id);
      append({{"type", "close"}, {"session_id", session_->id}, {"reason", "superseded"}});
    }
    Session s;
    s.id = session_id;
    s.queries = std::move(queries);
    s.quota = quota;
    s.env = std::move(env_meta);
    s.created_at = static_cast<std::int64_t>(std::time(nullptr));
    append({{"type", "open"},
            {"session_id", s.id},
            {"queries", s.queries},
            {"quota", s.quota},
            {"env", s.env},
            {"created_at", s.created_at}});
    session_ = std::move(s);
    cv_.notify_all();
  }

  /// The open session with its unanswered queries in a shuffled order, or status "none".
  nlohmann::json current(std::uint64_t shuffle_seed) const {
    std::lock_guard lock(mu_);
    if (!session_ || session_->closed) return {{"status", "none"}};
    nlohmann::json pending = nlohmann::json::array();
    for (const auto& q : session_->queries)
      if (!session_->answers.count(q["id"].get<std::string>())) pending.push_back(q);
    std::vector<std::size_t> order(pending.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    nlohmann::json shuffled = nlohmann::json::array();
    for (std::size_t i : order) shuffled.push_back(pending[i]);
    return {{"status", "open"},
            {"session_id", session_->id},
            {"quota", session_->quota},
            {"labeled", session_->answers.size()},
            {"remaining", remaining_locked()},
            {"created_at", session_->created_at},
            {"env", session_->env},
            {"queries", shuffled}};
  }

  SubmitResult submit(const nlohmann::json& body) {
    SubmitResult r;
    if (!body.is_object() || !body.contains("query_id") || !body["query_id"].is_string() || !body.contains("label") ||
        !body["label"].is_string()) {
      r.message = "expected {\"query_id\": string, \"label\": left|right|equal}";
      return r;
    }
    const auto parsed = parse_human_label(body["label"].get<std::string>());
    if (!parsed) {
      r.message = "label must be left, right or equal";
      return r;
    }
    const std::string id = body["query_id"];
    const std::string annotator = body.contains("annotator") && body["annotator"].is_string() ? body["annotator"].get<std::string>() : "";
    std::lock_guard lock(mu_);
    if (!session_ || session_->closed) {
      r.status = SubmitStatus::no_session;
      r.message = "no open session";
      return r;
    }
    const bool known = std::any_of(session_->queries.begin(), session_->queries.end(),
                                   [&](const nlohmann::json& q) { return q["id"] == id; });
    if (!known) {
      r.status = SubmitStatus::unknown_query;
      r.message = "unknown query id " + id;
      return r;
    }
    if (session_->answers.count(id)) {
      r.status = SubmitStatus::duplicate;
      r.message = "query " + id + " already labeled";
      r.remaining = remaining_locked();
      return r;
    }
    append({{"type", "label"},
            {"session_id", session_->id},
            {"query_id", id},
            {"label", body["label"]},
            {"annotator", annotator},
            {"submitted_at", static_cast<std::int64_t>(std::time(nullptr))}});
    session_->answers[id] = HumanAnswer{*parsed, annotator};
    r.status = SubmitStatus::accepted;
    r.remaining = remaining_locked();
    cv_.notify_all();
    return r;
  }

  /// Operator action: ends the open session with the labels collected so far.
  bool skip_session(const std::string& reason) {
    std::lock_guard lock(mu_);
    if (!session_ || session_->closed) return false;
    log_info("feedback: operator skipped session " + session_->id + (reason.empty() ? "" : ": " + reason));
    append({{"type", "skip"}, {"session_id", session_->id}, {"reason", reason}});
    session_->skipped = true;
    cv_.notify_all();
    return true;
  }

  /// Blocks until the session reaches its quota, is skipped, or the hub shuts
  /// down. The predicate is re-checked at least once per poll interval.
  SessionOutcome wait(const std::string& session_id, std::chrono::milliseconds poll = std::chrono::milliseconds(500)) {
    std::unique_lock lock(mu_);
    for (;;) {
      if (!session_ || session_->id != session_id) throw std::logic_error("wait: session " + session_id + " is not open");
      const bool done = session_->answers.size() >= session_->quota || session_->skipped;
      if (done || shutdown_) {
        SessionOutcome out;
        out.answers = session_->answers;
        out.skipped = session_->skipped;
        out.shutdown = shutdown_ && !done;
        if (done) {
          append({{"type", "close"}, {"session_id", session_->id}, {"reason", session_->skipped ? "skipped" : "complete"}});
          session_->closed = true;
          ++completed_;
        }
        return out;
      }
      cv_.wait_for(lock, poll);
    }
  }

  nlohmann::json progress() const {
    std::lock_guard lock(mu_);
    nlohmann::json j = {{"sessions_completed", completed_}};
    if (session_ && !session_->closed) {
      j["session_id"] = session_->id;
      j["labeled"] = session_->answers.size();
      j["quota"] = session_->quota;
      j["remaining"] = remaining_locked();
    } else {
      j["session_id"] = nullptr;
    }
    return j;
  }

  void shutdown() {
    std::lock_guard lock(mu_);
    shutdown_ = true;
    cv_.notify_all();
  }

 private:
  struct Session {
    std::string id;
    std::vector<nlohmann::json> queries;
    std::size_t quota = 0;
    nlohmann::json env;
    std::int64_t created_at = 0;
    std::map<std::string, HumanAnswer> answers;
    bool skipped = false;
    bool closed = false;
  };

  std::size_t remaining_locked() const {
    return session_->answers.size() >= session_->quota ? 0 : session_->quota - session_->answers.size();
  }

  void append(const nlohmann::json& entry) {
    if (!journal_) return;  // during replay
    const std::string line = entry.dump() + "\n";
    if (std::fputs(line.c_str(), journal_) < 0 || std::fflush(journal_) != 0 || ::fsync(fileno(journal_)) != 0)
      throw std::runtime_error("feedback journal write failed");
  }

  void replay() {
    std::ifstream in(journal_path_);
    if (!in) return;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json e;
      try {
        e = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        log_warn("feedback: ignoring unreadable journal line " + std::to_string(n + 1));
        continue;
      }
      ++n;
      const std::string type = e.value("type", "");
      if (type == "open") {
        Session s;
        s.id = e["session_id"];
        s.queries = e["queries"].get<std::vector<nlohmann::json>>();
        s.quota = e["quota"];
        s.env = e.value("env", nlohmann::json::object());
        s.created_at = e.value("created_at", std::int64_t{0});
        session_ = std::move(s);
      } else if (session_ && e.value("session_id", "") == session_->id) {
        if (type == "label") {
          session_->answers[e["query_id"]] = HumanAnswer{*parse_human_label(e["label"]), e.value("annotator", "")};
        } else if (type == "skip") {
          session_->skipped = true;
        } else if (type == "close") {
          session_->closed = true;
          if (e.value("reason", "") != "superseded") ++completed_;
        }
      }
    }
    if (n) log_info("feedback: replayed " + std::to_string(n) + " journal entries");
  }

  std::filesystem::path journal_path_;
  std::FILE* journal_ = nullptr;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<Session> session_;
  std::size_t completed_ = 0;
  bool shutdown_ = false;
};

/// HTTP front end of a FeedbackHub.
///   GET  /api/health            liveness
///   GET  /api/progress          labels collected in the open session
///   GET  /api/session/current   open session, unanswered queries shuffled
///   POST /api/label             {"query_id", "label", "annotator"}
///   POST /api/session/skip      operator ends the open session early
/// Static files (the annotation client) are served from static_dir when given.
class FeedbackServer {
 public:
  explicit FeedbackServer(FeedbackHub& hub, std::string static_dir = "") : hub_(hub) {
    auto json_reply = [](httplib::Response& res, int status, const nlohmann::json& body) {
      res.status = status;
      res.set_content(body.dump(), "application/json");
    };
    server_.Get("/api/health", [=](const httplib::Request&, httplib::Response& res) {
      json_reply(res, 200, {{"status", "ok"}});
    });
    server_.Get("/api/progress", [=, this](const httplib::Request&, httplib::Response& res) {
      json_reply(res, 200, hub_.progress());
    });
    server_.Get("/api/session/current", [=, this](const httplib::Request&, httplib::Response& res) {
      json_reply(res, 200, hub_.current(shuffle_counter_++));
    });
    server_.Post("/api/label", [=, this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        json_reply(res, 400, {{"error", "request body is not JSON"}});
        return;
      }
      const SubmitResult r = hub_.submit(body);
      switch (r.status) {
        case SubmitStatus::accepted: json_reply(res, 200, {{"status", "accepted"}, {"remaining", r.remaining}}); break;
        case SubmitStatus::malformed: json_reply(res, 400, {{"error", r.message}}); break;
        case SubmitStatus::unknown_query: json_reply(res, 404, {{"error", r.message}}); break;
        case SubmitStatus::duplicate: json_reply(res, 409, {{"error", r.message}}); break;
        case SubmitStatus::no_session: json_reply(res, 409, {{"error", r.message}}); break;
      }
    });
    server_.Post("/api/session/skip", [=, this](const httplib::Request& req, httplib::Response& res) {
      std::string reason;
      if (!req.body.empty()) {
        try {
          reason = nlohmann::json::parse(req.body).value("reason", "");
        } catch (const nlohmann::json::exception&) {
          json_reply(res, 400, {{"error", "request body is not JSON"}});
          return;
        }
      }
      if (hub_.skip_session(reason)) json_reply(res, 200, {{"status", "skipped"}});
      else json_reply(res, 409, {{"error", "no open session"}});
    });
    if (!static_dir.empty() && !server_.set_mount_point("/", static_dir))
      log_warn("feedback: static directory not found: " + static_dir);
  }

  ~FeedbackServer() { stop(); }

  /// Binds and serves on a background thread. Port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("feedback server cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    port_ = bound;
    log_info("feedback server listening on " + host + ":" + std::to_string(bound));
    return bound;
  }

  int port() const { return port_; }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

 private:
  FeedbackHub& hub_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<std::uint64_t> shuffle_counter_{1};
  int port_ = -1;
};

}  // namespace rime

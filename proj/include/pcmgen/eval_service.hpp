#pragma once

// HTTP JSON service backing the human evaluation: serves unjudged items to
// annotators, records judgments in an append-only JSON-lines store, and
// reports per-system means.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

// Before httplib: <resolv.h> defines a `_res` macro that breaks Eigen.
#include "pcmgen/eval.hpp"

#include <httplib.h>

namespace pcmgen {

struct EvalTask {
  std::string item_id;
  std::string system;
  std::string mr;
  std::string english;
  std::string pidgin;
};

/// Generation output (JSON lines with mr/english/pidgin, optionally item_id
/// and system) turned into an item pool. Missing ids become
/// "<system>-<line>"; a missing system label becomes `default_system`.
inline std::vector<EvalTask> parse_tasks(std::string_view jsonl, const std::string& default_system) {
  std::vector<EvalTask> out;
  std::set<std::string> ids;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("task line " + std::to_string(line_no) + ": " + e.what());
    }
    EvalTask t;
    try {
      t.mr = j.value("mr", "");
      t.english = j.at("english").get<std::string>();
      t.pidgin = j.at("pidgin").get<std::string>();
      t.system = j.value("system", default_system);
      t.item_id = j.value("item_id", t.system + "-" + std::to_string(line_no));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("task line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(t.item_id).second) {
      throw DataError("task line " + std::to_string(line_no) + ": duplicate item_id '" + t.item_id + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

class TaskPool {
 public:
  TaskPool() = default;
  explicit TaskPool(std::vector<EvalTask> tasks) : tasks_(std::move(tasks)) {
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      if (!index_.emplace(tasks_[i].item_id, i).second) {
        throw DataError("duplicate item_id '" + tasks_[i].item_id + "'");
      }
    }
  }

  const std::vector<EvalTask>& tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::map<std::string, std::string> system_of_item() const {
    std::map<std::string, std::string> out;
    for (const auto& t : tasks_) out.emplace(t.item_id, t.system);
    return out;
  }

  /// Item order for one annotator: a shuffle seeded by the annotator id.
  std::vector<std::size_t> order_for(const std::string& annotator) const {
    std::vector<std::size_t> order(tasks_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(fnv1a64(annotator));
    rng.shuffle(order);
    return order;
  }

 private:
  std::vector<EvalTask> tasks_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

struct ParsedStore {
  std::vector<HumanJudgment> judgments;
  std::size_t good_end = 0;    // bytes worth keeping
  bool needs_newline = false;  // last kept line lacks its terminator
};

/// A torn final line (unterminated and unparseable) is excluded; any other
/// malformed or duplicate line is a DataError.
inline ParsedStore parse_store(const std::string& text, const std::string& path) {
  ParsedStore out;
  std::set<std::pair<std::string, std::string>> keys;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, (complete ? nl : text.size()) - pos);
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (!line.empty()) {
      try {
        HumanJudgment j = judgment_from_json(nlohmann::json::parse(line));
        if (!keys.insert({j.item_id, j.annotator_id}).second) throw DataError(where + "duplicate judgment");
        out.judgments.push_back(std::move(j));
      } catch (const nlohmann::json::exception& e) {
        if (!complete) break;
        throw DataError(where + e.what());
      } catch (const ValidationError& e) {
        if (!complete) break;
        throw DataError(where + e.what());
      }
    }
    pos = complete ? nl + 1 : text.size();
    out.good_end = pos;
    out.needs_newline = !complete && !line.empty();
  }
  return out;
}

}  // namespace detail

/// Read-only load of a judgment store, for offline reporting.
inline std::vector<HumanJudgment> read_judgments(const std::string& path) {
  return detail::parse_store(read_file(path), path).judgments;
}

/// Append-only JSON-lines store, one judgment per (item, annotator). Each
/// insert is written and fsynced before it is acknowledged. On open, the
/// existing file is replayed; a torn final line (no trailing newline, not
/// parseable) is cut off.
class JudgmentStore {
 public:
  enum class Insert { Stored, Duplicate };

  explicit JudgmentStore(std::string path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) replay();
    file_ = std::fopen(path_.c_str(), "ab");
    if (!file_) throw DataError("cannot open judgment store " + path_);
  }
  ~JudgmentStore() {
    if (file_) std::fclose(file_);
  }
  JudgmentStore(const JudgmentStore&) = delete;
  JudgmentStore& operator=(const JudgmentStore&) = delete;

  Insert insert(const HumanJudgment& j) {
    validate_judgment(j);
    std::unique_lock lock(mu_);
    if (!keys_.insert({j.item_id, j.annotator_id}).second) return Insert::Duplicate;
    const std::string line = judgment_json(j).dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0 ||
        ::fsync(::fileno(file_)) != 0) {
      keys_.erase({j.item_id, j.annotator_id});
      throw DataError("failed to persist judgment to " + path_);
    }
    judgments_.push_back(j);
    return Insert::Stored;
  }

  bool contains(const std::string& item, const std::string& annotator) const {
    std::shared_lock lock(mu_);
    return keys_.count({item, annotator}) != 0;
  }

  std::vector<HumanJudgment> snapshot() const {
    std::shared_lock lock(mu_);
    return judgments_;
  }

  std::set<std::string> judged_by(const std::string& annotator) const {
    std::shared_lock lock(mu_);
    std::set<std::string> out;
    for (const auto& j : judgments_) {
      if (j.annotator_id == annotator) out.insert(j.item_id);
    }
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  void replay() {
    const std::string text = read_file(path_);
    auto parsed = detail::parse_store(text, path_);
    if (parsed.good_end < text.size()) std::filesystem::resize_file(path_, parsed.good_end);
    if (parsed.needs_newline) std::ofstream(path_, std::ios::binary | std::ios::app) << '\n';
    for (auto& j : parsed.judgments) {
      keys_.insert({j.item_id, j.annotator_id});
      judgments_.push_back(std::move(j));
    }
  }

  std::string path_;
  std::FILE* file_ = nullptr;
  mutable std::shared_mutex mu_;
  std::set<std::pair<std::string, std::string>> keys_;
  std::vector<HumanJudgment> judgments_;
};

inline std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// GET /api/tasks, POST /api/judgments, GET /api/report; optional static
/// assets mounted at "/".
class EvalServer {
 public:
  EvalServer(TaskPool pool, const std::string& store_path, std::optional<std::string> static_dir = std::nullopt)
      : pool_(std::move(pool)), store_(store_path) {
    if (static_dir && !server_.set_mount_point("/", *static_dir)) {
      throw DataError("static asset directory not found: " + *static_dir);
    }
    routes();
  }

  ~EvalServer() { stop(); }

  /// Binds and returns the port (port 0 picks a free one).
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw DataError("cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  /// Blocks until stop().
  void run() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  const JudgmentStore& store() const { return store_; }
  const TaskPool& pool() const { return pool_; }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& msg, const std::string& field) {
    reply(res, status, {{"error", msg}, {"field", field}});
  }

  void routes() {
    server_.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string annotator = req.get_param_value("annotator");
      if (annotator.empty()) return error(res, 422, "annotator is required", "annotator");
      std::size_t limit = 20;
      if (req.has_param("limit")) {
        try {
          const long long v = std::stoll(req.get_param_value("limit"));
          if (v < 1 || v > 10000) throw std::out_of_range("limit");
          limit = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
          return error(res, 422, "limit must be an integer in [1, 10000]", "limit");
        }
      }
      const auto judged = store_.judged_by(annotator);
      nlohmann::json tasks = nlohmann::json::array();
      std::size_t remaining = 0;
      for (auto i : pool_.order_for(annotator)) {
        const auto& t = pool_.tasks()[i];
        if (judged.count(t.item_id)) continue;
        ++remaining;
        if (tasks.size() < limit) {
          tasks.push_back({{"item_id", t.item_id}, {"mr", t.mr}, {"english", t.english}, {"pidgin", t.pidgin}});
        }
      }
      reply(res, 200, {{"annotator", annotator}, {"tasks", tasks}, {"remaining", remaining},
                       {"total", pool_.size()}});
    });

    server_.Post("/api/judgments", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        return error(res, 400, "body is not valid JSON", "body");
      }
      HumanJudgment j;
      try {
        j = judgment_from_json(body);
      } catch (const ValidationError& e) {
        return error(res, 422, e.what(), e.field());
      }
      if (!pool_.contains(j.item_id)) return error(res, 422, "unknown item_id", "item_id");
      if (!body.contains("ts")) j.ts = now_millis();
      try {
        if (store_.insert(j) == JudgmentStore::Insert::Duplicate) {
          return error(res, 409, "judgment already recorded for this item and annotator", "item_id");
        }
      } catch (const DataError& e) {
        return error(res, 500, e.what(), "store");
      }
      reply(res, 201, judgment_json(j));
    });

    server_.Get("/api/report", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, report_json(aggregate_judgments(store_.snapshot(), pool_.system_of_item())));
    });
  }

  TaskPool pool_;
  JudgmentStore store_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace pcmgen

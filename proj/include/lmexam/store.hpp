#pragma once

// Durable session directory:
//   <root>/<session_id>/{config.json, prompts/, questions.jsonl, responses.jsonl,
//                        scorecards.jsonl, outcomes.jsonl, rankings.jsonl, reports/}
// Every record carries a session-wide sequence number, dense from 1.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/prompts.hpp"
#include "lmexam/records.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

namespace fs = std::filesystem;

enum class OpenMode { create, resume };

enum class SessionStatus { running, complete, failed };

inline std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::running: return "running";
    case SessionStatus::complete: return "complete";
    case SessionStatus::failed: return "failed";
  }
  return "?";
}

inline SessionStatus parse_status(std::string_view s) {
  if (s == "running") return SessionStatus::running;
  if (s == "complete") return SessionStatus::complete;
  if (s == "failed") return SessionStatus::failed;
  fail(Errc::CorruptLog, "unknown session status '" + std::string(s) + "'");
}

enum class LogKind { questions, responses, scorecards, outcomes, rankings };

inline constexpr std::array kAllLogs = {LogKind::questions, LogKind::responses, LogKind::scorecards,
                                        LogKind::outcomes, LogKind::rankings};

inline std::string log_file_name(LogKind k) {
  switch (k) {
    case LogKind::questions: return "questions.jsonl";
    case LogKind::responses: return "responses.jsonl";
    case LogKind::scorecards: return "scorecards.jsonl";
    case LogKind::outcomes: return "outcomes.jsonl";
    case LogKind::rankings: return "rankings.jsonl";
  }
  return "?";
}

/// Thrown by the crash hook to emulate a writer dying mid-run.
class SimulatedCrash : public std::runtime_error {
 public:
  SimulatedCrash() : std::runtime_error("simulated crash") {}
};

struct CrashPlan {
  std::uint64_t after_appends = 0;  // appends that complete before the crash
  bool partial_line = false;        // leave half of the next record on disk
};

struct SessionOptions {
  bool fsync = true;
  std::optional<CrashPlan> crash;  // test hook
};

/// Writes every embedded template to `dir/<name>.txt`.
inline void write_prompt_files(const fs::path& dir) {
  fs::create_directories(dir);
  for (auto p : kAllPrompts) {
    std::ofstream out(dir / (std::string(to_string(p)) + ".txt"), std::ios::binary | std::ios::trunc);
    out << template_body(p);
    if (!out) fail(Errc::ConfigError, "cannot write prompt file in " + dir.string());
  }
}

/// Atomically replaces `path` with `content` (write to temp, then rename).
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) fail(Errc::ConfigError, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::ConfigError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Session {
 public:
  static Session open(const fs::path& root, const std::string& session_id, OpenMode mode,
                      SessionOptions options = {}) {
    if (session_id.empty() || session_id.find('/') != std::string::npos)
      fail(Errc::ConfigError, "invalid session id '" + session_id + "'");
    Session s(root / session_id, session_id, std::move(options));
    if (mode == OpenMode::create) {
      if (fs::exists(s.dir_)) fail(Errc::SessionExists, "session '" + session_id + "' already exists in " + root.string());
      fs::create_directories(s.dir_ / "reports");
      write_prompt_files(s.dir_ / "prompts");
      s.write_meta();
    } else {
      if (!fs::exists(s.dir_ / "config.json"))
        fail(Errc::SessionNotFound, "no session '" + session_id + "' under " + root.string());
      s.read_meta();
      s.replay();
    }
    s.open_writers();
    return s;
  }

  Session(Session&& other) noexcept { *this = std::move(other); }
  Session& operator=(Session&& other) noexcept {
    if (this != &other) {
      close_writers();
      std::scoped_lock lock(mutex_, other.mutex_);
      dir_ = std::move(other.dir_);
      id_ = std::move(other.id_);
      options_ = std::move(other.options_);
      status_ = other.status_;
      config_ = std::move(other.config_);
      seq_ = other.seq_;
      appends_ = other.appends_;
      writers_ = std::move(other.writers_);
      other.writers_.clear();
      questions_ = std::move(other.questions_);
      responses_ = std::move(other.responses_);
      scores_ = std::move(other.scores_);
      outcomes_ = std::move(other.outcomes_);
      rankings_ = std::move(other.rankings_);
      question_index_ = std::move(other.question_index_);
      response_index_ = std::move(other.response_index_);
      score_index_ = std::move(other.score_index_);
      outcome_index_ = std::move(other.outcome_index_);
      ranking_index_ = std::move(other.ranking_index_);
    }
    return *this;
  }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;
  ~Session() { close_writers(); }

  const fs::path& dir() const { return dir_; }
  const std::string& id() const { return id_; }
  fs::path reports_dir() const { return dir_ / "reports"; }

  SessionStatus status() const {
    std::lock_guard lock(mutex_);
    return status_;
  }
  void set_status(SessionStatus s) {
    std::lock_guard lock(mutex_);
    status_ = s;
    write_meta();
  }

  const nlohmann::json& config() const { return config_; }
  void set_config(nlohmann::json cfg) {
    std::lock_guard lock(mutex_);
    config_ = std::move(cfg);
    write_meta();
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mutex_);
    return seq_;
  }

  // -- appends ---------------------------------------------------------------

  std::uint64_t append(Question q) {
    std::lock_guard lock(mutex_);
    check(q);
    q.seq = next_seq();
    write(LogKind::questions, nlohmann::json(q));
    index(std::move(q));
    return seq_;
  }

  std::uint64_t append(Response r) {
    std::lock_guard lock(mutex_);
    check(r);
    r.seq = next_seq();
    write(LogKind::responses, nlohmann::json(r));
    index(std::move(r));
    return seq_;
  }

  std::uint64_t append(ScoreRecord s) {
    std::lock_guard lock(mutex_);
    check(s);
    s.seq = next_seq();
    write(LogKind::scorecards, nlohmann::json(s));
    index(std::move(s));
    return seq_;
  }

  std::uint64_t append(PairwiseOutcome o) {
    std::lock_guard lock(mutex_);
    check(o);
    o.seq = next_seq();
    write(LogKind::outcomes, nlohmann::json(o));
    index(std::move(o));
    return seq_;
  }

  std::uint64_t append(Ranking r) {
    std::lock_guard lock(mutex_);
    check(r);
    r.seq = next_seq();
    write(LogKind::rankings, nlohmann::json(r));
    index(std::move(r));
    return seq_;
  }

  // -- reads -----------------------------------------------------------------
  // The vector accessors must not race with appends; take them after workers
  // have joined.

  const std::vector<Question>& questions() const { return questions_; }
  const std::vector<Response>& responses() const { return responses_; }
  const std::vector<ScoreRecord>& scores() const { return scores_; }
  const std::vector<PairwiseOutcome>& outcomes() const { return outcomes_; }
  const std::vector<Ranking>& rankings() const { return rankings_; }

  std::optional<Question> find_question(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = question_index_.find(id);
    if (it == question_index_.end()) return std::nullopt;
    return questions_[it->second];
  }

  std::optional<Response> find_response(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = response_index_.find(id);
    if (it == response_index_.end()) return std::nullopt;
    return responses_[it->second];
  }

  std::optional<ScoreRecord> find_score(const std::string& response_id, const std::string& examiner) const {
    std::lock_guard lock(mutex_);
    auto it = score_index_.find({response_id, examiner});
    if (it == score_index_.end()) return std::nullopt;
    return scores_[it->second];
  }

  /// Outcome for the unordered pair, oriented so that `first` is `a`.
  std::optional<PairwiseOutcome> find_outcome(const std::string& question_id, const std::string& examiner,
                                              const std::string& a, const std::string& b) const {
    std::lock_guard lock(mutex_);
    auto it = outcome_index_.find(outcome_key(question_id, examiner, a, b));
    if (it == outcome_index_.end()) return std::nullopt;
    const auto& o = outcomes_[it->second];
    return o.first == a ? o : o.flipped();
  }

  std::optional<Ranking> find_ranking(const std::string& question_id, const std::string& examiner) const {
    std::lock_guard lock(mutex_);
    auto it = ranking_index_.find({question_id, examiner});
    if (it == ranking_index_.end()) return std::nullopt;
    return rankings_[it->second];
  }

  /// Responses to `question_id`, in append order.
  std::vector<Response> responses_for(const std::string& question_id) const {
    std::lock_guard lock(mutex_);
    std::vector<Response> out;
    for (const auto& r : responses_)
      if (r.question_id == question_id) out.push_back(r);
    return out;
  }

 private:
  using PairKey = std::tuple<std::string, std::string, std::string, std::string>;

  Session(fs::path dir, std::string id, SessionOptions options)
      : dir_(std::move(dir)), id_(std::move(id)), options_(std::move(options)) {}

  static PairKey outcome_key(const std::string& q, const std::string& examiner, const std::string& a,
                             const std::string& b) {
    return a < b ? PairKey{q, examiner, a, b} : PairKey{q, examiner, b, a};
  }

  std::uint64_t next_seq() { return seq_ + 1; }

  void write_meta() {
    nlohmann::json meta = {{"session_id", id_}, {"status", to_string(status_)}, {"config", config_}};
    write_file_atomic(dir_ / "config.json", meta.dump(2) + "\n");
  }

  void read_meta() {
    try {
      auto meta = nlohmann::json::parse(read_file(dir_ / "config.json"));
      status_ = parse_status(meta.at("status").get<std::string>());
      config_ = meta.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::CorruptLog, "unreadable config.json in " + dir_.string() + ": " + e.what());
    }
  }

  // -- integrity -------------------------------------------------------------

  void violation(const std::string& what) const { fail(Errc::IntegrityViolation, what); }

  void check(const Question& q) const {
    if (q.id.empty() || q.text.empty()) violation("question needs an id and text");
    if (question_index_.count(q.id)) violation("duplicate question id " + q.id);
    if (q.round < 1) violation("question round must be >= 1");
    if ((q.round == 1) == q.parent_id.has_value()) violation("question " + q.id + ": parent_id must be present iff round > 1");
    if (q.parent_id) {
      auto it = question_index_.find(*q.parent_id);
      if (it == question_index_.end()) violation("question " + q.id + " references unknown parent " + *q.parent_id);
      if (questions_[it->second].round != q.round - 1) violation("question " + q.id + ": parent round mismatch");
    }
    if (q.parent_response_id) {
      auto it = response_index_.find(*q.parent_response_id);
      if (it == response_index_.end())
        violation("question " + q.id + " references unknown response " + *q.parent_response_id);
      if (responses_[it->second].question_id != q.parent_id.value_or(""))
        violation("question " + q.id + ": parent response does not answer the parent question");
    }
  }

  void check(const Response& r) const {
    if (response_index_.count(r.id)) violation("duplicate response id " + r.id);
    if (!question_index_.count(r.question_id)) violation("response " + r.id + " references unknown question " + r.question_id);
  }

  void check(const ScoreRecord& s) const {
    auto it = response_index_.find(s.response_id);
    if (it == response_index_.end()) violation("score references unknown response " + s.response_id);
    if (responses_[it->second].question_id != s.question_id) violation("score question/response mismatch for " + s.response_id);
    if (score_index_.count({s.response_id, s.examiner}))
      violation("duplicate score for " + s.response_id + " by " + s.examiner);
    if (!s.card.valid()) violation("score outside Likert ranges");
  }

  void check(const PairwiseOutcome& o) const {
    for (const auto& id : {o.first, o.second}) {
      auto it = response_index_.find(id);
      if (it == response_index_.end()) violation("outcome references unknown response " + id);
      if (responses_[it->second].question_id != o.question_id) violation("outcome response " + id + " belongs to another question");
    }
    if (o.first == o.second) violation("outcome compares a response with itself");
    if (outcome_index_.count(outcome_key(o.question_id, o.examiner, o.first, o.second)))
      violation("duplicate outcome for pair in question " + o.question_id);
  }

  void check(const Ranking& r) const {
    if (!question_index_.count(r.question_id)) violation("ranking references unknown question " + r.question_id);
    std::set<std::string> seen;
    for (const auto& id : r.order) {
      auto it = response_index_.find(id);
      if (it == response_index_.end()) violation("ranking references unknown response " + id);
      if (responses_[it->second].question_id != r.question_id) violation("ranking response " + id + " belongs to another question");
      if (!seen.insert(id).second) violation("ranking lists response " + id + " twice");
    }
    if (ranking_index_.count({r.question_id, r.examiner})) violation("duplicate ranking for question " + r.question_id);
  }

  // -- indexing --------------------------------------------------------------

  void index(Question q) {
    seq_ = std::max(seq_, q.seq);
    question_index_[q.id] = questions_.size();
    questions_.push_back(std::move(q));
  }
  void index(Response r) {
    seq_ = std::max(seq_, r.seq);
    response_index_[r.id] = responses_.size();
    responses_.push_back(std::move(r));
  }
  void index(ScoreRecord s) {
    seq_ = std::max(seq_, s.seq);
    score_index_[{s.response_id, s.examiner}] = scores_.size();
    scores_.push_back(std::move(s));
  }
  void index(PairwiseOutcome o) {
    seq_ = std::max(seq_, o.seq);
    outcome_index_[outcome_key(o.question_id, o.examiner, o.first, o.second)] = outcomes_.size();
    outcomes_.push_back(std::move(o));
  }
  void index(Ranking r) {
    seq_ = std::max(seq_, r.seq);
    ranking_index_[{r.question_id, r.examiner}] = rankings_.size();
    rankings_.push_back(std::move(r));
  }

  // -- disk ------------------------------------------------------------------

  void open_writers() {
    for (auto k : kAllLogs) {
      auto path = dir_ / log_file_name(k);
      std::FILE* f = std::fopen(path.c_str(), "ab");
      if (!f) fail(Errc::ConfigError, "cannot open " + path.string() + " for append");
      writers_[k] = f;
    }
  }

  void close_writers() {
    for (auto& [k, f] : writers_)
      if (f) std::fclose(f);
    writers_.clear();
  }

  void write(LogKind kind, const nlohmann::json& record) {
    std::string line = record.dump();
    line.push_back('\n');
    std::FILE* f = writers_.at(kind);
    if (options_.crash && appends_ >= options_.crash->after_appends) {
      if (options_.crash->partial_line) {
        std::fwrite(line.data(), 1, line.size() / 2, f);
        std::fflush(f);
      }
      throw SimulatedCrash();
    }
    if (std::fwrite(line.data(), 1, line.size(), f) != line.size() || std::fflush(f) != 0)
      fail(Errc::ConfigError, "write failed on " + log_file_name(kind));
    if (options_.fsync) ::fsync(fileno(f));
    ++appends_;
  }

  struct Pending {
    std::uint64_t seq;
    LogKind kind;
    nlohmann::json record;
  };

  /// Reads one log. A damaged final line (unterminated or unparsable) is cut
  /// off with a warning; damage anywhere else is CorruptLog.
  void read_log(LogKind kind, std::vector<Pending>& out) {
    const auto path = dir_ / log_file_name(kind);
    if (!fs::exists(path)) return;
    const std::string data = read_file(path);
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < data.size()) {
      ++line_no;
      auto nl = data.find('\n', pos);
      const bool terminated = nl != std::string::npos;
      const auto end = terminated ? nl : data.size();
      const bool last = !terminated || end + 1 >= data.size();
      std::string_view line(data.data() + pos, end - pos);
      nlohmann::json j;
      bool ok = terminated;
      if (ok) {
        try {
          j = nlohmann::json::parse(line);
          ok = j.contains("seq");
        } catch (const nlohmann::json::exception&) {
          ok = false;
        }
      }
      if (!ok) {
        if (!last)
          fail(Errc::CorruptLog, log_file_name(kind) + ":" + std::to_string(line_no) + " is not a valid record");
        warn("session " + id_ + ": dropping damaged trailing record in " + log_file_name(kind));
        fs::resize_file(path, pos);
        return;
      }
      out.push_back({j.at("seq").get<std::uint64_t>(), kind, std::move(j)});
      pos = end + 1;
    }
  }

  void replay() {
    std::vector<Pending> pending;
    for (auto k : kAllLogs) read_log(k, pending);
    std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) { return a.seq < b.seq; });
    for (std::size_t i = 0; i < pending.size(); ++i) {
      auto& p = pending[i];
      if (p.seq != i + 1)
        fail(Errc::CorruptLog, "sequence numbers are not dense: expected " + std::to_string(i + 1) + ", found " +
                                   std::to_string(p.seq) + " in " + log_file_name(p.kind));
      try {
        switch (p.kind) {
          case LogKind::questions: load(p.record.get<Question>()); break;
          case LogKind::responses: load(p.record.get<Response>()); break;
          case LogKind::scorecards: load(p.record.get<ScoreRecord>()); break;
          case LogKind::outcomes: load(p.record.get<PairwiseOutcome>()); break;
          case LogKind::rankings: load(p.record.get<Ranking>()); break;
        }
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::CorruptLog, log_file_name(p.kind) + " seq " + std::to_string(p.seq) + ": " + e.what());
      } catch (const Error& e) {
        fail(Errc::CorruptLog, log_file_name(p.kind) + " seq " + std::to_string(p.seq) + ": " + e.what());
      }
    }
  }

  template <typename R>
  void load(R record) {
    check(record);
    index(std::move(record));
  }

  fs::path dir_;
  std::string id_;
  SessionOptions options_;
  SessionStatus status_ = SessionStatus::running;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seq_ = 0;
  std::uint64_t appends_ = 0;
  std::map<LogKind, std::FILE*> writers_;
  mutable std::mutex mutex_;

  std::vector<Question> questions_;
  std::vector<Response> responses_;
  std::vector<ScoreRecord> scores_;
  std::vector<PairwiseOutcome> outcomes_;
  std::vector<Ranking> rankings_;
  std::unordered_map<std::string, std::size_t> question_index_;
  std::unordered_map<std::string, std::size_t> response_index_;
  std::map<std::pair<std::string, std::string>, std::size_t> score_index_;
  std::map<PairKey, std::size_t> outcome_index_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranking_index_;
};

inline Session open_session(const fs::path& root, const std::string& session_id, OpenMode mode,
                            SessionOptions options = {}) {
  return Session::open(root, session_id, mode, std::move(options));
}

}  // namespace lmexam

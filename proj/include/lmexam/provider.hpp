#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

using Milliseconds = std::chrono::milliseconds;

struct ProviderConfig {
  std::string model_id;
  std::string endpoint;      // http(s)://... chat-completion URL, or "stub:<script>"
  std::string auth_env_var;  // empty: no credential needed
  double temperature = 0.0;
  int max_output_tokens = 200;
  std::chrono::seconds request_timeout{60};
  int max_retries = 3;
  Milliseconds min_request_interval{0};
  Milliseconds backoff_base{1000};

  void validate() const {
    if (model_id.empty()) fail(Errc::ConfigError, "provider model_id is empty");
    if (!(temperature >= 0.0)) fail(Errc::ConfigError, model_id + ": temperature must be >= 0");
    if (max_output_tokens < 1) fail(Errc::ConfigError, model_id + ": max_output_tokens must be >= 1");
    if (max_retries < 0) fail(Errc::ConfigError, model_id + ": max_retries must be >= 0");
  }
};

enum class Mode { live, record, replay };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::live: return "live";
    case Mode::record: return "record";
    case Mode::replay: return "replay";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "live") return Mode::live;
  if (s == "record") return Mode::record;
  if (s == "replay") return Mode::replay;
  fail(Errc::ConfigError, "unknown mode '" + std::string(s) + "' (expected live|record|replay)");
}

struct Completion {
  std::string text;
  std::string provider_model;
  Milliseconds latency{0};
  bool from_cache = false;
};

/// Cache key: every request field that affects the output.
inline std::string request_fingerprint(const ProviderConfig& cfg, std::string_view prompt) {
  return stable_id({cfg.model_id, prompt, format_double(cfg.temperature), std::to_string(cfg.max_output_tokens)});
}

// ---------------------------------------------------------------------------
// Cassette

struct CassetteEntry {
  std::string fingerprint;
  std::string model_id;
  std::string prompt;
  std::string text;

  friend bool operator==(const CassetteEntry&, const CassetteEntry&) = default;
};

inline void to_json(nlohmann::json& j, const CassetteEntry& e) {
  j = nlohmann::json{{"fingerprint", e.fingerprint}, {"model_id", e.model_id}, {"prompt", e.prompt}, {"text", e.text}};
}

inline void from_json(const nlohmann::json& j, CassetteEntry& e) {
  j.at("fingerprint").get_to(e.fingerprint);
  j.at("model_id").get_to(e.model_id);
  j.at("prompt").get_to(e.prompt);
  j.at("text").get_to(e.text);
}

/// Recorded prompt->completion map. When bound to a file, every recorded entry
/// is appended as one JSON line; on load, later lines override earlier ones.
class Cassette {
 public:
  Cassette() = default;

  static Cassette load(const std::string& path) {
    Cassette c;
    std::ifstream in(path);
    if (!in) fail(Errc::ConfigError, "cannot read cassette " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        c.insert(nlohmann::json::parse(line).get<CassetteEntry>());
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::ConfigError, path + ":" + std::to_string(line_no) + ": bad cassette record: " + e.what());
      }
    }
    return c;
  }

  /// Loads `path` if it exists and appends future records to it.
  static Cassette open(const std::string& path) {
    Cassette c = std::ifstream(path).good() ? load(path) : Cassette{};
    c.path_ = path;
    return c;
  }

  Cassette(Cassette&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    entries_ = std::move(other.entries_);
    order_ = std::move(other.order_);
    path_ = std::move(other.path_);
  }

  Cassette& operator=(Cassette&& other) noexcept {
    if (this != &other) {
      std::scoped_lock lock(mutex_, other.mutex_);
      entries_ = std::move(other.entries_);
      order_ = std::move(other.order_);
      path_ = std::move(other.path_);
    }
    return *this;
  }

  std::optional<std::string> lookup(const std::string& fingerprint) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(fingerprint);
    if (it == entries_.end()) return std::nullopt;
    return it->second.text;
  }

  void record(CassetteEntry entry) {
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(entry.fingerprint); it != entries_.end() && it->second.text == entry.text) return;
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      out << nlohmann::json(entry).dump() << '\n';
      out.flush();
      if (!out) fail(Errc::TransportFailure, "cannot append to cassette " + path_);
    }
    insert_locked(std::move(entry));
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  /// Entries in first-recorded order (latest text per fingerprint).
  std::vector<CassetteEntry> entries() const {
    std::lock_guard lock(mutex_);
    std::vector<CassetteEntry> out;
    out.reserve(order_.size());
    for (const auto& fp : order_) out.push_back(entries_.at(fp));
    return out;
  }

 private:
  void insert(CassetteEntry e) {
    std::lock_guard lock(mutex_);
    insert_locked(std::move(e));
  }

  void insert_locked(CassetteEntry e) {
    auto fp = e.fingerprint;
    auto [it, inserted] = entries_.insert_or_assign(fp, std::move(e));
    if (inserted) order_.push_back(fp);
  }

  mutable std::mutex mutex_;
  std::map<std::string, CassetteEntry> entries_;
  std::vector<std::string> order_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Backends

/// A transport-level failure worth retrying (connection loss, 429, 5xx).
class TransientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Returns the raw model text. Throws TransientError for retryable
  /// failures and Error for permanent ones.
  virtual std::string generate(const ProviderConfig& cfg, const std::string& prompt,
                               const std::string& credential) = 0;
};

struct StubRule {
  std::string match;  // prompt substring; empty matches everything
  std::string text;
};

/// Offline model: the first rule whose pattern occurs in the prompt wins.
class ScriptedStub final : public Backend {
 public:
  explicit ScriptedStub(std::vector<StubRule> rules) : rules_(std::move(rules)) {
    require(!rules_.empty(), "scripted stub needs at least one rule");
  }

  /// Accepts either a bare array of {match, text} objects or {"rules": [...]}.
  static ScriptedStub from_json(const nlohmann::json& j) {
    const auto& arr = j.is_object() ? j.at("rules") : j;
    std::vector<StubRule> rules;
    for (const auto& r : arr) rules.push_back({r.at("match").get<std::string>(), r.at("text").get<std::string>()});
    return ScriptedStub(std::move(rules));
  }

  static ScriptedStub from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::ConfigError, "cannot read stub script " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ConfigError, "bad stub script " + path + ": " + e.what());
    }
  }

  const std::string& respond(std::string_view prompt) const {
    for (const auto& r : rules_)
      if (contains(prompt, r.match)) return r.text;
    fail(Errc::NoRuleMatches, "no stub rule matches prompt starting '" + std::string(prompt.substr(0, 60)) + "'");
  }

  std::string generate(const ProviderConfig&, const std::string& prompt, const std::string&) override {
    return respond(prompt);
  }

 private:
  std::vector<StubRule> rules_;
};

/// Backend driven by an arbitrary callable; used for content-keyed judges.
class FunctionBackend final : public Backend {
 public:
  using Fn = std::function<std::string(const std::string& prompt)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  std::string generate(const ProviderConfig&, const std::string& prompt, const std::string&) override {
    return fn_(prompt);
  }

 private:
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Rate limiting

/// Spaces consecutive dispatches at least `interval` apart.
class RateLimiter {
 public:
  using Clock = std::chrono::steady_clock;

  explicit RateLimiter(Milliseconds interval) : interval_(interval) {}

  /// Blocks until a dispatch slot is free, then claims it.
  void acquire() {
    std::lock_guard lock(mutex_);
    if (last_) {
      auto ready = *last_ + interval_;
      auto now = Clock::now();
      if (now < ready) std::this_thread::sleep_until(ready);
    }
    last_ = Clock::now();
  }

 private:
  Milliseconds interval_;
  std::mutex mutex_;
  std::optional<Clock::time_point> last_;
};

// ---------------------------------------------------------------------------
// Provider

/// One model endpoint bound to a run mode. Thread-safe.
class Provider {
 public:
  using Sleeper = std::function<void(Milliseconds)>;

  Provider(ProviderConfig cfg, std::shared_ptr<Backend> backend, Mode mode, std::shared_ptr<Cassette> cassette = nullptr)
      : cfg_(std::move(cfg)),
        backend_(std::move(backend)),
        mode_(mode),
        cassette_(std::move(cassette)),
        limiter_(cfg_.min_request_interval),
        sleeper_([](Milliseconds d) { std::this_thread::sleep_for(d); }) {
    cfg_.validate();
    if (mode_ == Mode::replay && !cassette_)
      fail(Errc::ConfigError, cfg_.model_id + ": replay mode needs a cassette");
    if (mode_ == Mode::record && !cassette_)
      fail(Errc::ConfigError, cfg_.model_id + ": record mode needs a cassette");
  }

  const ProviderConfig& config() const { return cfg_; }
  const std::string& model_id() const { return cfg_.model_id; }
  Mode mode() const { return mode_; }

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

  /// Number of requests that reached the backend (network calls for HTTP).
  std::size_t dispatched() const { return dispatched_.load(); }

  Completion complete(const std::string& prompt) {
    const auto start = std::chrono::steady_clock::now();
    const auto fp = request_fingerprint(cfg_, prompt);
    Completion out;
    out.provider_model = cfg_.model_id;

    if (mode_ == Mode::replay) {
      auto hit = cassette_->lookup(fp);
      if (!hit) fail(Errc::CassetteMiss, cfg_.model_id + ": no recorded completion for fingerprint " + fp);
      out.text = *hit;
      out.from_cache = true;
    } else {
      out.text = std::string(trim_right(dispatch(prompt, fp)));
      if (mode_ == Mode::record) cassette_->record({fp, cfg_.model_id, prompt, out.text});
    }
    out.latency = std::chrono::duration_cast<Milliseconds>(std::chrono::steady_clock::now() - start);
    return out;
  }

  /// Delay before retry number `attempt` (0-based): base * 2^attempt, +-20%
  /// jitter drawn deterministically from the request fingerprint.
  Milliseconds backoff_delay(int attempt, std::string_view fingerprint) const {
    SplitMix64 rng(fnv1a64(fingerprint, static_cast<std::uint64_t>(attempt)));
    const double jitter = 0.8 + 0.4 * rng.unit();
    const double ms = static_cast<double>(cfg_.backoff_base.count()) * std::ldexp(1.0, attempt) * jitter;
    return Milliseconds(static_cast<long long>(std::llround(ms)));
  }

 private:
  std::string credential() const {
    if (cfg_.auth_env_var.empty()) return {};
    const char* v = std::getenv(cfg_.auth_env_var.c_str());
    if (!v || !*v)
      fail(Errc::MissingCredential,
           cfg_.model_id + ": environment variable " + cfg_.auth_env_var + " is not set");
    return v;
  }

  std::string dispatch(const std::string& prompt, const std::string& fp) {
    const auto cred = credential();
    for (int attempt = 0;; ++attempt) {
      limiter_.acquire();
      ++dispatched_;
      try {
        return backend_->generate(cfg_, prompt, cred);
      } catch (const TransientError& e) {
        if (attempt >= cfg_.max_retries)
          fail(Errc::TransportFailure, cfg_.model_id + ": giving up after " + std::to_string(attempt + 1) +
                                           " attempts: " + e.what());
        sleeper_(backoff_delay(attempt, fp));
      }
    }
  }

  ProviderConfig cfg_;
  std::shared_ptr<Backend> backend_;
  Mode mode_;
  std::shared_ptr<Cassette> cassette_;
  RateLimiter limiter_;
  Sleeper sleeper_;
  std::atomic<std::size_t> dispatched_{0};
};

/// Free-function form: one request through `provider`.
inline Completion complete(Provider& provider, const std::string& prompt) { return provider.complete(prompt); }

}  // namespace lmexam

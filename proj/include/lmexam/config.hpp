#pragma once

// Run configuration files: a JSON document with a provider list plus the
// exam or peer section. Relative paths resolve against the file's directory.

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/exam.hpp"
#include "lmexam/http_backend.hpp"
#include "lmexam/provider.hpp"

namespace lmexam {

namespace fs = std::filesystem;

inline void from_json(const nlohmann::json& j, ProviderConfig& c) {
  j.at("model_id").get_to(c.model_id);
  c.endpoint = j.value("endpoint", std::string{});
  c.auth_env_var = j.value("auth_env_var", std::string{});
  c.temperature = j.value("temperature", 0.0);
  c.max_output_tokens = j.value("max_output_tokens", 200);
  c.request_timeout = std::chrono::seconds(j.value("request_timeout_s", 60));
  c.max_retries = j.value("max_retries", 3);
  c.min_request_interval = Milliseconds(j.value("min_request_interval_ms", 0));
  c.backoff_base = Milliseconds(j.value("backoff_base_ms", 1000));
  for (const char* secret : {"api_key", "token", "credential", "password"})
    if (j.contains(secret))
      fail(Errc::ConfigError, c.model_id + ": credentials are read from the environment only; remove '" +
                                  std::string(secret) + "' and set auth_env_var");
}

struct RunConfig {
  fs::path base_dir;
  nlohmann::json doc;
  std::vector<ProviderConfig> providers;
  std::optional<fs::path> cassette;
  std::optional<fs::path> taxonomy;

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  static RunConfig load(const fs::path& file) {
    std::ifstream in(file);
    if (!in) fail(Errc::ConfigError, "cannot read config " + file.string());
    RunConfig rc;
    rc.base_dir = fs::absolute(file).parent_path();
    try {
      rc.doc = nlohmann::json::parse(in);
      for (const auto& p : rc.doc.at("providers")) {
        auto cfg = p.get<ProviderConfig>();
        if (cfg.endpoint.starts_with("stub:")) cfg.endpoint = "stub:" + rc.resolve(cfg.endpoint.substr(5)).string();
        rc.providers.push_back(std::move(cfg));
      }
      if (rc.doc.contains("cassette")) rc.cassette = rc.resolve(rc.doc["cassette"].get<std::string>());
      if (rc.doc.contains("taxonomy")) rc.taxonomy = rc.resolve(rc.doc["taxonomy"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ConfigError, file.string() + ": " + e.what());
    }
    return rc;
  }

  /// Builds one provider per entry, sharing a cassette. Replay needs an
  /// existing cassette; record creates or extends it.
  ModelPool build_pool(Mode mode, std::optional<fs::path> cassette_override = std::nullopt) const {
    auto path = cassette_override ? cassette_override : cassette;
    std::shared_ptr<Cassette> tape;
    if (mode == Mode::replay) {
      if (!path) fail(Errc::ConfigError, "replay mode needs a cassette path");
      tape = std::make_shared<Cassette>(Cassette::load(path->string()));
    } else if (mode == Mode::record) {
      if (!path) fail(Errc::ConfigError, "record mode needs a cassette path");
      tape = std::make_shared<Cassette>(Cassette::open(path->string()));
    }
    ModelPool pool;
    for (const auto& cfg : providers) {
      // Replay never touches a backend, so none is constructed.
      std::shared_ptr<Backend> backend = mode == Mode::replay ? nullptr : make_backend(cfg);
      pool.add(std::make_shared<Provider>(cfg, backend, mode, tape));
    }
    return pool;
  }
};

}  // namespace lmexam

#pragma once

// Chat-completion client over cpp-httplib. Kept out of provider.hpp so that
// offline users do not pay for the HTTP/TLS headers.

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "lmexam/provider.hpp"

namespace lmexam {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // always starts with '/'
};

inline ParsedUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(Errc::ConfigError, "endpoint '" + url + "' lacks a scheme");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

/// Request body: model id, a single user message, temperature, max tokens.
inline nlohmann::json chat_request_body(const ProviderConfig& cfg, const std::string& prompt) {
  return {{"model", cfg.model_id},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_output_tokens}};
}

/// Extracts the first choice's message text.
inline std::string chat_response_text(const std::string& body) {
  try {
    auto j = nlohmann::json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::TransportFailure, std::string("malformed chat-completion response: ") + e.what());
  }
}

class HttpChatBackend final : public Backend {
 public:
  explicit HttpChatBackend(const std::string& endpoint) : url_(split_url(endpoint)) {}

  std::string generate(const ProviderConfig& cfg, const std::string& prompt, const std::string& credential) override {
    httplib::Client client(url_.origin);
    const auto timeout = static_cast<time_t>(cfg.request_timeout.count());
    client.set_connection_timeout(timeout, 0);
    client.set_read_timeout(timeout, 0);
    client.set_write_timeout(timeout, 0);
    httplib::Headers headers;
    if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);

    auto res = client.Post(url_.path, headers, chat_request_body(cfg, prompt).dump(), "application/json");
    if (!res) throw TransientError(cfg.model_id + ": " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw TransientError(cfg.model_id + ": HTTP " + std::to_string(res->status));
    if (res->status != 200)
      fail(Errc::TransportFailure, cfg.model_id + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    return chat_response_text(res->body);
  }

 private:
  ParsedUrl url_;
};

/// "stub:<path>" selects a scripted stub; anything else is an HTTP endpoint.
inline std::shared_ptr<Backend> make_backend(const ProviderConfig& cfg) {
  constexpr std::string_view kStub = "stub:";
  if (cfg.endpoint.starts_with(kStub))
    return std::make_shared<ScriptedStub>(ScriptedStub::from_file(cfg.endpoint.substr(kStub.size())));
  return std::make_shared<HttpChatBackend>(cfg.endpoint);
}

}  // namespace lmexam

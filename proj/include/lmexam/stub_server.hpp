#pragma once

// Chat-completion HTTP server answering from a scripted stub. Lets the HTTP
// backend, record mode and rate limiting be exercised without a real model.

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lmexam/provider.hpp"

namespace lmexam {

class StubServer {
 public:
  /// `status_for(n)` lets tests inject failures: returns the HTTP status for
  /// the n-th request (0-based); 200 serves the stub reply.
  using StatusFn = std::function<int(std::size_t request_index)>;

  explicit StubServer(ScriptedStub stub, StatusFn status_for = {})
      : stub_(std::move(stub)), status_for_(std::move(status_for)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto n = requests_++;
      last_authorization_ = req.get_header_value("Authorization");
      if (status_for_) {
        const int status = status_for_(n);
        if (status != 200) {
          res.status = status;
          res.set_content("{\"error\":\"injected\"}", "application/json");
          return;
        }
      }
      try {
        const auto body = nlohmann::json::parse(req.body);
        const auto prompt = body.at("messages").at(0).at("content").get<std::string>();
        const nlohmann::json reply = {
            {"model", body.value("model", std::string{})},
            {"choices", nlohmann::json::array({{{"index", 0},
                                                {"message", {{"role", "assistant"}, {"content", stub_.respond(prompt)}}}}})}};
        res.set_content(reply.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  ~StubServer() { stop(); }

  /// Binds to 127.0.0.1 on `port` (0 = any free port) and serves in the
  /// background. Returns the bound port.
  int start(int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port("127.0.0.1") : (server_.bind_to_port("127.0.0.1", port) ? port : -1);
    if (port_ <= 0) fail(Errc::ConfigError, "stub server could not bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Blocks serving requests on the calling thread.
  void serve(int port) {
    if (!server_.listen("127.0.0.1", port)) fail(Errc::ConfigError, "stub server could not listen on port " + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  std::size_t requests() const { return requests_.load(); }
  std::string last_authorization() const { return last_authorization_; }

 private:
  ScriptedStub stub_;
  StatusFn status_for_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::string last_authorization_;
};

}  // namespace lmexam

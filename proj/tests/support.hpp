#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/provider.hpp"
#include "lmexam/util.hpp"

namespace testing_support {

namespace fs = std::filesystem;

/// Code of the lmexam::Error thrown by `fn`; fails the test if none is thrown.
template <typename Fn>
lmexam::Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const lmexam::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no lmexam::Error thrown";
  return lmexam::Errc::PreconditionViolation;
}

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("lmexam-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

/// Captures warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = lmexam::Warnings::set_sink([this](const std::string& m) {
      std::lock_guard lock(mutex_);
      messages_.push_back(m);
    });
  }
  ~WarningCapture() { lmexam::Warnings::set_sink(previous_); }
  std::vector<std::string> messages() const {
    std::lock_guard lock(mutex_);
    return messages_;
  }

 private:
  lmexam::Warnings::Sink previous_;
  mutable std::mutex mutex_;
  std::vector<std::string> messages_;
};

inline lmexam::ProviderConfig stub_config(const std::string& model) {
  lmexam::ProviderConfig cfg;
  cfg.model_id = model;
  cfg.endpoint = "stub:inline";
  cfg.backoff_base = lmexam::Milliseconds(0);
  return cfg;
}

/// Provider in live mode over a callable backend.
inline std::shared_ptr<lmexam::Provider> fn_provider(const std::string& model,
                                                     lmexam::FunctionBackend::Fn fn,
                                                     lmexam::Mode mode = lmexam::Mode::live,
                                                     std::shared_ptr<lmexam::Cassette> tape = nullptr) {
  return std::make_shared<lmexam::Provider>(stub_config(model), std::make_shared<lmexam::FunctionBackend>(std::move(fn)),
                                            mode, std::move(tape));
}

inline std::shared_ptr<lmexam::Provider> stub_provider(const std::string& model, std::vector<lmexam::StubRule> rules,
                                                       lmexam::Mode mode = lmexam::Mode::live,
                                                       std::shared_ptr<lmexam::Cassette> tape = nullptr) {
  return std::make_shared<lmexam::Provider>(stub_config(model),
                                            std::make_shared<lmexam::ScriptedStub>(std::move(rules)), mode,
                                            std::move(tape));
}

inline std::string fixture(const std::string& rel) { return std::string(LMEXAM_FIXTURES) + "/" + rel; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Text between "Response N: " and the next blank line of a pairwise prompt.
inline std::string shown_response(const std::string& prompt, int n) {
  const std::string tag = "Response " + std::to_string(n) + ": ";
  auto pos = prompt.find(tag);
  if (pos == std::string::npos) return {};
  pos += tag.size();
  auto end = prompt.find("\n\nResponse ", pos);
  return prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

/// "Question: ..." line of a pairwise prompt.
inline std::string shown_question(const std::string& prompt) {
  auto pos = prompt.find("Question: ");
  if (pos == std::string::npos) return {};
  pos += 10;
  return prompt.substr(pos, prompt.find("\n\n", pos) - pos);
}

}  // namespace testing_support

#pragma once

// Deterministic rule-based stand-in for a completions/embeddings server. It
// recognises the prompt shapes of the shipped harnesses and answers with
// chain-rule-consistent log-probabilities, so recorded fixtures behave like a
// small real model: contexts shift mass, review position matters, definitions
// sharpen ratings.

#include <atomic>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tps/backend.hpp"

namespace tps::synthetic {

struct Token {
  std::string text;
  std::size_t offset = 0;  // code points
};

/// Word runs (ASCII alphanumerics or non-ASCII code points) with at most one
/// leading space; every other code point is its own token.
std::vector<Token> tokenize(std::string_view text);

/// Uniform in [0, 1) from a string.
double unit_hash(std::string_view text);

struct Completion {
  std::vector<std::string> words;  // tokens with leading whitespace removed
  double weight = 0.0;
};

class SyntheticModel {
 public:
  static constexpr std::size_t kEmbeddingDim = 16;
  static constexpr double kUnknownTokenProb = 1e-4;

  /// Completion distribution after `prompt`; weights sum to 1.
  [[nodiscard]] std::vector<Completion> completions(std::string_view prompt) const;

  /// Handles "/v1/completions" and "/v1/embeddings" request bodies. Throws
  /// std::invalid_argument for malformed requests.
  [[nodiscard]] nlohmann::json respond(const std::string& endpoint, const nlohmann::json& body) const;

  [[nodiscard]] std::vector<double> embed(std::string_view text) const;

 private:
  [[nodiscard]] nlohmann::json next_token(const std::string& prompt, int top_k, const std::string& model) const;
  [[nodiscard]] nlohmann::json echo(const std::string& text, const std::string& model) const;
};

/// In-process backend over SyntheticModel.
class SyntheticBackend final : public lm::Backend {
 public:
  nlohmann::json send(const lm::Request& request) override;

 private:
  SyntheticModel model_;
};

struct ServerOptions {
  /// The first `fail_first` attempts of every distinct request body get
  /// `fail_status` before the real answer is served.
  int fail_first = 0;
  int fail_status = 503;
};

/// httplib server on 127.0.0.1 at an ephemeral port, serving SyntheticModel.
class SyntheticServer {
 public:
  explicit SyntheticServer(ServerOptions options = {});
  ~SyntheticServer();
  SyntheticServer(const SyntheticServer&) = delete;
  SyntheticServer& operator=(const SyntheticServer&) = delete;

  [[nodiscard]] int port() const noexcept { return port_; }
  [[nodiscard]] std::string url() const;
  [[nodiscard]] std::size_t requests_served() const noexcept { return served_.load(); }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::atomic<std::size_t> served_{0};
  std::thread thread_;
};

}  // namespace tps::synthetic

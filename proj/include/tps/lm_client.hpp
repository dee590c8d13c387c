#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tps/answer_space.hpp"
#include "tps/backend.hpp"
#include "tps/cost.hpp"

namespace tps::lm {

enum class TokenMatch {
  /// Canonicalized token text equals the answer.
  exact,
  /// Additionally, a token that is a prefix of exactly one answer counts for it.
  first_token,
};

TokenMatch parse_token_match(std::string_view text);
std::string_view to_string(TokenMatch match);

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_name;
  std::string embedding_model;
  std::optional<std::string> api_key;
  int top_k = 20;
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
  bool strip_whitespace = true;
  ResidualMode residual = ResidualMode::sentinel;
  TokenMatch token_match = TokenMatch::exact;
  std::size_t embedding_batch = 64;

  /// Throws ValidationError on broken invariants.
  void validate() const;
};

/// Reads a "backend" config object. The API key is never read from the file:
/// it comes from the environment variable named by "api_key_env"
/// (default TPS_API_KEY), if set.
BackendConfig parse_backend_config(const nlohmann::json& doc);

/// HTTP backend wrapped in retries, as described by the config.
std::unique_ptr<Backend> make_http_backend(const BackendConfig& cfg);

struct PromptBundle {
  std::string instructions;
  std::optional<std::string> context;
  std::string query;

  /// instructions + context + query.
  [[nodiscard]] std::string render() const;
};

/// Per position: token text -> log-probability.
using TokenLogprobs = std::vector<std::map<std::string, double>>;

struct DistributionResult {
  AnswerDistribution distribution;
  /// False when no returned token matched an answer and the result is the
  /// all-sentinel fallback.
  bool answer_found = true;
};

enum class DistributionMode { next_token, cover };

DistributionMode parse_distribution_mode(std::string_view text);
std::string_view to_string(DistributionMode mode);

/// Count of Unicode code points in UTF-8 text; offsets on the wire are code
/// point offsets.
std::size_t utf8_length(std::string_view text);

class LmClient {
 public:
  LmClient(Backend& backend, BackendConfig cfg, const std::atomic<bool>* cancel = nullptr);

  [[nodiscard]] const BackendConfig& config() const noexcept { return cfg_; }

  [[nodiscard]] Request next_token_request(const std::string& prompt) const;
  [[nodiscard]] Request scoring_request(const std::string& prompt, const std::string& continuation) const;
  [[nodiscard]] Request embedding_request(const std::vector<std::string>& texts) const;

  [[nodiscard]] TokenLogprobs parse_next_token(const nlohmann::json& response) const;
  /// Probability of `continuation` from an echoed scoring response.
  [[nodiscard]] double parse_scoring(const nlohmann::json& response, const std::string& prompt,
                                     const std::string& continuation) const;
  [[nodiscard]] DistributionResult map_tokens(const std::map<std::string, double>& logprobs,
                                              const SpacePtr& space) const;
  [[nodiscard]] DistributionResult from_answer_probabilities(std::span<const double> probs,
                                                             const SpacePtr& space) const;

  DistributionResult next_token_distribution(const PromptBundle& bundle, const SpacePtr& space);
  double answer_string_probability(const PromptBundle& bundle, const Answer& answer);
  DistributionResult cover_distribution(const PromptBundle& bundle, const SpacePtr& space);
  DistributionResult distribution(const PromptBundle& bundle, const SpacePtr& space, DistributionMode mode);

  /// Batched form: requests for all bundles go out together under the
  /// configured concurrency; each bundle succeeds or fails on its own.
  std::vector<Fallible<DistributionResult>> distributions(std::span<const PromptBundle> bundles,
                                                          const SpacePtr& space, DistributionMode mode);

  EmbeddingTable embed(const std::vector<std::string>& texts);

 private:
  [[nodiscard]] std::string canonical_token(const std::string& token) const;

  Backend& backend_;
  BackendConfig cfg_;
  const std::atomic<bool>* cancel_;
};

}  // namespace tps::lm

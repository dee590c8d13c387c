#include "tps/lm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include "tps/errors.hpp"
#include "tps/http_backend.hpp"

namespace tps::lm {

namespace {

constexpr double kLogprobSlack = 1e-6;

const nlohmann::json& field(const nlohmann::json& obj, const char* name, const char* where) {
  if (!obj.is_object() || !obj.contains(name))
    throw BackendError(std::string("malformed ") + where + " response: missing \"" + name + "\"", false);
  return obj[name];
}

const nlohmann::json& first_choice_logprobs(const nlohmann::json& response, const char* where) {
  const auto& choices = field(response, "choices", where);
  if (!choices.is_array() || choices.empty())
    throw BackendError(std::string("malformed ") + where + " response: empty \"choices\"", false);
  const auto& lp = field(choices[0], "logprobs", where);
  if (!lp.is_object()) throw BackendError(std::string(where) + " response carries no log-probabilities", false);
  return lp;
}

double checked_logprob(const nlohmann::json& value, const char* where) {
  if (!value.is_number()) throw BackendError(std::string("non-numeric log-probability in ") + where + " response", false);
  const double lp = value.get<double>();
  if (std::isnan(lp) || lp > kLogprobSlack)
    throw BackendError(std::string("invalid log-probability in ") + where + " response", false);
  return std::min(lp, 0.0);
}

std::string_view strip(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <class T>
T get_or(const nlohmann::json& doc, const char* key, T fallback) {
  return doc.contains(key) ? doc.at(key).get<T>() : fallback;
}

}  // namespace

TokenMatch parse_token_match(std::string_view text) {
  if (text == "exact") return TokenMatch::exact;
  if (text == "first_token") return TokenMatch::first_token;
  throw ValidationError("unknown token_match \"" + std::string(text) + "\" (expected exact or first_token)");
}

std::string_view to_string(TokenMatch match) { return match == TokenMatch::exact ? "exact" : "first_token"; }

DistributionMode parse_distribution_mode(std::string_view text) {
  if (text == "next_token") return DistributionMode::next_token;
  if (text == "cover") return DistributionMode::cover;
  throw ValidationError("unknown distribution mode \"" + std::string(text) + "\" (expected next_token or cover)");
}

std::string_view to_string(DistributionMode mode) { return mode == DistributionMode::next_token ? "next_token" : "cover"; }

void BackendConfig::validate() const {
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  if (retry.retries < 0) throw ValidationError("retries must be >= 0");
  if (retry.initial_backoff.count() < 0) throw ValidationError("backoff_initial_ms must be >= 0");
  if (!(retry.multiplier >= 1.0)) throw ValidationError("backoff_multiplier must be >= 1");
  if (timeout.count() <= 0) throw ValidationError("timeout_ms must be positive");
  if (embedding_batch < 1) throw ValidationError("embedding_batch must be >= 1");
}

BackendConfig parse_backend_config(const nlohmann::json& doc) {
  static const std::set<std::string> known = {
      "base_url",   "model",           "embedding_model",    "api_key_env", "top_k",
      "max_in_flight", "timeout_ms",   "retries",            "backoff_initial_ms", "backoff_multiplier",
      "strip_whitespace", "residual",  "token_match",        "embedding_batch"};
  if (!doc.is_object()) throw ValidationError("backend config must be an object");
  for (const auto& [key, _] : doc.items())
    if (!known.contains(key)) throw ValidationError("unknown backend config key \"" + key + "\"");

  BackendConfig cfg;
  try {
    cfg.base_url = get_or<std::string>(doc, "base_url", cfg.base_url);
    cfg.model_name = get_or<std::string>(doc, "model", cfg.model_name);
    cfg.embedding_model = get_or<std::string>(doc, "embedding_model", cfg.embedding_model);
    cfg.top_k = get_or<int>(doc, "top_k", cfg.top_k);
    cfg.max_in_flight = get_or<int>(doc, "max_in_flight", cfg.max_in_flight);
    cfg.timeout = std::chrono::milliseconds(get_or<long long>(doc, "timeout_ms", cfg.timeout.count()));
    cfg.retry.retries = get_or<int>(doc, "retries", cfg.retry.retries);
    cfg.retry.initial_backoff =
        std::chrono::milliseconds(get_or<long long>(doc, "backoff_initial_ms", cfg.retry.initial_backoff.count()));
    cfg.retry.multiplier = get_or<double>(doc, "backoff_multiplier", cfg.retry.multiplier);
    cfg.strip_whitespace = get_or<bool>(doc, "strip_whitespace", cfg.strip_whitespace);
    if (doc.contains("residual")) cfg.residual = parse_residual_mode(doc.at("residual").get<std::string>());
    if (doc.contains("token_match")) cfg.token_match = parse_token_match(doc.at("token_match").get<std::string>());
    cfg.embedding_batch = get_or<std::size_t>(doc, "embedding_batch", cfg.embedding_batch);
    const auto env = get_or<std::string>(doc, "api_key_env", "TPS_API_KEY");
    if (const char* key = std::getenv(env.c_str()); key && *key) cfg.api_key = key;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("backend config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

class OwningRetry final : public Backend {
 public:
  OwningRetry(std::unique_ptr<Backend> inner, RetryPolicy policy)
      : inner_(std::move(inner)), retry_(*inner_, policy) {}
  nlohmann::json send(const Request& request) override { return retry_.send(request); }

 private:
  std::unique_ptr<Backend> inner_;
  RetryingBackend retry_;
};

}  // namespace

std::unique_ptr<Backend> make_http_backend(const BackendConfig& cfg) {
  cfg.validate();
  auto http = std::make_unique<HttpBackend>(HttpOptions{cfg.base_url, cfg.api_key, cfg.timeout});
  return std::make_unique<OwningRetry>(std::move(http), cfg.retry);
}

std::string PromptBundle::render() const {
  if (query.empty()) throw ValidationError("prompt query must be nonempty");
  return instructions + context.value_or("") + query;
}

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

LmClient::LmClient(Backend& backend, BackendConfig cfg, const std::atomic<bool>* cancel)
    : backend_(backend), cfg_(std::move(cfg)), cancel_(cancel) {
  cfg_.validate();
}

Request LmClient::next_token_request(const std::string& prompt) const {
  return {"/v1/completions",
          {{"model", cfg_.model_name},
           {"prompt", prompt},
           {"max_tokens", 1},
           {"temperature", 0},
           {"logprobs", cfg_.top_k}}};
}

Request LmClient::scoring_request(const std::string& prompt, const std::string& continuation) const {
  return {"/v1/completions",
          {{"model", cfg_.model_name},
           {"prompt", prompt + continuation},
           {"max_tokens", 1},
           {"temperature", 0},
           {"logprobs", 1},
           {"echo", true}}};
}

Request LmClient::embedding_request(const std::vector<std::string>& texts) const {
  return {"/v1/embeddings", {{"model", cfg_.embedding_model}, {"input", texts}}};
}

TokenLogprobs LmClient::parse_next_token(const nlohmann::json& response) const {
  const auto& lp = first_choice_logprobs(response, "next-token");
  const auto& top = field(lp, "top_logprobs", "next-token");
  if (!top.is_array() || top.empty() || !top[0].is_object())
    throw BackendError("malformed next-token response: \"top_logprobs\" has no first position", false);

  TokenLogprobs out;
  for (const auto& position : top) {
    if (!position.is_object()) throw BackendError("malformed next-token response: position is not an object", false);
    std::vector<std::pair<double, std::string>> entries;
    for (const auto& [token, value] : position.items()) entries.emplace_back(checked_logprob(value, "next-token"), token);
    // Some servers add the sampled token on top of the k requested; keep the k best.
    if (entries.size() > static_cast<std::size_t>(cfg_.top_k)) {
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      entries.resize(static_cast<std::size_t>(cfg_.top_k));
    }
    std::map<std::string, double> m;
    for (auto& [value, token] : entries) m.emplace(std::move(token), value);
    out.push_back(std::move(m));
  }
  return out;
}

std::string LmClient::canonical_token(const std::string& token) const {
  return cfg_.strip_whitespace ? std::string(strip(token)) : token;
}

DistributionResult LmClient::map_tokens(const std::map<std::string, double>& logprobs, const SpacePtr& space) const {
  const auto& answers = space->answers();
  std::map<std::string, double> raw;
  for (const auto& [token, lp] : logprobs) {
    const auto canon = canonical_token(token);
    if (canon.empty()) continue;
    std::optional<std::size_t> hit;
    if (auto idx = space->index_of(canon); idx && !space->is_sentinel(*idx)) {
      hit = idx;
    } else if (cfg_.token_match == TokenMatch::first_token) {
      for (std::size_t i = 0; i < answers.size(); ++i) {
        if (answers[i].text().starts_with(canon)) {
          if (hit) {
            hit.reset();
            break;
          }
          hit = i;
        }
      }
    }
    if (hit) raw[answers[*hit].text()] += std::exp(lp);
  }
  if (raw.empty()) {
    if (!space->has_sentinel())
      throw ValidationError("no answer among the returned tokens and the answer space has no sentinel");
    return {AnswerDistribution::point_mass(space, *space->sentinel_index()), false};
  }
  return {build_distribution(space, raw, cfg_.residual), true};
}

DistributionResult LmClient::from_answer_probabilities(std::span<const double> probs, const SpacePtr& space) const {
  const auto& answers = space->answers();
  if (probs.size() != answers.size()) throw ValidationError("one probability per answer is required");
  std::map<std::string, double> raw;
  double total = 0.0;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    raw[answers[i].text()] = probs[i];
    total += probs[i];
  }
  if (total > 1.0 + kNormalizationTolerance)
    throw ValidationError("answer probabilities sum to " + std::to_string(total) +
                          " > 1: the answer set is not prefix-free or the backend is inconsistent");
  if (total == 0.0) {
    if (!space->has_sentinel()) throw ValidationError("all answers have probability zero and the space has no sentinel");
    return {AnswerDistribution::point_mass(space, *space->sentinel_index()), false};
  }
  return {build_distribution(space, raw, cfg_.residual), true};
}

double LmClient::parse_scoring(const nlohmann::json& response, const std::string& prompt,
                               const std::string& continuation) const {
  if (continuation.empty()) throw ValidationError("cannot score an empty continuation");
  const auto& lp = first_choice_logprobs(response, "scoring");
  const auto& tokens = field(lp, "tokens", "scoring");
  const auto& values = field(lp, "token_logprobs", "scoring");
  const auto& offsets = field(lp, "text_offset", "scoring");
  if (!tokens.is_array() || !values.is_array() || !offsets.is_array() || tokens.size() != values.size() ||
      tokens.size() != offsets.size())
    throw BackendError("malformed scoring response: token arrays differ in length", false);

  const std::size_t begin = utf8_length(prompt);
  const std::size_t end = begin + utf8_length(continuation);
  bool starts_aligned = false;
  std::size_t covered = begin;
  double log_total = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto offset = offsets[i].get<std::size_t>();
    const auto len = utf8_length(tokens[i].get<std::string>());
    if (offset < begin) {
      if (offset + len > begin)
        throw ValidationError("tokenization of the answer failed: a token spans the prompt/answer boundary");
      continue;
    }
    if (offset >= end) break;
    if (offset == begin) starts_aligned = true;
    if (values[i].is_null()) throw BackendError("scoring response has no log-probability for an answer token", false);
    log_total += checked_logprob(values[i], "scoring");
    covered = offset + len;
  }
  if (!starts_aligned) throw ValidationError("tokenization of the answer failed: no token starts at the answer");
  if (covered != end) throw ValidationError("tokenization of the answer failed: tokens do not end at the answer");
  return std::exp(log_total);
}

DistributionResult LmClient::next_token_distribution(const PromptBundle& bundle, const SpacePtr& space) {
  const auto response = backend_.send(next_token_request(bundle.render()));
  return map_tokens(parse_next_token(response).front(), space);
}

double LmClient::answer_string_probability(const PromptBundle& bundle, const Answer& answer) {
  const auto prompt = bundle.render();
  const auto response = backend_.send(scoring_request(prompt, answer.text()));
  return parse_scoring(response, prompt, answer.text());
}

DistributionResult LmClient::cover_distribution(const PromptBundle& bundle, const SpacePtr& space) {
  std::vector<double> probs;
  probs.reserve(space->answer_count());
  for (const auto& a : space->answers()) probs.push_back(answer_string_probability(bundle, a));
  return from_answer_probabilities(probs, space);
}

DistributionResult LmClient::distribution(const PromptBundle& bundle, const SpacePtr& space, DistributionMode mode) {
  return mode == DistributionMode::next_token ? next_token_distribution(bundle, space) : cover_distribution(bundle, space);
}

std::vector<Fallible<DistributionResult>> LmClient::distributions(std::span<const PromptBundle> bundles,
                                                                  const SpacePtr& space, DistributionMode mode) {
  const std::size_t per_bundle = mode == DistributionMode::next_token ? 1 : space->answer_count();
  std::vector<Fallible<DistributionResult>> out(bundles.size());
  std::vector<std::string> prompts(bundles.size());
  std::vector<std::optional<std::size_t>> base(bundles.size());
  std::vector<Request> requests;
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    try {
      prompts[b] = bundles[b].render();
    } catch (...) {
      out[b].error = std::current_exception();
      continue;
    }
    base[b] = requests.size();
    for (std::size_t j = 0; j < per_bundle; ++j)
      requests.push_back(mode == DistributionMode::next_token ? next_token_request(prompts[b])
                                                              : scoring_request(prompts[b], space->answers()[j].text()));
  }

  const auto responses = send_all(backend_, requests, cfg_.max_in_flight, cancel_);

  for (std::size_t b = 0; b < bundles.size(); ++b) {
    if (!base[b]) continue;
    try {
      const std::size_t first = *base[b];
      for (std::size_t j = 0; j < per_bundle; ++j)
        if (responses[first + j].error) std::rethrow_exception(responses[first + j].error);
      if (mode == DistributionMode::next_token) {
        out[b].value = map_tokens(parse_next_token(*responses[first].value).front(), space);
      } else {
        std::vector<double> probs(per_bundle);
        for (std::size_t j = 0; j < per_bundle; ++j)
          probs[j] = parse_scoring(*responses[first + j].value, prompts[b], space->answers()[j].text());
        out[b].value = from_answer_probabilities(probs, space);
      }
    } catch (...) {
      out[b].error = std::current_exception();
    }
  }
  return out;
}

EmbeddingTable LmClient::embed(const std::vector<std::string>& texts) {
  std::vector<std::string> unique;
  {
    std::set<std::string> seen;
    for (const auto& t : texts)
      if (seen.insert(t).second) unique.push_back(t);
  }
  EmbeddingTable table;
  if (unique.empty()) return table;

  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < unique.size(); i += cfg_.embedding_batch)
    batches.emplace_back(unique.begin() + static_cast<std::ptrdiff_t>(i),
                         unique.begin() + static_cast<std::ptrdiff_t>(std::min(unique.size(), i + cfg_.embedding_batch)));
  std::vector<Request> requests;
  requests.reserve(batches.size());
  for (const auto& batch : batches) requests.push_back(embedding_request(batch));

  auto responses = send_all(backend_, requests, cfg_.max_in_flight, cancel_);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (responses[b].error) std::rethrow_exception(responses[b].error);
    const auto& data = field(*responses[b].value, "data", "embedding");
    if (!data.is_array() || data.size() != batches[b].size())
      throw BackendError("embedding response has " + std::to_string(data.size()) + " vectors for " +
                             std::to_string(batches[b].size()) + " inputs",
                         false);
    std::vector<bool> filled(batches[b].size(), false);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto index = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
      if (index >= batches[b].size() || filled[index])
        throw BackendError("embedding response has a bad or repeated index", false);
      filled[index] = true;
      const auto& vec = field(data[i], "embedding", "embedding");
      try {
        table.add(batches[b][index], vec.get<std::vector<double>>());
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("embedding vector is not numeric: ") + e.what(), false);
      }
    }
  }
  return table;
}

}  // namespace tps::lm

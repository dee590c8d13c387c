#include "synthetic_model.hpp"

#include "tps/lm_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>

namespace tps::synthetic {

using nlohmann::json;

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::size_t code_point_bytes(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string trim_left(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return std::string(s);
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(text)) {
    auto w = trim_left(t.text);
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> s{
      "about", "after", "also", "been", "from", "have", "into", "more", "most", "only", "other", "some", "such",
      "than", "that", "their", "them", "then", "there", "they", "this", "used", "were", "what", "when", "where",
      "which", "while", "with", "your", "the", "and", "for", "are", "was", "not", "but", "its", "his", "her"};
  return s;
}

// Lowercased alphabetic words of length >= 3 with a trailing plural "s" removed.
std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 3 && !stopwords().contains(cur)) {
      if (cur.size() > 4 && cur.back() == 's' && cur[cur.size() - 2] != 's') cur.pop_back();
      out.push_back(cur);
    }
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalpha(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::optional<std::string> between(std::string_view text, std::string_view open, std::string_view close,
                                   bool last = true) {
  const auto start = last ? text.rfind(open) : text.find(open);
  if (start == std::string_view::npos) return std::nullopt;
  const auto from = start + open.size();
  const auto end = text.find(close, from);
  if (end == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(from, end - from));
}

// Mass on answers; the rest goes to junk continuations.
constexpr double kAnswerMass = 0.96;

std::vector<Completion> finish(const std::vector<std::pair<std::string, double>>& weights, double answer_mass,
                               const std::vector<std::pair<std::string, double>>& junk) {
  double total = 0.0;
  for (const auto& [_, w] : weights) total += w;
  double junk_total = 0.0;
  for (const auto& [_, w] : junk) junk_total += w;
  std::vector<Completion> out;
  for (const auto& [text, w] : weights) out.push_back({words_of(text), answer_mass * w / total});
  for (const auto& [text, w] : junk) out.push_back({text == "\n" ? std::vector<std::string>{"\n"} : words_of(text),
                                                    (1.0 - answer_mass) * w / junk_total});
  return out;
}

std::vector<std::pair<std::string, double>> discretized_normal(int lo, int hi, double mu, double sd) {
  std::vector<std::pair<std::string, double>> out;
  for (int v = lo; v <= hi; ++v) out.emplace_back(std::to_string(v), std::exp(-0.5 * std::pow((v - mu) / sd, 2)));
  return out;
}

// ---- official language ----

const std::vector<std::string>& languages() {
  static const std::vector<std::string> l{"Arabic",  "Dutch",    "English",  "French",  "German",
                                          "Greek",   "Italian",  "Japanese", "Mandarin Chinese",
                                          "Polish",  "Portuguese", "Russian", "Spanish", "Swahili"};
  return l;
}

std::optional<std::string> known_language(const std::string& country) {
  static const std::map<std::string, std::string, std::less<>> m{
      {"Argentina", "Spanish"}, {"Austria", "German"},  {"Brazil", "Portuguese"}, {"Chile", "Spanish"},
      {"China", "Mandarin Chinese"}, {"Egypt", "Arabic"}, {"France", "French"},   {"Greece", "Greek"},
      {"Japan", "Japanese"},   {"Kenya", "Swahili"},    {"Mexico", "Spanish"},     {"Netherlands", "Dutch"},
      {"Poland", "Polish"},    {"Portugal", "Portuguese"}, {"Russia", "Russian"},  {"Australia", "English"}};
  auto it = m.find(country);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

std::vector<Completion> official_language(std::string_view prompt, const std::string& country) {
  const auto q = prompt.rfind("Q: What is the official language of");
  const std::string context(prompt.substr(0, q));
  const auto truth = known_language(country);
  const auto favourite = truth.value_or(languages()[fnv1a(country) % languages().size()]);
  const double confidence = truth ? 0.70 : 0.35;

  std::map<std::string, double> p;
  double rest = 0.0;
  for (const auto& l : languages()) {
    if (l == favourite) continue;
    p[l] = 0.05 + std::pow(unit_hash(country + "|" + l), 2);
    rest += p[l];
  }
  for (auto& [l, w] : p) w *= (1.0 - confidence) / rest;
  p[favourite] = confidence;

  // The language named last in the context pulls mass toward itself; the pull
  // depends on the wording.
  std::optional<std::string> cued;
  std::size_t cued_at = 0;
  for (const auto& l : languages()) {
    const auto at = context.rfind(l);
    if (at != std::string::npos && (!cued || at >= cued_at)) {
      cued = l;
      cued_at = at;
    }
  }
  if (cued) {
    const double s = 0.25 + 0.7 * unit_hash(context);
    for (auto& [l, w] : p) w = (1.0 - s) * w + (l == *cued ? s : 0.0);
  }
  std::vector<std::pair<std::string, double>> weights(p.begin(), p.end());
  return finish(weights, kAnswerMass, {{"The", 2.0}, {"\n", 1.0}, {"It", 1.0}});
}

// ---- movie ratings ----

int review_polarity(std::string_view text) {
  static const std::set<std::string, std::less<>> pos{
      "great", "wonderful", "brilliant", "masterpiece", "superb", "moving", "delightful", "stunning",
      "excellent", "loved", "beautiful", "gripping", "charming", "best", "perfect", "joy", "triumph",
      "fantastic", "gorgeous", "touching", "funny", "thrilling", "masterful", "memorable"};
  static const std::set<std::string, std::less<>> neg{
      "boring", "awful", "dull", "terrible", "tedious", "worst", "mess", "disappointing", "bland", "waste",
      "weak", "clumsy", "hated", "painful", "flat", "forgettable", "poor", "lifeless", "incoherent", "sloppy",
      "predictable", "unbearable", "tiresome", "shallow"};
  int score = 0;
  for (const auto& w : content_words(text)) {
    if (pos.contains(w)) ++score;
    if (neg.contains(w)) --score;
  }
  return (score > 0) - (score < 0);
}

std::vector<Completion> movie_rating(std::string_view prompt, const std::string& title) {
  std::vector<int> polarity;
  std::size_t at = 0;
  while ((at = prompt.find("Review ", at)) != std::string_view::npos) {
    const auto colon = prompt.find(": ", at);
    if (colon == std::string_view::npos) break;
    auto end = prompt.find(" Review ", colon);
    const auto query = prompt.find("On a scale of", colon);
    if (end == std::string_view::npos || (query != std::string_view::npos && query < end)) end = query;
    polarity.push_back(review_polarity(prompt.substr(colon + 2, end - colon - 2)));
    at = colon;
  }
  const double mu0 = 1.5 + 6.5 * unit_hash(title);
  const auto n = polarity.size();
  double drift = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Reviews at either end of the context weigh more than those in the middle.
    const double u = n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 1.0;
    drift += (0.55 + 0.9 * u * u) * polarity[i];
  }
  const double reach = drift >= 0.0 ? 9.4 - mu0 : -(mu0 + 0.4);
  const double mu = mu0 + reach * (1.0 - std::exp(-std::abs(drift) / 3.0));
  const double sd = 1.4 / std::sqrt(1.0 + 0.25 * static_cast<double>(n)) + 0.15;
  return finish(discretized_normal(0, 9, mu, sd), 0.97, {{"10", 2.0}, {"The", 1.0}, {"\n", 1.0}});
}

// ---- word sense ----

std::vector<Completion> word_sense(std::string_view prompt, const std::string& word) {
  std::vector<std::pair<std::string, std::string>> senses;
  std::size_t at = 0;
  while ((at = prompt.find("Definition ", at)) != std::string_view::npos) {
    const auto colon = prompt.find(": ", at);
    const auto end = prompt.find(" \n", colon);
    if (colon == std::string_view::npos || end == std::string_view::npos) break;
    senses.emplace_back(std::string(prompt.substr(at + 11, colon - at - 11)),
                        std::string(prompt.substr(colon + 2, end - colon - 2)));
    at = end;
  }
  if (senses.empty()) return {};
  const auto context = between(prompt, "Context: ", "\n", false);
  std::set<std::string> context_words;
  if (context)
    for (auto& w : content_words(*context)) context_words.insert(w);

  const auto favourite = fnv1a(word) % senses.size();
  std::vector<std::pair<std::string, double>> weights;
  for (std::size_t i = 0; i < senses.size(); ++i) {
    double w = 1.0 + 0.6 * unit_hash(word + "|" + senses[i].first) + (i == favourite ? 2.5 : 0.0);
    std::set<std::string> gloss;
    for (auto& g : content_words(senses[i].second)) gloss.insert(g);
    int overlap = 0;
    for (const auto& g : gloss) overlap += context_words.contains(g) ? 1 : 0;
    w *= std::exp(1.7 * overlap);
    weights.emplace_back(senses[i].first, w);
  }
  return finish(weights, 0.95, {{"The", 2.0}, {"\n", 1.0}, {"Definition", 1.0}});
}

// ---- manifesto coding ----

std::vector<Completion> coding(std::string_view prompt, const std::string& sentence) {
  const bool social = prompt.find("liberal-conservative") != std::string_view::npos;
  static const std::set<std::string, std::less<>> econ_left{
      "welfare", "redistribution", "nationalise", "union", "worker", "wage", "regulation", "regulate",
      "wealthy", "inequality", "subsidie", "pension", "housing", "ownership", "labour", "tenant"};
  static const std::set<std::string, std::less<>> econ_right{
      "market", "privatisation", "privatise", "deregulation", "competition", "enterprise", "entrepreneur",
      "cut", "lower", "business", "investor", "growth", "trade", "property", "deficit", "spending"};
  static const std::set<std::string, std::less<>> soc_liberal{
      "right", "freedom", "equality", "diversity", "minoritie", "marriage", "secular", "immigrant", "refugee",
      "choice", "tolerance", "inclusive", "decriminalise", "privacy", "gender"};
  static const std::set<std::string, std::less<>> soc_cons{
      "tradition", "traditional", "family", "value", "order", "police", "crime", "border", "national",
      "faith", "religiou", "heritage", "discipline", "punishment", "security", "sentence"};
  const auto& low = social ? soc_liberal : econ_left;
  const auto& high = social ? soc_cons : econ_right;
  int lex = 0;
  for (const auto& w : content_words(sentence)) {
    lex += high.contains(w) ? 1 : 0;
    lex -= low.contains(w) ? 1 : 0;
  }
  const double position = std::clamp(lex, -2, 2);
  const double noise = 2.0 * (unit_hash(sentence) - 0.5);

  double mu = 3.0 + 0.55 * position + noise;
  double sd = 0.9;
  if (prompt.find("Definitions.") != std::string_view::npos) {
    mu = 3.0 + 0.95 * position + 0.35 * noise;
    sd = 0.6;
  } else if (prompt.find("Examples rated by experts") != std::string_view::npos) {
    mu = 3.0 + 0.85 * position + 0.5 * noise;
    sd = 0.65;
  }
  return finish(discretized_normal(1, 5, mu, sd), 0.97, {{"0", 1.0}, {"The", 1.0}, {"\n", 1.0}});
}

std::vector<Completion> generic(std::string_view prompt) {
  static const std::vector<std::string> vocab{"Paris", "The", "I", "It", "Yes", "No"};
  std::vector<std::pair<std::string, double>> weights;
  for (const auto& v : vocab) weights.emplace_back(v, 0.2 + unit_hash(std::string(prompt) + v));
  return finish(weights, 0.9, {{"\n", 1.0}});
}

// Byte position where the answer begins: just after the last answer cue.
std::size_t answer_anchor(std::string_view text) {
  std::size_t best = std::string_view::npos;
  for (std::string_view cue : {"\nA:", "\nRating:"}) {
    const auto at = text.rfind(cue);
    if (at != std::string_view::npos && (best == std::string_view::npos || at + cue.size() > best))
      best = at + cue.size();
  }
  return best;
}

struct Trie {
  explicit Trie(const std::vector<Completion>& completions) : items(completions) {}

  [[nodiscard]] double prefix_mass(const std::vector<std::string>& prefix) const {
    double mass = 0.0;
    for (const auto& c : items)
      if (c.words.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), c.words.begin()))
        mass += c.weight;
    return mass;
  }

  std::vector<Completion> items;
};

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0, cp = 0;
  auto run_end = [&](std::size_t from) {
    std::size_t j = from;
    std::size_t n = 0;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) {
      const auto len = std::min(code_point_bytes(static_cast<unsigned char>(text[j])), text.size() - j);
      j += len;
      ++n;
    }
    return std::pair{j, n};
  };
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == ' ' && i + 1 < text.size() && is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      auto [j, n] = run_end(i + 1);
      out.push_back({std::string(text.substr(i, j - i)), cp});
      cp += n + 1;
      i = j;
    } else if (is_word_byte(c)) {
      auto [j, n] = run_end(i);
      out.push_back({std::string(text.substr(i, j - i)), cp});
      cp += n;
      i = j;
    } else {
      const auto len = std::min(code_point_bytes(c), text.size() - i);
      out.push_back({std::string(text.substr(i, len)), cp});
      cp += 1;
      i += len;
    }
  }
  return out;
}

double unit_hash(std::string_view text) {
  return static_cast<double>(mix(fnv1a(text)) >> 11) * 0x1.0p-53;
}

std::vector<Completion> SyntheticModel::completions(std::string_view prompt) const {
  std::vector<Completion> out;
  if (auto country = between(prompt, "Q: What is the official language of ", "?"))
    out = official_language(prompt, *country);
  else if (auto title = between(prompt, "what is the rating of ", "?\nA:"))
    out = movie_rating(prompt, *title);
  else if (auto word = between(prompt, "for the word ", " is ("))
    out = word_sense(prompt, *word);
  else if (auto sentence = between(prompt, "Sentence: ", "\nRating:"))
    out = coding(prompt, *sentence);
  if (out.empty()) out = generic(prompt);
  return out;
}

std::vector<double> SyntheticModel::embed(std::string_view text) const {
  std::vector<double> v(kEmbeddingDim, 0.0);
  for (const auto& w : content_words(text)) {
    std::uint64_t state = fnv1a(w);
    for (auto& x : v) {
      state = mix(state);
      x += static_cast<double>(state >> 11) * 0x1.0p-52 - 1.0;
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[0] = 1.0;
    return v;
  }
  for (auto& x : v) x /= std::sqrt(norm);
  return v;
}

json SyntheticModel::next_token(const std::string& prompt, int top_k, const std::string& model) const {
  const bool bare = !prompt.empty() && std::isspace(static_cast<unsigned char>(prompt.back()));
  std::map<std::string, double> first;
  for (const auto& c : completions(prompt)) {
    if (c.words.empty()) continue;
    const auto& w = c.words.front();
    first[w == "\n" || bare ? w : " " + w] += c.weight;
  }
  std::vector<std::pair<std::string, double>> ranked(first.begin(), first.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<std::size_t>(top_k));
  json top = json::object();
  for (const auto& [t, p] : ranked) top[t] = std::log(p);
  const auto& best = ranked.empty() ? std::string("\n") : ranked.front().first;
  const double best_lp = ranked.empty() ? 0.0 : std::log(ranked.front().second);
  return {{"id", "cmpl-synthetic"},
          {"object", "text_completion"},
          {"model", model},
          {"choices",
           {{{"index", 0},
             {"text", best},
             {"finish_reason", "length"},
             {"logprobs",
              {{"tokens", {best}},
               {"token_logprobs", {best_lp}},
               {"top_logprobs", {top}},
               {"text_offset", {lm::utf8_length(prompt)}}}}}}}};
}

json SyntheticModel::echo(const std::string& text, const std::string& model) const {
  const auto tokens = tokenize(text);
  const auto anchor = answer_anchor(text);
  std::optional<Trie> trie;
  if (anchor != std::string_view::npos) trie.emplace(completions(std::string_view(text).substr(0, anchor)));

  json toks = json::array(), lps = json::array(), tops = json::array(), offsets = json::array();
  std::vector<std::string> seen;
  double parent = 1.0;
  bool off_trie = false;
  std::size_t byte = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    double lp = 0.0;
    if (!trie || byte < anchor) {
      lp = -1.0 - 3.0 * unit_hash(t.text);
    } else {
      const auto w = t.text == "\n" ? t.text : trim_left(t.text);
      if (w.empty()) {
        lp = std::log(SyntheticModel::kUnknownTokenProb);
      } else {
        seen.push_back(w);
        const double mass = off_trie ? 0.0 : trie->prefix_mass(seen);
        if (mass > 0.0 && parent > 0.0) {
          lp = std::log(mass / parent);
          parent = mass;
        } else {
          off_trie = true;
          lp = std::log(SyntheticModel::kUnknownTokenProb);
        }
      }
    }
    toks.push_back(t.text);
    offsets.push_back(t.offset);
    if (i == 0) {
      lps.push_back(nullptr);
      tops.push_back(nullptr);
    } else {
      lps.push_back(lp);
      tops.push_back({{t.text, lp}});
    }
    byte += t.text.size();
  }
  return {{"id", "cmpl-synthetic"},
          {"object", "text_completion"},
          {"model", model},
          {"choices",
           {{{"index", 0},
             {"text", text},
             {"finish_reason", "length"},
             {"logprobs",
              {{"tokens", toks}, {"token_logprobs", lps}, {"top_logprobs", tops}, {"text_offset", offsets}}}}}}};
}

json SyntheticModel::respond(const std::string& endpoint, const json& body) const {
  if (!body.is_object()) throw std::invalid_argument("request body must be a JSON object");
  const auto model = body.value("model", std::string("synthetic"));
  if (endpoint == "/v1/completions") {
    if (!body.contains("prompt") || !body["prompt"].is_string())
      throw std::invalid_argument("\"prompt\" must be a string");
    const auto& logprobs = body.value("logprobs", json(nullptr));
    if (!logprobs.is_number_integer() || logprobs.get<int>() < 0)
      throw std::invalid_argument("\"logprobs\" must be a nonnegative integer");
    const auto prompt = body["prompt"].get<std::string>();
    if (body.value("echo", false)) return echo(prompt, model);
    return next_token(prompt, std::max(1, logprobs.get<int>()), model);
  }
  if (endpoint == "/v1/embeddings") {
    const auto& input = body.value("input", json(nullptr));
    if (!input.is_array()) throw std::invalid_argument("\"input\" must be an array of strings");
    json data = json::array();
    for (std::size_t i = 0; i < input.size(); ++i) {
      if (!input[i].is_string()) throw std::invalid_argument("\"input\" must be an array of strings");
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", embed(input[i].get<std::string>())}});
    }
    return {{"object", "list"}, {"model", model}, {"data", data}};
  }
  throw std::invalid_argument("unknown endpoint " + endpoint);
}

json SyntheticBackend::send(const lm::Request& request) {
  try {
    return model_.respond(request.endpoint, request.body);
  } catch (const std::invalid_argument& e) {
    throw lm::BackendError(std::string("synthetic model rejected the request: ") + e.what(), false);
  }
}

struct SyntheticServer::Impl {
  httplib::Server server;
  SyntheticModel model;
  ServerOptions options;
  std::mutex mutex;
  std::map<std::string, int> attempts;
};

SyntheticServer::SyntheticServer(ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = options;
  auto handler = [this](std::string endpoint) {
    return [this, endpoint](const httplib::Request& req, httplib::Response& res) {
      ++served_;
      {
        std::lock_guard lock(impl_->mutex);
        if (impl_->attempts[endpoint + req.body]++ < impl_->options.fail_first) {
          res.status = impl_->options.fail_status;
          res.set_content(R"({"error":{"message":"injected failure"}})", "application/json");
          return;
        }
      }
      try {
        const auto body = json::parse(req.body);
        res.set_content(impl_->model.respond(endpoint, body).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", {{"message", e.what()}}}}.dump(), "application/json");
      }
    };
  };
  impl_->server.Post("/v1/completions", handler("/v1/completions"));
  impl_->server.Post("/v1/embeddings", handler("/v1/embeddings"));
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("synthetic server could not bind a port");
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

SyntheticServer::~SyntheticServer() { stop(); }

std::string SyntheticServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void SyntheticServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace tps::synthetic

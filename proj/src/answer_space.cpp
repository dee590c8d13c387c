#include "tps/answer_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tps/errors.hpp"

namespace tps {

Answer::Answer(std::string text) : text_(std::move(text)) {
  if (text_.empty()) throw ValidationError("answer text must be nonempty");
}

std::optional<PrefixViolation> validate_prefix_free(std::span<const Answer> answers) {
  if (answers.empty()) throw ValidationError("prefix-free check needs at least one answer");
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const auto& a = answers[i].text();
    for (std::size_t j = i + 1; j < answers.size(); ++j) {
      const auto& b = answers[j].text();
      if (a.starts_with(b) || b.starts_with(a)) return PrefixViolation{a, b};
    }
  }
  return std::nullopt;
}

AnswerSpace::AnswerSpace(std::vector<Answer> answers, bool with_sentinel)
    : answers_(std::move(answers)), sentinel_(with_sentinel) {
  for (std::size_t i = 0; i < answers_.size(); ++i) index_.emplace(answers_[i].text(), i);
}

SpacePtr AnswerSpace::create(std::vector<Answer> answers, bool with_sentinel) {
  if (answers.empty() && !with_sentinel) throw ValidationError("answer space is empty");
  for (const auto& a : answers) {
    if (a.text() == kSentinelLabel)
      throw ValidationError("answer text collides with the sentinel label");
  }
  if (!answers.empty()) {
    if (auto v = validate_prefix_free(answers)) {
      throw ValidationError("answer space is not prefix-free: \"" + v->first + "\" / \"" +
                            v->second + "\"");
    }
  }
  return SpacePtr(new AnswerSpace(std::move(answers), with_sentinel));
}

SpacePtr AnswerSpace::create(const std::vector<std::string>& answers, bool with_sentinel) {
  std::vector<Answer> typed;
  typed.reserve(answers.size());
  for (const auto& a : answers) typed.emplace_back(a);
  return create(std::move(typed), with_sentinel);
}

std::optional<std::size_t> AnswerSpace::sentinel_index() const noexcept {
  if (!sentinel_) return std::nullopt;
  return answers_.size();
}

std::optional<std::size_t> AnswerSpace::index_of(std::string_view label) const {
  if (label == kSentinelLabel) return sentinel_index();
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t AnswerSpace::require_index(std::string_view label) const {
  auto idx = index_of(label);
  if (!idx) throw ValidationError("outcome \"" + std::string(label) + "\" is not in the answer space");
  return *idx;
}

std::string AnswerSpace::label(std::size_t outcome) const {
  if (outcome < answers_.size()) return answers_[outcome].text();
  if (is_sentinel(outcome)) return std::string(kSentinelLabel);
  throw std::out_of_range("outcome index out of range");
}

bool same_space(const SpacePtr& a, const SpacePtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

ResidualMode parse_residual_mode(std::string_view text) {
  if (text == "sentinel") return ResidualMode::sentinel;
  if (text == "renorm" || text == "renormalize") return ResidualMode::renormalize;
  throw ValidationError("unknown residual mode \"" + std::string(text) + "\"");
}

std::string_view to_string(ResidualMode mode) {
  return mode == ResidualMode::sentinel ? "sentinel" : "renormalize";
}

AnswerDistribution AnswerDistribution::from_probabilities(SpacePtr space, std::vector<double> probs) {
  if (!space) throw ValidationError("distribution needs an answer space");
  if (probs.size() != space->size()) {
    throw ValidationError("distribution has " + std::to_string(probs.size()) +
                          " entries for a space of size " + std::to_string(space->size()));
  }
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw ValidationError("probabilities must be finite and nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > kNormalizationTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "probabilities sum to " << total << ", not 1";
    throw ValidationError(msg.str());
  }
  if (total != 1.0) {
    for (double& p : probs) p /= total;
  }
  return AnswerDistribution(std::move(space), std::move(probs));
}

AnswerDistribution AnswerDistribution::point_mass(SpacePtr space, std::size_t outcome) {
  if (!space || outcome >= space->size()) throw ValidationError("point mass outcome out of range");
  std::vector<double> probs(space->size(), 0.0);
  probs[outcome] = 1.0;
  return AnswerDistribution(std::move(space), std::move(probs));
}

AnswerDistribution AnswerDistribution::point_mass(SpacePtr space, std::string_view label) {
  auto idx = space->require_index(label);
  return point_mass(std::move(space), idx);
}

double AnswerDistribution::prob(std::string_view label) const {
  return probs_[space_->require_index(label)];
}

double AnswerDistribution::sentinel_mass() const {
  auto s = space_->sentinel_index();
  return s ? probs_[*s] : 0.0;
}

std::optional<std::size_t> AnswerDistribution::point_mass_index() const {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] == 0.0) continue;
    if (probs_[i] != 1.0 || found) return std::nullopt;
    found = i;
  }
  return found;
}

AnswerDistribution build_distribution(SpacePtr space, const std::map<std::string, double>& raw,
                                      ResidualMode mode) {
  if (!space) throw ValidationError("distribution needs an answer space");
  std::vector<double> weights(space->size(), 0.0);
  double total = 0.0;
  for (const auto& [label, w] : raw) {
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("weight for \"" + label + "\" is negative or not finite");
    weights[space->require_index(label)] += w;
    total += w;
  }

  if (mode == ResidualMode::renormalize) {
    if (total <= 0.0) throw ValidationError("cannot renormalize weights summing to 0");
    for (double& w : weights) w /= total;
    return AnswerDistribution::from_probabilities(std::move(space), std::move(weights));
  }

  if (total > 1.0 + kNormalizationTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "weights sum to " << total << ", exceeding 1";
    throw ValidationError(msg.str());
  }
  const double residual = std::max(0.0, 1.0 - total);
  if (auto s = space->sentinel_index()) {
    weights[*s] += residual;
  } else if (residual > kNormalizationTolerance) {
    throw ValidationError("residual mass needs a sentinel outcome in the answer space");
  }
  return AnswerDistribution::from_probabilities(std::move(space), std::move(weights));
}

std::size_t greedy_answer(const AnswerDistribution& dist) {
  const auto& space = dist.space();
  const auto probs = dist.probabilities();
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < space.answer_count(); ++i) {
    if (!best || probs[i] > probs[*best] ||
        (probs[i] == probs[*best] && space.answers()[i].text() < space.answers()[*best].text())) {
      best = i;
    }
  }
  if (auto s = space.sentinel_index()) {
    if (!best || probs[*s] > probs[*best]) best = *s;
  }
  return *best;
}

ScaleMap::ScaleMap(std::vector<std::pair<Answer, int>> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ValidationError("scale is empty");
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i > 0 && entries_[i].second == entries_[i - 1].second)
      throw ValidationError("scale numeric map is not injective");
    if (!numeric_.emplace(entries_[i].first.text(), entries_[i].second).second)
      throw ValidationError("scale answer \"" + entries_[i].first.text() + "\" listed twice");
  }
}

ScaleMap ScaleMap::integer_range(int lo, int hi) {
  if (hi < lo) throw ValidationError("scale range is empty");
  std::vector<std::pair<Answer, int>> entries;
  for (int v = lo; v <= hi; ++v) entries.emplace_back(Answer(std::to_string(v)), v);
  return ScaleMap(std::move(entries));
}

std::optional<int> ScaleMap::numeric(std::string_view label) const {
  auto it = numeric_.find(std::string(label));
  if (it == numeric_.end()) return std::nullopt;
  return it->second;
}

int ScaleMap::span() const noexcept { return entries_.back().second - entries_.front().second; }

std::vector<std::string> ScaleMap::labels() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [a, n] : entries_) out.push_back(a.text());
  return out;
}

ExpectedValue expected_value(const AnswerDistribution& dist, const ScaleMap& scale) {
  const auto& space = dist.space();
  ExpectedValue ev;
  for (std::size_t i = 0; i < space.answer_count(); ++i) {
    const double p = dist[i];
    if (p == 0.0) continue;
    auto n = scale.numeric(space.answers()[i].text());
    if (!n) throw ValidationError("answer \"" + space.answers()[i].text() + "\" is not on the scale");
    ev.value += p * static_cast<double>(*n);
  }
  ev.sentinel_mass = dist.sentinel_mass();
  return ev;
}

SpaceDocument parse_space_document(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("space document must be a JSON object");
  SpaceDocument out;
  if (doc.contains("scale")) {
    const auto& s = doc.at("scale");
    if (!s.is_object()) throw ValidationError("\"scale\" must be an object of label -> integer");
    std::vector<std::pair<Answer, int>> entries;
    for (auto it = s.begin(); it != s.end(); ++it) {
      if (!it.value().is_number_integer()) throw ValidationError("scale value for \"" + it.key() + "\" is not an integer");
      entries.emplace_back(Answer(it.key()), it.value().get<int>());
    }
    out.scale.emplace(std::move(entries));
  }
  std::vector<std::string> answers;
  if (doc.contains("answers")) {
    if (!doc.at("answers").is_array()) throw ValidationError("\"answers\" must be an array");
    for (const auto& a : doc.at("answers")) {
      if (!a.is_string()) throw ValidationError("answers must be strings");
      answers.push_back(a.get<std::string>());
    }
  } else if (out.scale) {
    answers = out.scale->labels();
  } else {
    throw ValidationError("space document needs \"answers\" or \"scale\"");
  }
  const bool sentinel = doc.value("sentinel", true);
  out.space = AnswerSpace::create(answers, sentinel);
  return out;
}

namespace {
nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}
}  // namespace

SpaceDocument load_space_document(const std::string& path) {
  return parse_space_document(read_json_file(path));
}

AnswerDistribution parse_distribution_document(const nlohmann::json& doc, SpacePtr space) {
  if (!doc.contains("probs") || !doc.at("probs").is_object())
    throw ValidationError("distribution document needs a \"probs\" object");
  std::vector<double> probs(space->size(), 0.0);
  for (auto it = doc.at("probs").begin(); it != doc.at("probs").end(); ++it) {
    if (!it.value().is_number()) throw ValidationError("probability for \"" + it.key() + "\" is not a number");
    probs[space->require_index(it.key())] = it.value().get<double>();
  }
  return AnswerDistribution::from_probabilities(std::move(space), std::move(probs));
}

nlohmann::json to_json(const AnswerDistribution& dist) {
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& a : dist.space().answers()) answers.push_back(a.text());
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t i = 0; i < dist.size(); ++i) probs[dist.space().label(i)] = dist[i];
  return {{"answers", answers}, {"sentinel", dist.space().has_sentinel()}, {"probs", probs}};
}

}  // namespace tps

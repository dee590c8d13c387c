#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace tps {

/// Display label of the out-of-scale sentinel. No answer may use this text.
inline constexpr std::string_view kSentinelLabel = "∅";

/// Absolute tolerance on the total mass of a distribution.
inline constexpr double kNormalizationTolerance = 1e-6;

/// A nonempty answer string.
class Answer {
 public:
  explicit Answer(std::string text);

  [[nodiscard]] const std::string& text() const noexcept { return text_; }

  friend bool operator==(const Answer&, const Answer&) = default;
  friend auto operator<=>(const Answer&, const Answer&) = default;

 private:
  std::string text_;
};

struct PrefixViolation {
  std::string first;
  std::string second;
};

/// Returns the first pair (in input order) where one answer is a prefix of the
/// other; equal answers count as a violation. Throws on empty input.
std::optional<PrefixViolation> validate_prefix_free(std::span<const Answer> answers);

class AnswerSpace;
using SpacePtr = std::shared_ptr<const AnswerSpace>;

/// A finite prefix-free set of answers, optionally followed by the sentinel.
/// Outcome indices are 0..answer_count()-1 for answers, answer_count() for the
/// sentinel when present.
class AnswerSpace {
 public:
  static SpacePtr create(std::vector<Answer> answers, bool with_sentinel);
  static SpacePtr create(const std::vector<std::string>& answers, bool with_sentinel);

  [[nodiscard]] std::size_t size() const noexcept { return answers_.size() + (sentinel_ ? 1 : 0); }
  [[nodiscard]] std::size_t answer_count() const noexcept { return answers_.size(); }
  [[nodiscard]] bool has_sentinel() const noexcept { return sentinel_; }
  [[nodiscard]] std::optional<std::size_t> sentinel_index() const noexcept;
  [[nodiscard]] bool is_sentinel(std::size_t outcome) const noexcept {
    return sentinel_ && outcome == answers_.size();
  }
  [[nodiscard]] const std::vector<Answer>& answers() const noexcept { return answers_; }

  /// Looks up an outcome by label; kSentinelLabel resolves to the sentinel.
  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view label) const;
  /// As index_of, throwing ValidationError when the label is unknown.
  [[nodiscard]] std::size_t require_index(std::string_view label) const;
  [[nodiscard]] std::string label(std::size_t outcome) const;

  friend bool operator==(const AnswerSpace& a, const AnswerSpace& b) {
    return a.sentinel_ == b.sentinel_ && a.answers_ == b.answers_;
  }

 private:
  AnswerSpace(std::vector<Answer> answers, bool with_sentinel);

  std::vector<Answer> answers_;
  bool sentinel_;
  std::unordered_map<std::string, std::size_t> index_;
};

bool same_space(const SpacePtr& a, const SpacePtr& b);

enum class ResidualMode { sentinel, renormalize };

ResidualMode parse_residual_mode(std::string_view text);
std::string_view to_string(ResidualMode mode);

/// A probability vector over an AnswerSpace. Always sums to 1 up to rounding.
class AnswerDistribution {
 public:
  /// Validates nonnegativity and |sum - 1| <= kNormalizationTolerance, then
  /// rescales so the stored vector is an exact simplex point.
  static AnswerDistribution from_probabilities(SpacePtr space, std::vector<double> probs);
  static AnswerDistribution point_mass(SpacePtr space, std::size_t outcome);
  static AnswerDistribution point_mass(SpacePtr space, std::string_view label);

  [[nodiscard]] const AnswerSpace& space() const noexcept { return *space_; }
  [[nodiscard]] const SpacePtr& space_ptr() const noexcept { return space_; }
  [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
  [[nodiscard]] double operator[](std::size_t outcome) const { return probs_.at(outcome); }
  [[nodiscard]] double prob(std::string_view label) const;
  [[nodiscard]] std::span<const double> probabilities() const noexcept { return probs_; }
  [[nodiscard]] double sentinel_mass() const;
  /// The outcome holding all the mass, if any.
  [[nodiscard]] std::optional<std::size_t> point_mass_index() const;

 private:
  AnswerDistribution(SpacePtr space, std::vector<double> probs)
      : space_(std::move(space)), probs_(std::move(probs)) {}

  SpacePtr space_;
  std::vector<double> probs_;
};

/// Builds a distribution from raw nonnegative weights keyed by label.
/// sentinel mode: the residual 1 - sum goes to the sentinel (sum must not
/// exceed 1 + tolerance). renormalize mode: weights are divided by their sum.
AnswerDistribution build_distribution(SpacePtr space, const std::map<std::string, double>& raw,
                                      ResidualMode mode = ResidualMode::sentinel);

/// Argmax outcome. Exact ties go to the lexicographically smallest answer; the
/// sentinel loses every tie.
std::size_t greedy_answer(const AnswerDistribution& dist);

/// Ordered integer scale for ordinal answers.
class ScaleMap {
 public:
  explicit ScaleMap(std::vector<std::pair<Answer, int>> entries);
  /// Scale "lo", "lo+1", ..., "hi" with numeric value equal to the label.
  static ScaleMap integer_range(int lo, int hi);

  [[nodiscard]] std::optional<int> numeric(std::string_view label) const;
  /// Entries sorted by ascending numeric value.
  [[nodiscard]] const std::vector<std::pair<Answer, int>>& entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] int span() const noexcept;
  [[nodiscard]] std::vector<std::string> labels() const;

 private:
  std::vector<std::pair<Answer, int>> entries_;
  std::unordered_map<std::string, int> numeric_;
};

struct ExpectedValue {
  double value = 0.0;
  /// Reported so callers can reject cases dominated by out-of-scale mass.
  double sentinel_mass = 0.0;
};

/// Sum of p(a) * n(a) over scale answers; sentinel mass contributes nothing.
/// Throws if an answer with positive mass is not on the scale.
ExpectedValue expected_value(const AnswerDistribution& dist, const ScaleMap& scale);

struct SpaceDocument {
  SpacePtr space;
  std::optional<ScaleMap> scale;
};

/// Parses {"answers":[...], "sentinel":true, "scale":{"0":0,...}}. When
/// "answers" is absent the scale labels (ascending) form the answer set.
SpaceDocument parse_space_document(const nlohmann::json& doc);
SpaceDocument load_space_document(const std::string& path);

/// Parses a distribution document: a space document plus "probs":{label: p}.
/// Unlisted outcomes get 0; the probabilities must already sum to 1.
AnswerDistribution parse_distribution_document(const nlohmann::json& doc, SpacePtr space);

nlohmann::json to_json(const AnswerDistribution& dist);

}  // namespace tps

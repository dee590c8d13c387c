#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tps/csv.hpp"
#include "tps/errors.hpp"
#include "tps/experiments.hpp"
#include "tps/stats.hpp"

namespace tps::exp::detail {

/// Typed access to harness parameters; finish() rejects keys never read.
class Params {
 public:
  Params(const nlohmann::json& obj, std::string harness);

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(harness_ + " parameter \"" + key + "\": " + e.what());
    }
  }

  lm::DistributionMode distribution(lm::DistributionMode fallback);
  /// [lo, hi] given as a two-element array.
  std::pair<int, int> range(const std::string& key, std::pair<int, int> fallback);
  void finish() const;

 private:
  nlohmann::json obj_;
  std::string harness_;
  std::set<std::string> used_;
};

/// Collects prompt bundles across several answer spaces and sends them in one
/// batched pass per space.
class Batch {
 public:
  Batch(lm::LmClient& client, lm::DistributionMode mode) : client_(client), mode_(mode) {}

  std::size_t add(lm::PromptBundle bundle, SpacePtr space);
  void run();
  [[nodiscard]] const lm::Fallible<lm::DistributionResult>& result(std::size_t ticket) const;
  /// Rethrows the stored error, if any.
  [[nodiscard]] const lm::DistributionResult& value(std::size_t ticket) const;

 private:
  lm::LmClient& client_;
  lm::DistributionMode mode_;
  std::vector<lm::PromptBundle> bundles_;
  std::vector<SpacePtr> spaces_;
  std::vector<lm::Fallible<lm::DistributionResult>> results_;
};

std::string fmt(double x);
std::string fmt(std::optional<double> x);
nlohmann::json num_or_null(std::optional<double> x);

/// count, mean, sample std, min, quartiles, max; nulls where undefined.
nlohmann::json describe(const std::vector<double>& values);

SpacePtr scale_space(const ScaleMap& scale);

/// Mean over on-scale answers, i.e. expected_value / (1 - sentinel mass).
/// Throws ValidationError when every unit of mass is on the sentinel.
double on_scale_mean(const AnswerDistribution& dist, const ScaleMap& scale);

/// Greedy label, with the sentinel rendered as kSentinelLabel.
std::string greedy_label(const AnswerDistribution& dist);

nlohmann::json quarantine_json(const std::vector<Quarantine>& q);

}  // namespace tps::exp::detail

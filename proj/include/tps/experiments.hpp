#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tps/answer_space.hpp"
#include "tps/lm_client.hpp"
#include "tps/prompts.hpp"

namespace tps::exp {

enum class Category { agrees_with_context, keeps_prior, other };

/// agrees_with_context iff the conditional argmax is the target; keeps_prior
/// iff it equals the prior argmax (which is not the target); other otherwise.
Category categorize(std::size_t greedy_prior, std::size_t greedy_conditional, std::size_t target);
std::string_view to_string(Category c);

/// Result rows with a fixed column order.
class Table {
 public:
  explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(std::vector<std::string> row);
  [[nodiscard]] const std::vector<std::string>& columns() const noexcept { return columns_; }
  [[nodiscard]] const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  [[nodiscard]] std::string to_csv() const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

enum class FailureKind { validation, backend };
std::string_view to_string(FailureKind kind);

struct Quarantine {
  std::string id;
  FailureKind kind = FailureKind::validation;
  std::string message;
};

/// Classifies a captured exception: lm::BackendError is a backend failure,
/// anything else a validation failure.
Quarantine quarantine(std::string id, const std::exception_ptr& error);

struct HarnessResult {
  std::string name;
  Table table{{}};
  nlohmann::json summary = nlohmann::json::object();
  nlohmann::json samples = nlohmann::json::object();
  std::vector<Quarantine> quarantined;

  /// 3 if any record failed on the backend, else 2 if any failed validation,
  /// else 0.
  [[nodiscard]] int exit_code() const;
};

struct RunOptions {
  std::filesystem::path dataset;
  /// The "experiment" object of the config, minus "dataset".
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
  prompts::TemplateSet templates;
};

using HarnessFn = HarnessResult (*)(lm::LmClient&, const RunOptions&);

struct HarnessInfo {
  std::string_view name;
  HarnessFn run;
  std::string_view summary;
};

std::span<const HarnessInfo> harnesses();
/// Throws ValidationError listing the known names when `name` is unknown.
const HarnessInfo& find_harness(std::string_view name);

HarnessResult run_greedy_vs_tps(lm::LmClient& client, const RunOptions& options);
HarnessResult run_word_sense(lm::LmClient& client, const RunOptions& options);
HarnessResult run_tps_vs_k(lm::LmClient& client, const RunOptions& options);
HarnessResult run_concat_vs_individual(lm::LmClient& client, const RunOptions& options);
HarnessResult run_lost_in_middle(lm::LmClient& client, const RunOptions& options);
HarnessResult run_annotation_coding(lm::LmClient& client, const RunOptions& options);

/// Writes <name>.csv, <name>_summary.json and <name>_samples.json, each via a
/// temp file and rename.
void write_outputs(const std::filesystem::path& dir, const HarnessResult& result);

// Seeded sampling. Every draw is keyed by the seed and a tuple of names, so
// adding records never changes the draws of existing ones.

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::string_view> parts);

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  std::uint64_t next();
  /// Uniform in [0, bound) by rejection, bound > 0.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::uint64_t state_;
};

/// First k entries of a Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> sample_without_replacement(std::uint64_t key, std::size_t n, std::size_t k);

/// Minority reviews in a noisy context of k reviews: max(1, floor(k / 3)).
int minority_count(int k);
/// 1-based first position of the contiguous minority block, centered at
/// ceil(k / 2).
int minority_start(int k, int minority);

/// Round half up.
int round_half_up(double x);

}  // namespace tps::exp

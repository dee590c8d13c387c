#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tps/answer_space.hpp"

namespace tps {

/// Dense nonnegative transport costs over every ordered pair of outcomes.
/// Entry (from, to) is the cost of moving one unit of mass from `from` to `to`.
class CostMatrix {
 public:
  CostMatrix(SpacePtr space, std::vector<double> entries);
  static CostMatrix zeros(SpacePtr space);

  [[nodiscard]] double operator()(std::size_t from, std::size_t to) const {
    return entries_[from * n_ + to];
  }
  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] const AnswerSpace& space() const noexcept { return *space_; }
  [[nodiscard]] const SpacePtr& space_ptr() const noexcept { return space_; }
  [[nodiscard]] std::span<const double> entries() const noexcept { return entries_; }
  [[nodiscard]] double max_entry() const;

 private:
  SpacePtr space_;
  std::size_t n_;
  std::vector<double> entries_;
};

enum class BasicCostOrientation {
  /// Unit cost for moving mass from a non-target answer onto the target.
  toward_target,
  /// Unit cost when the source is the target and the destination is not.
  /// Kept for comparison only: it makes transport onto the target free.
  literal_formula,
};

CostMatrix basic_cost(SpacePtr space, const Answer& target,
                      BasicCostOrientation orientation = BasicCostOrientation::toward_target);

/// |n(a) - n(b)| / span on scale answers; 0 whenever the sentinel is involved.
CostMatrix ordinal_cost(SpacePtr space, const ScaleMap& scale);

/// Fixed-dimension embedding vectors keyed by text.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// Inserting an existing text with the same vector is a no-op; a different
  /// vector for the same text is an error.
  void add(const std::string& text, std::vector<double> vector);

  [[nodiscard]] const std::vector<double>* find(const std::string& text) const;
  [[nodiscard]] const std::vector<double>& at(const std::string& text) const;
  [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
  [[nodiscard]] std::size_t size() const noexcept { return vectors_.size(); }
  [[nodiscard]] bool empty() const noexcept { return vectors_.empty(); }
  [[nodiscard]] const std::map<std::string, std::vector<double>>& vectors() const noexcept { return vectors_; }

  /// JSON lines of {"text": ..., "vector": [...]}.
  static EmbeddingTable load_jsonl(const std::filesystem::path& path);
  static EmbeddingTable parse_jsonl(std::istream& in);

 private:
  std::size_t dimension_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// 1 - cosine(e(a), e(b)), clamped to [0, 2]; sentinel pairs cost 0.
CostMatrix semantic_cost(SpacePtr space, const EmbeddingTable& table);

/// Headered CSV: first row "<corner>,<label>,...", then one "<label>,<cost>,..."
/// row per outcome. Rows and columns may appear in any order but must cover
/// the space exactly.
CostMatrix load_cost(SpacePtr space, std::istream& in);
CostMatrix load_cost(SpacePtr space, const std::filesystem::path& path);
void save_cost(const CostMatrix& cost, std::ostream& out);

}  // namespace tps

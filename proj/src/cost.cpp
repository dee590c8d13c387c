#include "tps/cost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tps/csv.hpp"
#include "tps/errors.hpp"

namespace tps {

CostMatrix::CostMatrix(SpacePtr space, std::vector<double> entries)
    : space_(std::move(space)), n_(space_ ? space_->size() : 0), entries_(std::move(entries)) {
  if (!space_) throw ValidationError("cost matrix needs an answer space");
  if (entries_.size() != n_ * n_) throw ValidationError("cost matrix shape does not match the answer space");
  for (double c : entries_) {
    if (!std::isfinite(c) || c < 0.0) throw ValidationError("cost entries must be finite and nonnegative");
  }
}

CostMatrix CostMatrix::zeros(SpacePtr space) {
  const auto n = space->size();
  return CostMatrix(std::move(space), std::vector<double>(n * n, 0.0));
}

double CostMatrix::max_entry() const {
  return entries_.empty() ? 0.0 : *std::max_element(entries_.begin(), entries_.end());
}

CostMatrix basic_cost(SpacePtr space, const Answer& target, BasicCostOrientation orientation) {
  const auto n = space->size();
  const auto t = space->require_index(target.text());
  std::vector<double> c(n * n, 0.0);
  for (std::size_t other = 0; other < n; ++other) {
    if (other == t) continue;
    if (orientation == BasicCostOrientation::toward_target) {
      c[other * n + t] = 1.0;
    } else {
      c[t * n + other] = 1.0;
    }
  }
  return CostMatrix(std::move(space), std::move(c));
}

CostMatrix ordinal_cost(SpacePtr space, const ScaleMap& scale) {
  const auto n = space->size();
  if (scale.span() <= 0) throw ValidationError("ordinal cost needs a scale with nonzero span");
  std::vector<std::optional<int>> value(n);
  for (std::size_t i = 0; i < space->answer_count(); ++i) {
    value[i] = scale.numeric(space->answers()[i].text());
    if (!value[i]) throw ValidationError("answer \"" + space->answers()[i].text() + "\" is not on the scale");
  }
  const double span = static_cast<double>(scale.span());
  std::vector<double> c(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (value[a] && value[b]) c[a * n + b] = std::abs(*value[a] - *value[b]) / span;
    }
  }
  return CostMatrix(std::move(space), std::move(c));
}

void EmbeddingTable::add(const std::string& text, std::vector<double> vector) {
  if (vector.empty()) throw ValidationError("embedding for \"" + text + "\" is empty");
  if (!vectors_.empty() && vector.size() != dimension_) {
    throw ValidationError("embedding for \"" + text + "\" has dimension " + std::to_string(vector.size()) +
                          ", expected " + std::to_string(dimension_));
  }
  double norm2 = 0.0;
  for (double x : vector) {
    if (!std::isfinite(x)) throw ValidationError("embedding for \"" + text + "\" is not finite");
    norm2 += x * x;
  }
  if (norm2 == 0.0) throw ValidationError("embedding for \"" + text + "\" has zero norm");
  if (auto it = vectors_.find(text); it != vectors_.end()) {
    if (it->second != vector) throw ValidationError("conflicting embeddings for \"" + text + "\"");
    return;
  }
  dimension_ = vector.size();
  vectors_.emplace(text, std::move(vector));
}

const std::vector<double>* EmbeddingTable::find(const std::string& text) const {
  auto it = vectors_.find(text);
  return it == vectors_.end() ? nullptr : &it->second;
}

const std::vector<double>& EmbeddingTable::at(const std::string& text) const {
  if (const auto* v = find(text)) return *v;
  throw ValidationError("no embedding for \"" + text + "\"");
}

EmbeddingTable EmbeddingTable::parse_jsonl(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      table.add(rec.at("text").get<std::string>(), rec.at("vector").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("embeddings line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("embeddings line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

EmbeddingTable EmbeddingTable::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return parse_jsonl(in);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine of vectors with different dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine of a zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

CostMatrix semantic_cost(SpacePtr space, const EmbeddingTable& table) {
  const auto n = space->size();
  std::vector<const std::vector<double>*> vec(n, nullptr);
  for (std::size_t i = 0; i < space->answer_count(); ++i) vec[i] = &table.at(space->answers()[i].text());
  std::vector<double> c(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b || !vec[a] || !vec[b]) continue;
      c[a * n + b] = std::clamp(1.0 - cosine_similarity(*vec[a], *vec[b]), 0.0, 2.0);
    }
  }
  return CostMatrix(std::move(space), std::move(c));
}

CostMatrix load_cost(SpacePtr space, std::istream& in) {
  const auto rows = csv::read_all(in);
  const auto n = space->size();
  if (rows.empty()) throw ValidationError("cost file is empty");
  const auto& header = rows.front();
  if (header.size() != n + 1) throw ValidationError("cost header has " + std::to_string(header.size() - 1) +
                                                    " columns for a space of size " + std::to_string(n));
  std::vector<std::size_t> col_of(n);
  std::vector<bool> seen_col(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    auto idx = space->index_of(header[k + 1]);
    if (!idx) throw ValidationError("cost header \"" + header[k + 1] + "\" is not in the answer space");
    if (seen_col[*idx]) throw ValidationError("cost header \"" + header[k + 1] + "\" repeated");
    seen_col[*idx] = true;
    col_of[k] = *idx;
  }
  if (rows.size() != n + 1) throw ValidationError("cost file has " + std::to_string(rows.size() - 1) +
                                                  " rows for a space of size " + std::to_string(n));
  std::vector<double> c(n * n, 0.0);
  std::vector<bool> seen_row(n, false);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != n + 1) throw ValidationError("cost row " + std::to_string(r) + " is ragged");
    auto from = space->index_of(row[0]);
    if (!from) throw ValidationError("cost row label \"" + row[0] + "\" is not in the answer space");
    if (seen_row[*from]) throw ValidationError("cost row \"" + row[0] + "\" repeated");
    seen_row[*from] = true;
    for (std::size_t k = 0; k < n; ++k) {
      double value = 0.0;
      try {
        std::size_t used = 0;
        value = std::stod(row[k + 1], &used);
        if (used != row[k + 1].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ValidationError("cost entry \"" + row[k + 1] + "\" in row " + std::to_string(r) + " is not a number");
      }
      if (value < 0.0) throw ValidationError("negative cost in row \"" + row[0] + "\"");
      c[*from * n + col_of[k]] = value;
    }
  }
  return CostMatrix(std::move(space), std::move(c));
}

CostMatrix load_cost(SpacePtr space, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return load_cost(std::move(space), in);
}

void save_cost(const CostMatrix& cost, std::ostream& out) {
  const auto& space = cost.space();
  std::vector<std::string> header{"from\\to"};
  for (std::size_t j = 0; j < cost.size(); ++j) header.push_back(space.label(j));
  csv::write_row(out, header);
  for (std::size_t i = 0; i < cost.size(); ++i) {
    std::vector<std::string> row{space.label(i)};
    for (std::size_t j = 0; j < cost.size(); ++j) row.push_back(csv::format_double(cost(i, j)));
    csv::write_row(out, row);
  }
}

}  // namespace tps

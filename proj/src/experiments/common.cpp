#include <algorithm>
#include <cmath>
#include <sstream>

#include "internal.hpp"
#include "tps/backend.hpp"
#include "tps/io.hpp"

namespace tps::exp {

Category categorize(std::size_t greedy_prior, std::size_t greedy_conditional, std::size_t target) {
  if (greedy_conditional == target) return Category::agrees_with_context;
  if (greedy_conditional == greedy_prior) return Category::keeps_prior;
  return Category::other;
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::agrees_with_context:
      return "agrees_with_context";
    case Category::keeps_prior:
      return "keeps_prior";
    case Category::other:
      return "other";
  }
  return "other";
}

void Table::add(std::vector<std::string> row) {
  if (row.size() != columns_.size())
    throw std::logic_error("row has " + std::to_string(row.size()) + " fields for " +
                           std::to_string(columns_.size()) + " columns");
  rows_.push_back(std::move(row));
}

std::string Table::to_csv() const {
  std::ostringstream out;
  csv::write_row(out, columns_);
  for (const auto& r : rows_) csv::write_row(out, r);
  return out.str();
}

std::string_view to_string(FailureKind kind) { return kind == FailureKind::backend ? "backend" : "validation"; }

Quarantine quarantine(std::string id, const std::exception_ptr& error) {
  Quarantine q{std::move(id), FailureKind::validation, {}};
  try {
    std::rethrow_exception(error);
  } catch (const lm::BackendError& e) {
    q.kind = FailureKind::backend;
    q.message = e.what();
  } catch (const std::exception& e) {
    q.message = e.what();
  }
  return q;
}

int HarnessResult::exit_code() const {
  bool validation = false;
  for (const auto& q : quarantined) {
    if (q.kind == FailureKind::backend) return 3;
    validation = true;
  }
  return validation ? 2 : 0;
}

namespace {

constexpr HarnessInfo kHarnesses[] = {
    {"greedy-vs-tps", run_greedy_vs_tps, "BasicTPS against greedy answer changes on knowledge-conflict queries"},
    {"word-sense", run_word_sense, "BasicTPS and semantic TPS toward each sense of ambiguous words"},
    {"tps-vs-k", run_tps_vs_k, "ordinal TPS as the number of in-context reviews grows"},
    {"concat-vs-individual", run_concat_vs_individual, "TPS of concatenated reviews against their individual mean"},
    {"lost-in-middle", run_lost_in_middle, "MAD anomalies over the position of one contradictory review"},
    {"annotation-coding", run_annotation_coding, "ordinal TPS of codebook prompt variants toward expert labels"},
};

}  // namespace

std::span<const HarnessInfo> harnesses() { return kHarnesses; }

const HarnessInfo& find_harness(std::string_view name) {
  for (const auto& h : kHarnesses)
    if (h.name == name) return h;
  std::string known;
  for (const auto& h : kHarnesses) known += (known.empty() ? "" : ", ") + std::string(h.name);
  throw ValidationError("unknown experiment \"" + std::string(name) + "\" (known: " + known + ")");
}

void write_outputs(const std::filesystem::path& dir, const HarnessResult& result) {
  io::write_file_atomic(dir / (result.name + ".csv"), result.table.to_csv());
  io::write_file_atomic(dir / (result.name + "_summary.json"), io::dump_json(result.summary));
  io::write_file_atomic(dir / (result.name + "_samples.json"), io::dump_json(result.samples));
}

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
  std::string blob = std::to_string(seed);
  for (auto p : parts) {
    blob.push_back('\x1f');
    blob.append(p);
  }
  const auto hex = lm::sha256_hex(blob);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t SplitMix64::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do x = next();
  while (x >= limit);
  return x % bound;
}

std::vector<std::size_t> sample_without_replacement(std::uint64_t key, std::size_t n, std::size_t k) {
  if (k > n)
    throw ValidationError("cannot draw " + std::to_string(k) + " items from a pool of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  SplitMix64 rng(key);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

int minority_count(int k) { return std::max(1, k / 3); }

int minority_start(int k, int minority) { return (k + 1) / 2 - (minority - 1) / 2; }

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

namespace detail {

Params::Params(const nlohmann::json& obj, std::string harness) : obj_(obj), harness_(std::move(harness)) {
  if (obj_.is_null()) obj_ = nlohmann::json::object();
  if (!obj_.is_object()) throw ValidationError(harness_ + " parameters must be an object");
}

lm::DistributionMode Params::distribution(lm::DistributionMode fallback) {
  const auto text = get<std::string>("distribution", std::string(lm::to_string(fallback)));
  return lm::parse_distribution_mode(text);
}

std::pair<int, int> Params::range(const std::string& key, std::pair<int, int> fallback) {
  auto v = get<std::vector<int>>(key, {fallback.first, fallback.second});
  if (v.size() != 2 || v[0] > v[1] || v[0] < 1)
    throw ValidationError(harness_ + " parameter \"" + key + "\" must be [lo, hi] with 1 <= lo <= hi");
  return {v[0], v[1]};
}

void Params::finish() const {
  for (const auto& [key, _] : obj_.items())
    if (!used_.contains(key)) throw ValidationError("unknown " + harness_ + " parameter \"" + key + "\"");
}

std::size_t Batch::add(lm::PromptBundle bundle, SpacePtr space) {
  bundles_.push_back(std::move(bundle));
  spaces_.push_back(std::move(space));
  return bundles_.size() - 1;
}

void Batch::run() {
  results_.assign(bundles_.size(), {});
  std::vector<bool> done(bundles_.size(), false);
  for (std::size_t i = 0; i < bundles_.size(); ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> members;
    for (std::size_t j = i; j < bundles_.size(); ++j)
      if (!done[j] && same_space(spaces_[i], spaces_[j])) members.push_back(j);
    std::vector<lm::PromptBundle> group;
    group.reserve(members.size());
    for (auto j : members) group.push_back(bundles_[j]);
    auto out = client_.distributions(group, spaces_[i], mode_);
    for (std::size_t m = 0; m < members.size(); ++m) {
      results_[members[m]] = std::move(out[m]);
      done[members[m]] = true;
    }
  }
}

const lm::Fallible<lm::DistributionResult>& Batch::result(std::size_t ticket) const { return results_.at(ticket); }

const lm::DistributionResult& Batch::value(std::size_t ticket) const {
  const auto& r = results_.at(ticket);
  if (r.error) std::rethrow_exception(r.error);
  return *r.value;
}

std::string fmt(double x) { return csv::format_double(x); }

std::string fmt(std::optional<double> x) { return x ? fmt(*x) : std::string(); }

nlohmann::json num_or_null(std::optional<double> x) {
  if (!x || !std::isfinite(*x)) return nullptr;
  return *x;
}

nlohmann::json describe(const std::vector<double>& values) {
  nlohmann::json d;
  d["count"] = values.size();
  if (values.empty()) {
    for (auto k : {"mean", "std", "min", "q1", "median", "q3", "max"}) d[k] = nullptr;
    return d;
  }
  d["mean"] = stats::mean(values);
  d["std"] = values.size() > 1 ? nlohmann::json(std::sqrt(stats::sample_variance(values))) : nlohmann::json(nullptr);
  d["min"] = *std::min_element(values.begin(), values.end());
  d["q1"] = stats::quantile(values, 0.25);
  d["median"] = stats::median(values);
  d["q3"] = stats::quantile(values, 0.75);
  d["max"] = *std::max_element(values.begin(), values.end());
  return d;
}

SpacePtr scale_space(const ScaleMap& scale) { return AnswerSpace::create(scale.labels(), true); }

double on_scale_mean(const AnswerDistribution& dist, const ScaleMap& scale) {
  const auto ev = expected_value(dist, scale);
  const double on_scale = 1.0 - ev.sentinel_mass;
  if (!(on_scale > 0.0)) throw ValidationError("distribution has no mass on the rating scale");
  return ev.value / on_scale;
}

std::string greedy_label(const AnswerDistribution& dist) { return dist.space().label(greedy_answer(dist)); }

nlohmann::json quarantine_json(const std::vector<Quarantine>& q) {
  auto arr = nlohmann::json::array();
  for (const auto& e : q) arr.push_back({{"id", e.id}, {"kind", to_string(e.kind)}, {"message", e.message}});
  return arr;
}

}  // namespace detail

}  // namespace tps::exp

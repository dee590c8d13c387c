#include <cmath>
#include <map>

#include "internal.hpp"
#include "tps/datasets.hpp"
#include "tps/metric.hpp"

namespace tps::exp {

using namespace detail;

namespace {

struct MovieTemplates {
  std::string instructions, query, header, item;

  explicit MovieTemplates(const prompts::TemplateSet& t)
      : instructions(t.get("movie_instructions")),
        query(t.get("movie_query")),
        header(t.get("movie_context_header")),
        item(t.get("movie_review_item")) {}

  [[nodiscard]] lm::PromptBundle prior(const std::string& title) const {
    return {instructions, std::nullopt, prompts::render(query, {{"entity", title}})};
  }

  [[nodiscard]] lm::PromptBundle with_reviews(const std::string& title,
                                              const std::vector<const data::Review*>& reviews) const {
    std::string context = header;
    for (std::size_t i = 0; i < reviews.size(); ++i)
      context += prompts::render(item, {{"index", std::to_string(i + 1)}, {"review", reviews[i]->text}});
    return {instructions, context, prompts::render(query, {{"entity", title}})};
  }
};

/// Direction each movie is pushed in, fixed by its prior.
struct Split {
  double prior_mean = 0.0;
  data::Polarity majority = data::Polarity::positive;
  std::string target;
  std::string type;  // "negative" or "positive"
};

Split split_for(const AnswerDistribution& prior, const ScaleMap& scale, double threshold) {
  Split s;
  s.prior_mean = on_scale_mean(prior, scale);
  if (s.prior_mean >= threshold) {
    s.majority = data::Polarity::negative;
    s.target = scale.entries().front().first.text();
    s.type = "negative";
  } else {
    s.majority = data::Polarity::positive;
    s.target = scale.entries().back().first.text();
    s.type = "positive";
  }
  return s;
}

data::Polarity opposite(data::Polarity p) {
  return p == data::Polarity::positive ? data::Polarity::negative : data::Polarity::positive;
}

/// A sampled context: review pointers in presentation order plus the
/// provenance of every slot.
struct Sampled {
  std::vector<const data::Review*> reviews;
  nlohmann::json record;
};

std::size_t index_in_movie(const data::Movie& m, const data::Review* r) {
  return static_cast<std::size_t>(r - m.reviews.data());
}

Sampled sample_context(const data::Movie& movie, std::string_view experiment, data::Polarity majority, int k,
                       bool noisy, std::uint64_t seed) {
  const auto major_pool = movie.with_polarity(majority);
  const auto minor_pool = movie.with_polarity(opposite(majority));
  const int minority = noisy ? minority_count(k) : 0;
  const int major_count = k - minority;
  const auto k_text = std::to_string(k);
  const std::string_view kind = noisy ? "noisy" : "uniform";
  if (static_cast<int>(major_pool.size()) < major_count)
    throw ValidationError("movie " + movie.id + " has " + std::to_string(major_pool.size()) + " " +
                          std::string(data::to_string(majority)) + " reviews, " + std::to_string(major_count) +
                          " needed for k = " + k_text);
  if (static_cast<int>(minor_pool.size()) < minority)
    throw ValidationError("movie " + movie.id + " has " + std::to_string(minor_pool.size()) + " " +
                          std::string(data::to_string(opposite(majority))) + " reviews, " + std::to_string(minority) +
                          " needed for noisy k = " + k_text);

  const auto major_idx = sample_without_replacement(
      derive_key(seed, {experiment, movie.id, k_text, kind, "majority"}), major_pool.size(),
      static_cast<std::size_t>(major_count));
  std::vector<std::size_t> minor_idx;
  if (minority > 0)
    minor_idx = sample_without_replacement(derive_key(seed, {experiment, movie.id, k_text, kind, "minority"}),
                                           minor_pool.size(), static_cast<std::size_t>(minority));

  Sampled s;
  const int start = minority > 0 ? minority_start(k, minority) : k + 1;
  std::size_t next_major = 0, next_minor = 0;
  auto slots = nlohmann::json::array();
  for (int pos = 1; pos <= k; ++pos) {
    const bool minor_slot = pos >= start && pos < start + minority;
    const auto* r = minor_slot ? minor_pool[minor_idx[next_minor++]] : major_pool[major_idx[next_major++]];
    s.reviews.push_back(r);
    slots.push_back({{"position", pos},
                     {"review_index", index_in_movie(movie, r)},
                     {"polarity", data::to_string(r->polarity)}});
  }
  s.record = {{"movie_id", movie.id}, {"k", k}, {"noise", kind}, {"minority", minority}, {"slots", slots}};
  return s;
}

struct MovieParams {
  lm::DistributionMode mode;
  double threshold;
  ScaleMap scale = ScaleMap::integer_range(0, 9);
};

ScaleMap scale_param(Params& params) {
  const auto r = params.get<std::vector<int>>("scale", {0, 9});
  if (r.size() != 2 || r[0] >= r[1]) throw ValidationError("\"scale\" must be [lo, hi] with lo < hi");
  return ScaleMap::integer_range(r[0], r[1]);
}

/// Runs the prior pass for every movie and returns each movie's split, or
/// records the movie as quarantined.
std::vector<std::optional<std::pair<AnswerDistribution, Split>>> prior_pass(
    lm::LmClient& client, const std::vector<data::Movie>& movies, const MovieTemplates& tpl, const SpacePtr& space,
    const MovieParams& mp, HarnessResult& out) {
  Batch batch(client, mp.mode);
  std::vector<std::size_t> tickets;
  for (const auto& m : movies) tickets.push_back(batch.add(tpl.prior(m.title), space));
  batch.run();
  std::vector<std::optional<std::pair<AnswerDistribution, Split>>> priors(movies.size());
  for (std::size_t i = 0; i < movies.size(); ++i) {
    try {
      const auto& prior = batch.value(tickets[i]).distribution;
      priors[i].emplace(prior, split_for(prior, mp.scale, mp.threshold));
    } catch (...) {
      out.quarantined.push_back(quarantine(movies[i].id, std::current_exception()));
    }
  }
  return priors;
}

}  // namespace

HarnessResult run_tps_vs_k(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "tps-vs-k");
  MovieParams mp{params.distribution(lm::DistributionMode::next_token),
                 params.get<double>("high_prior_threshold", 4.5), scale_param(params)};
  const auto uniform_k = params.range("k_uniform", {1, 10});
  const auto noisy_k = params.range("k_noisy", {4, 10});
  params.finish();

  const auto movies = data::load_movies(options.dataset);
  const MovieTemplates tpl(options.templates);
  const auto space = scale_space(mp.scale);

  HarnessResult out;
  out.name = "tps_vs_k";
  out.table = Table({"movie_id", "title", "prior_mean", "type", "target", "k", "minority", "tps", "w_prior",
                     "w_conditional", "conditional_mean", "conditional_greedy"});

  const auto priors = prior_pass(client, movies, tpl, space, mp, out);

  struct Job {
    std::size_t movie;
    int k;
    bool noisy;
    Sampled sample;
    std::size_t ticket;
  };
  std::vector<Job> jobs;
  auto samples = nlohmann::json::array();
  Batch batch(client, mp.mode);
  for (std::size_t i = 0; i < movies.size(); ++i) {
    if (!priors[i]) continue;
    const auto& split = priors[i]->second;
    for (int noisy = 0; noisy < 2; ++noisy) {
      const auto [lo, hi] = noisy ? noisy_k : uniform_k;
      for (int k = lo; k <= hi; ++k) {
        const auto id = movies[i].id + (noisy ? "/noisy/k=" : "/uniform/k=") + std::to_string(k);
        try {
          auto s = sample_context(movies[i], "tps-vs-k", split.majority, k, noisy, options.seed);
          samples.push_back(s.record);
          const auto ticket = batch.add(tpl.with_reviews(movies[i].title, s.reviews), space);
          jobs.push_back({i, k, noisy != 0, std::move(s), ticket});
        } catch (...) {
          out.quarantined.push_back(quarantine(id, std::current_exception()));
        }
      }
    }
  }
  batch.run();

  std::map<std::pair<std::string, int>, std::vector<double>> curves;
  for (const auto& job : jobs) {
    const auto& movie = movies[job.movie];
    const auto& [prior, split] = *priors[job.movie];
    const auto type = (job.noisy ? "noisy-" : "") + split.type;
    try {
      const auto& cond = batch.value(job.ticket).distribution;
      const auto r = distance_tps(prior, cond, Answer(split.target), mp.scale);
      curves[{type, job.k}].push_back(r.score);
      std::string cond_mean;
      try {
        cond_mean = fmt(on_scale_mean(cond, mp.scale));
      } catch (const ValidationError&) {
      }
      out.table.add({movie.id, movie.title, fmt(split.prior_mean), type, split.target, std::to_string(job.k),
                     std::to_string(job.sample.record["minority"].get<int>()), fmt(r.score), fmt(r.w_prior),
                     fmt(r.w_conditional), cond_mean, greedy_label(cond)});
    } catch (...) {
      out.quarantined.push_back(
          quarantine(movie.id + (job.noisy ? "/noisy/k=" : "/uniform/k=") + std::to_string(job.k),
                     std::current_exception()));
    }
  }

  auto curve = nlohmann::json::array();
  for (const auto& [key, values] : curves) {
    auto d = describe(values);
    curve.push_back({{"type", key.first}, {"k", key.second}, {"n", values.size()}, {"mean", d["mean"]},
                     {"std", d["std"]}});
  }
  auto movie_info = nlohmann::json::array();
  for (std::size_t i = 0; i < movies.size(); ++i) {
    if (!priors[i]) continue;
    movie_info.push_back({{"movie_id", movies[i].id},
                          {"prior_mean", priors[i]->second.prior_mean},
                          {"type", priors[i]->second.type},
                          {"target", priors[i]->second.target}});
  }
  out.summary = {{"experiment", "tps-vs-k"},
                 {"distribution", lm::to_string(mp.mode)},
                 {"high_prior_threshold", mp.threshold},
                 {"movies", movie_info},
                 {"curve", curve},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "tps-vs-k"},
                 {"seed", options.seed},
                 {"protocol", "independent draw per (movie, k, noise); minority block centered at ceil(k/2)"},
                 {"seeded_choices", samples}};
  return out;
}

HarnessResult run_concat_vs_individual(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "concat-vs-individual");
  MovieParams mp{params.distribution(lm::DistributionMode::next_token),
                 params.get<double>("high_prior_threshold", 4.5), scale_param(params)};
  const auto k_range = params.range("k_range", {4, 10});
  params.finish();

  const auto movies = data::load_movies(options.dataset);
  const MovieTemplates tpl(options.templates);
  const auto space = scale_space(mp.scale);

  HarnessResult out;
  out.name = "concat_vs_individual";
  out.table = Table({"movie_id", "title", "type", "target", "noise", "k", "minority", "concatenated_tps",
                     "mean_individual_tps"});

  const auto priors = prior_pass(client, movies, tpl, space, mp, out);

  struct Job {
    std::size_t movie;
    int k;
    bool noisy;
    Sampled sample;
    std::size_t concat;
    std::vector<std::size_t> singles;
  };
  std::vector<Job> jobs;
  auto samples = nlohmann::json::array();
  Batch batch(client, mp.mode);
  for (std::size_t i = 0; i < movies.size(); ++i) {
    if (!priors[i]) continue;
    const auto& split = priors[i]->second;
    for (int noisy = 0; noisy < 2; ++noisy) {
      for (int k = k_range.first; k <= k_range.second; ++k) {
        const auto id = movies[i].id + (noisy ? "/noisy/k=" : "/uniform/k=") + std::to_string(k);
        try {
          auto s = sample_context(movies[i], "concat-vs-individual", split.majority, k, noisy, options.seed);
          samples.push_back(s.record);
          Job job{i, k, noisy != 0, std::move(s), 0, {}};
          job.concat = batch.add(tpl.with_reviews(movies[i].title, job.sample.reviews), space);
          for (const auto* r : job.sample.reviews) job.singles.push_back(batch.add(tpl.with_reviews(movies[i].title, {r}), space));
          jobs.push_back(std::move(job));
        } catch (...) {
          out.quarantined.push_back(quarantine(id, std::current_exception()));
        }
      }
    }
  }
  batch.run();

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& job : jobs) {
    const auto& movie = movies[job.movie];
    const auto& [prior, split] = *priors[job.movie];
    const std::string noise = job.noisy ? "noisy" : "uniform";
    try {
      const Answer target(split.target);
      const double concat = distance_tps(prior, batch.value(job.concat).distribution, target, mp.scale).score;
      std::vector<double> singles;
      for (auto t : job.singles) singles.push_back(distance_tps(prior, batch.value(t).distribution, target, mp.scale).score);
      const double mean_single = stats::mean(singles);
      groups[noise].first.push_back(mean_single);
      groups[noise].second.push_back(concat);
      out.table.add({movie.id, movie.title, split.type, split.target, noise, std::to_string(job.k),
                     std::to_string(job.sample.record["minority"].get<int>()), fmt(concat), fmt(mean_single)});
    } catch (...) {
      out.quarantined.push_back(
          quarantine(movie.id + "/" + noise + "/k=" + std::to_string(job.k), std::current_exception()));
    }
  }

  nlohmann::json slopes = nlohmann::json::object();
  for (const std::string noise : {"uniform", "noisy"}) {
    const auto& [xs, ys] = groups[noise];
    slopes[noise] = {{"points", xs.size()},
                     {"ols_slope_concatenated_on_individual", num_or_null(xs.size() >= 2 ? stats::ols_slope(xs, ys)
                                                                                         : std::nullopt)}};
  }
  out.summary = {{"experiment", "concat-vs-individual"},
                 {"distribution", lm::to_string(mp.mode)},
                 {"high_prior_threshold", mp.threshold},
                 {"by_noise", slopes},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "concat-vs-individual"},
                 {"seed", options.seed},
                 {"protocol", "independent draw per (movie, k, noise); minority block centered at ceil(k/2)"},
                 {"seeded_choices", samples}};
  return out;
}

}  // namespace tps::exp

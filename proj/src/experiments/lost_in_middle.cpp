#include <map>

#include "internal.hpp"
#include "tps/datasets.hpp"
#include "tps/metric.hpp"

namespace tps::exp {

using namespace detail;

namespace {

std::string position_group(int position, int total) {
  if (position == 1) return "first";
  if (position == total) return "last";
  return "middle";
}

}  // namespace

HarnessResult run_lost_in_middle(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "lost-in-middle");
  const auto mode = params.distribution(lm::DistributionMode::next_token);
  const auto multiplier = params.get<double>("mad_multiplier", 3.0);
  const auto degenerate_rule = params.get<bool>("mad_degenerate_rule", true);
  const auto default_target = params.get<std::string>("target", "9");
  params.finish();
  if (!(multiplier > 0.0)) throw ValidationError("mad_multiplier must be positive");

  const auto sets = data::load_permutation_sources(options.dataset);
  const auto scale = ScaleMap::integer_range(0, 9);
  const auto space = scale_space(scale);
  const auto instructions = options.templates.get("movie_instructions");
  const auto query_t = options.templates.get("movie_query");
  const auto header = options.templates.get("movie_context_header");
  const auto item_t = options.templates.get("movie_review_item");

  HarnessResult out;
  out.name = "lost_in_middle";
  out.table = Table({"set_id", "title", "target", "negative_position", "position_group", "distance_tps", "basic_tps",
                     "greedy_rating", "distance_flag", "basic_flag", "rating_flag"});

  struct Plan {
    std::vector<data::Permutation> perms;
    std::size_t prior = 0;
    std::vector<std::size_t> conditionals;
  };
  std::vector<std::optional<Plan>> plans(sets.size());
  Batch batch(client, mode);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    try {
      const auto target = sets[s].target.value_or(default_target);
      if (!scale.numeric(target)) throw ValidationError("target \"" + target + "\" is not on the 0-9 scale");
      Plan plan;
      plan.perms = data::permutations(sets[s]);
      const auto query = prompts::render(query_t, {{"entity", sets[s].title}});
      plan.prior = batch.add({instructions, std::nullopt, query}, space);
      for (const auto& perm : plan.perms) {
        std::string context = header;
        for (std::size_t i = 0; i < perm.reviews.size(); ++i)
          context += prompts::render(item_t, {{"index", std::to_string(i + 1)}, {"review", perm.reviews[i].text}});
        plan.conditionals.push_back(batch.add({instructions, context, query}, space));
      }
      plans[s] = std::move(plan);
    } catch (...) {
      out.quarantined.push_back(quarantine(sets[s].id, std::current_exception()));
    }
  }
  batch.run();

  const std::vector<std::string> metrics{"rating", "basic", "distance"};
  const std::vector<std::string> groups{"first", "middle", "last"};
  std::map<std::string, std::map<std::string, int>> flagged;
  std::map<std::string, int> evaluated;
  auto per_set = nlohmann::json::array();

  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (!plans[s]) continue;
    const auto& src = sets[s];
    const auto& plan = *plans[s];
    try {
      // All ten permutations or none: any failure quarantines the set.
      const auto target = src.target.value_or(default_target);
      const auto& prior = batch.value(plan.prior).distribution;
      std::vector<double> dist_scores, basic_scores, ratings;
      bool rating_defined = true;
      for (auto t : plan.conditionals) {
        const auto& cond = batch.value(t).distribution;
        dist_scores.push_back(distance_tps(prior, cond, Answer(target), scale).score);
        basic_scores.push_back(basic_tps(prior, cond, Answer(target)).score);
        const auto g = greedy_answer(cond);
        if (space->is_sentinel(g)) {
          rating_defined = false;
          ratings.push_back(0.0);
        } else {
          ratings.push_back(*scale.numeric(space->label(g)));
        }
      }
      const stats::MadOptions mad{multiplier, degenerate_rule};
      const auto dist_mad = stats::mad_outliers(dist_scores, mad);
      const auto basic_mad = stats::mad_outliers(basic_scores, mad);
      std::optional<stats::OutlierReport> rating_mad;
      if (rating_defined) rating_mad = stats::mad_outliers(ratings, mad);

      const int total = static_cast<int>(plan.perms.size());
      for (const auto& m : metrics)
        if (m != "rating" || rating_defined) evaluated[m] += total;
      for (std::size_t i = 0; i < plan.perms.size(); ++i) {
        const int pos = plan.perms[i].negative_position;
        const auto group = position_group(pos, total);
        if (dist_mad.flags[i]) ++flagged["distance"][group];
        if (basic_mad.flags[i]) ++flagged["basic"][group];
        if (rating_mad && rating_mad->flags[i]) ++flagged["rating"][group];
        out.table.add({src.id, src.title, target, std::to_string(pos), group, fmt(dist_scores[i]),
                       fmt(basic_scores[i]), rating_defined ? fmt(ratings[i]) : std::string(kSentinelLabel),
                       dist_mad.flags[i] ? "true" : "false", basic_mad.flags[i] ? "true" : "false",
                       rating_mad ? (rating_mad->flags[i] ? "true" : "false") : ""});
      }
      auto mad_json = [](const stats::OutlierReport& r) {
        return nlohmann::json{{"median", r.median}, {"mad", r.mad}, {"degenerate", r.degenerate}};
      };
      per_set.push_back({{"set_id", src.id},
                         {"distance", mad_json(dist_mad)},
                         {"basic", mad_json(basic_mad)},
                         {"rating", rating_mad ? mad_json(*rating_mad) : nlohmann::json(nullptr)},
                         {"rating_skipped", !rating_defined}});
    } catch (...) {
      out.quarantined.push_back(quarantine(src.id, std::current_exception()));
    }
  }

  nlohmann::json anomalies = nlohmann::json::object();
  for (const auto& m : metrics) {
    nlohmann::json g = nlohmann::json::object();
    double sum = 0.0;
    for (const auto& grp : groups) {
      const int n = flagged[m][grp];
      const double pct = evaluated[m] > 0 ? 100.0 * n / evaluated[m] : 0.0;
      sum += pct;
      g[grp] = {{"flagged", n}, {"percent", pct}};
    }
    anomalies[m] = {{"permutations", evaluated[m]}, {"groups", g}, {"percent_total", sum}};
  }
  out.summary = {{"experiment", "lost-in-middle"},
                 {"distribution", lm::to_string(mode)},
                 {"mad_multiplier", multiplier},
                 {"mad_degenerate_rule", degenerate_rule},
                 {"sets", sets.size()},
                 {"scored_sets", per_set.size()},
                 {"anomalies", anomalies},
                 {"per_set", per_set},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "lost-in-middle"}, {"seeded_choices", nlohmann::json::array()}};
  return out;
}

}  // namespace tps::exp

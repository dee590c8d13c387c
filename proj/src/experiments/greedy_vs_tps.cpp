#include <map>

#include "internal.hpp"
#include "tps/datasets.hpp"
#include "tps/metric.hpp"

namespace tps::exp {

using namespace detail;

HarnessResult run_greedy_vs_tps(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "greedy-vs-tps");
  const auto mode = params.distribution(lm::DistributionMode::cover);
  const auto default_answers = params.get<std::vector<std::string>>("answers", {});
  const auto instructions = params.get<std::string>("instructions", "");
  const auto query_template = params.get<std::string>("query_template", "official_language_query");
  const auto context_template = params.get<std::string>("context_template", "official_language_context");
  params.finish();

  const auto records = data::load_queries(options.dataset, default_answers);
  const auto query_text = options.templates.get(query_template);
  const auto context_text = options.templates.get(context_template);

  HarnessResult out;
  out.name = "greedy_vs_tps";
  out.table = Table({"id", "entity", "target", "prior_greedy", "conditional_greedy", "category", "prior_target",
                     "conditional_target", "prior_sentinel", "conditional_sentinel", "basic_tps"});

  // Records with the same answer list share one space so their requests batch together.
  std::map<std::vector<std::string>, SpacePtr> spaces;
  Batch batch(client, mode);
  struct Tickets {
    std::size_t prior, conditional;
    SpacePtr space;
  };
  std::vector<std::optional<Tickets>> tickets(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    try {
      auto& space = spaces[r.answers];
      if (!space) space = AnswerSpace::create(r.answers, true);
      const auto query = r.query ? *r.query : prompts::render(query_text, {{"entity", r.entity}});
      const auto context = prompts::render(context_text, {{"context", r.context}, {"entity", r.entity}});
      tickets[i] = Tickets{batch.add({instructions, std::nullopt, query}, space),
                           batch.add({instructions, context, query}, space), space};
    } catch (...) {
      out.quarantined.push_back(quarantine(r.id, std::current_exception()));
    }
  }
  batch.run();

  std::map<Category, std::vector<double>> by_category;
  std::vector<double> all;
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!tickets[i]) continue;
    const auto& r = records[i];
    try {
      const auto& prior = batch.value(tickets[i]->prior);
      const auto& cond = batch.value(tickets[i]->conditional);
      fallbacks += !prior.answer_found + !cond.answer_found;
      const auto& space = *tickets[i]->space;
      const auto target = space.require_index(r.target);
      const auto result = basic_tps(prior.distribution, cond.distribution, Answer(r.target));
      const auto gp = greedy_answer(prior.distribution), gc = greedy_answer(cond.distribution);
      const auto cat = categorize(gp, gc, target);
      by_category[cat].push_back(result.score);
      all.push_back(result.score);
      out.table.add({r.id, r.entity, r.target, space.label(gp), space.label(gc), std::string(to_string(cat)),
                     fmt(prior.distribution[target]), fmt(cond.distribution[target]),
                     fmt(prior.distribution.sentinel_mass()), fmt(cond.distribution.sentinel_mass()),
                     fmt(result.score)});
    } catch (...) {
      out.quarantined.push_back(quarantine(r.id, std::current_exception()));
    }
  }

  nlohmann::json cats = nlohmann::json::object();
  for (auto c : {Category::agrees_with_context, Category::keeps_prior, Category::other})
    cats[std::string(to_string(c))] = describe(by_category[c]);
  out.summary = {{"experiment", "greedy-vs-tps"},
                 {"distribution", lm::to_string(mode)},
                 {"records", records.size()},
                 {"scored", all.size()},
                 {"no_answer_fallbacks", fallbacks},
                 {"basic_tps", describe(all)},
                 {"by_category", cats},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "greedy-vs-tps"}, {"seeded_choices", nlohmann::json::array()}};
  return out;
}

}  // namespace tps::exp

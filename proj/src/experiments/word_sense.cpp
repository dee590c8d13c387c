#include <algorithm>
#include <cmath>

#include "internal.hpp"
#include "tps/datasets.hpp"
#include "tps/metric.hpp"

namespace tps::exp {

using namespace detail;

namespace {

struct SenseTest {
  std::optional<stats::TTestResult> test;
  std::string note;
};

SenseTest run_test(const std::vector<double>& values, stats::Tail tail) {
  if (values.size() < 2) return {std::nullopt, "too_few_contexts"};
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
    return {std::nullopt, "zero_variance"};
  return {stats::t_test_one_sided(values, 0.0, tail), ""};
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

HarnessResult run_word_sense(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "word-sense");
  const auto mode = params.distribution(lm::DistributionMode::next_token);
  const auto alpha = params.get<double>("alpha", 0.01);
  const auto senses_per_word = params.get<int>("senses_per_word", 4);
  const auto instructions = params.get<std::string>("instructions", "");
  params.finish();
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("word-sense alpha must lie in (0, 1)");

  const auto words = data::load_words(options.dataset);
  const auto definition_t = options.templates.get("wordsense_definition");
  const auto prior_t = options.templates.get("wordsense_prior_query");
  const auto context_t = options.templates.get("wordsense_context");
  const auto context_query_t = options.templates.get("wordsense_context_query");

  HarnessResult out;
  out.name = "word_sense";
  out.table = Table({"word_id", "word", "sense", "gloss", "group", "n", "mean_basic_tps", "mean_semantic_tps",
                     "alternative", "t_stat", "p_value", "bonferroni_threshold", "significant", "note"});

  struct WordPlan {
    SpacePtr space;
    std::size_t prior = 0;
    std::vector<std::size_t> contexts;
  };
  std::vector<std::optional<WordPlan>> plans(words.size());
  std::vector<std::string> glosses;
  Batch batch(client, mode);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& item = words[w];
    try {
      if (static_cast<int>(item.senses.size()) != senses_per_word)
        throw ValidationError("word has " + std::to_string(item.senses.size()) + " senses, expected " +
                              std::to_string(senses_per_word));
      std::vector<std::string> labels;
      std::string definitions;
      for (const auto& s : item.senses) {
        labels.push_back(s.label);
        definitions += prompts::render(definition_t, {{"label", s.label}, {"gloss", s.gloss}});
        glosses.push_back(s.gloss);
      }
      const prompts::Bindings b{{"count", std::to_string(labels.size())},
                                {"labels", join(labels, ", ")},
                                {"choices", join(labels, " or ")},
                                {"definitions", definitions},
                                {"entity", item.word}};
      WordPlan plan;
      plan.space = AnswerSpace::create(labels, true);
      plan.prior = batch.add({instructions, std::nullopt, prompts::render(prior_t, b)}, plan.space);
      const auto cq = prompts::render(context_query_t, b);
      for (const auto& c : item.contexts)
        plan.contexts.push_back(
            batch.add({instructions, prompts::render(context_t, {{"context sentence", c.text}}), cq}, plan.space));
      plans[w] = std::move(plan);
    } catch (...) {
      out.quarantined.push_back(quarantine(item.id, std::current_exception()));
    }
  }

  batch.run();
  std::optional<EmbeddingTable> gloss_vectors;
  std::exception_ptr embed_error;
  try {
    gloss_vectors = client.embed(glosses);
  } catch (...) {
    embed_error = std::current_exception();
  }

  nlohmann::json per_word = nlohmann::json::array();
  std::vector<double> spearman_x, spearman_y;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (!plans[w]) continue;
    const auto& item = words[w];
    const auto& plan = *plans[w];
    try {
      if (embed_error) std::rethrow_exception(embed_error);
      EmbeddingTable table;
      for (const auto& s : item.senses) {
        const auto* v = gloss_vectors->find(s.gloss);
        if (!v) throw ValidationError("missing embedding for the gloss of sense " + s.label);
        table.add(s.label, *v);
      }
      const auto cost = semantic_cost(plan.space, table);
      const auto& prior = batch.value(plan.prior).distribution;
      const std::size_t n_senses = item.senses.size();

      // basic[t][c], semantic[t][c]: TPS toward sense t for context c.
      std::vector<std::vector<double>> basic(n_senses), semantic(n_senses);
      for (std::size_t c = 0; c < item.contexts.size(); ++c) {
        const auto& cond = batch.value(plan.contexts[c]).distribution;
        for (std::size_t t = 0; t < n_senses; ++t) {
          const Answer target(item.senses[t].label);
          basic[t].push_back(basic_tps(prior, cond, target).score);
          semantic[t].push_back(semantic_tps(prior, cond, target, table).score);
        }
      }

      nlohmann::json cells = nlohmann::json::object();
      std::vector<std::vector<std::string>> rows;
      std::vector<double> target_p, other_p;
      std::vector<std::size_t> target_rows, other_rows;
      for (std::size_t t = 0; t < n_senses; ++t) {
        const auto& label = item.senses[t].label;
        nlohmann::json by_cue = nlohmann::json::object();
        std::vector<double> tb, ts, ob, os;
        for (std::size_t cue = 0; cue < n_senses; ++cue) {
          std::vector<double> cb, cs;
          for (std::size_t c = 0; c < item.contexts.size(); ++c) {
            if (item.contexts[c].sense != item.senses[cue].label) continue;
            cb.push_back(basic[t][c]);
            cs.push_back(semantic[t][c]);
            (cue == t ? tb : ob).push_back(basic[t][c]);
            (cue == t ? ts : os).push_back(semantic[t][c]);
          }
          by_cue[item.senses[cue].label] = {
              {"n", cb.size()},
              {"mean_basic_tps", cb.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::mean(cb))},
              {"mean_semantic_tps", cs.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::mean(cs))}};
        }
        cells[label] = by_cue;

        for (int g = 0; g < 2; ++g) {
          const bool target_group = g == 0;
          const auto& vb = target_group ? tb : ob;
          const auto& vs = target_group ? ts : os;
          const auto tail = target_group ? stats::Tail::greater : stats::Tail::less;
          const auto test = run_test(vb, tail);
          rows.push_back({item.id, item.word, label, item.senses[t].gloss, target_group ? "target" : "non_target",
                          std::to_string(vb.size()), vb.empty() ? "" : fmt(stats::mean(vb)),
                          vs.empty() ? "" : fmt(stats::mean(vs)), target_group ? "greater" : "less",
                          test.test ? fmt(test.test->t) : "", test.test ? fmt(test.test->p_value) : "", "", "false",
                          test.note});
          auto& idx = target_group ? target_rows : other_rows;
          auto& ps = target_group ? target_p : other_p;
          idx.push_back(rows.size() - 1);
          ps.push_back(test.test ? test.test->p_value : 1.0);
        }
      }
      // Bonferroni over the instantiations of one word, separately per test family.
      for (int g = 0; g < 2; ++g) {
        const auto& ps = g == 0 ? target_p : other_p;
        const auto& idx = g == 0 ? target_rows : other_rows;
        const auto flags = stats::bonferroni(ps, alpha);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          auto& row = rows[idx[i]];
          row[11] = fmt(alpha / static_cast<double>(ps.size()));
          row[12] = flags[i] && row[13].empty() ? "true" : "false";
        }
      }
      for (auto& r : rows) out.table.add(std::move(r));

      nlohmann::json distance = nlohmann::json::object();
      for (std::size_t a = 0; a < n_senses; ++a) {
        nlohmann::json row = nlohmann::json::object();
        for (std::size_t b = 0; b < n_senses; ++b) row[item.senses[b].label] = cost(a, b);
        distance[item.senses[a].label] = row;
      }

      // Spearman input: distance from the prior's favourite sense to each other
      // sense against the BasicTPS - semantic TPS gap on contexts cued for it.
      const auto favourite = greedy_answer(prior);
      if (!plan.space->is_sentinel(favourite)) {
        for (std::size_t t = 0; t < n_senses; ++t) {
          if (t == favourite) continue;
          std::vector<double> gap;
          for (std::size_t c = 0; c < item.contexts.size(); ++c)
            if (item.contexts[c].sense == item.senses[t].label) gap.push_back(basic[t][c] - semantic[t][c]);
          if (gap.empty()) continue;
          spearman_x.push_back(cost(favourite, t));
          spearman_y.push_back(stats::mean(gap));
        }
      }

      per_word.push_back({{"id", item.id},
                          {"word", item.word},
                          {"contexts", item.contexts.size()},
                          {"prior", to_json(prior)["probs"]},
                          {"prior_greedy", greedy_label(prior)},
                          {"cosine_distance", distance},
                          {"tps_by_target_and_cue", cells}});
    } catch (...) {
      out.quarantined.push_back(quarantine(item.id, std::current_exception()));
    }
  }

  nlohmann::json spearman = nullptr;
  if (spearman_x.size() >= 2) {
    try {
      spearman = stats::spearman(spearman_x, spearman_y);
    } catch (const ValidationError&) {
      spearman = nullptr;
    }
  }
  out.summary = {{"experiment", "word-sense"},
                 {"distribution", lm::to_string(mode)},
                 {"alpha", alpha},
                 {"words", words.size()},
                 {"scored_words", per_word.size()},
                 {"per_word", per_word},
                 {"spearman_cosine_distance_vs_basic_minus_semantic", {{"pairs", spearman_x.size()}, {"rho", spearman}}},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "word-sense"}, {"seeded_choices", nlohmann::json::array()}};
  return out;
}

}  // namespace tps::exp

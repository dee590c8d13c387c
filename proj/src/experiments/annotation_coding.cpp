#include <cmath>
#include <map>

#include "internal.hpp"
#include "tps/datasets.hpp"
#include "tps/metric.hpp"

namespace tps::exp {

using namespace detail;

HarnessResult run_annotation_coding(lm::LmClient& client, const RunOptions& options) {
  Params params(options.params, "annotation-coding");
  const auto mode = params.distribution(lm::DistributionMode::next_token);
  const auto variants = params.get<std::vector<std::string>>("variants", {"technical", "fewshot"});
  const auto min_labels = params.get<int>("min_labels", 3);
  const auto max_std = params.get<double>("max_std", 0.5);
  const auto shots = params.get<int>("shots", 5);
  const auto scale_range = params.get<std::vector<int>>("scale", {1, 5});
  params.finish();
  for (const auto& v : variants)
    if (v != "technical" && v != "fewshot") throw ValidationError("unknown prompt variant \"" + v + "\"");
  if (scale_range.size() != 2 || scale_range[0] >= scale_range[1])
    throw ValidationError("\"scale\" must be [lo, hi] with lo < hi");
  if (shots < 1) throw ValidationError("shots must be >= 1");

  const auto scale = ScaleMap::integer_range(scale_range[0], scale_range[1]);
  const auto space = scale_space(scale);
  const auto sentences = data::load_sentences(options.dataset);
  const auto query_t = options.templates.get("coding_query");

  // Agreement filter.
  struct Kept {
    const data::Sentence* s;
    double mean;
    int target;
  };
  std::map<std::string, std::vector<Kept>> by_topic;
  std::size_t dropped = 0;
  for (const auto& s : sentences) {
    const double sd = s.labels.size() < 2 ? 0.0 : std::sqrt(stats::sample_variance(s.labels));
    if (static_cast<int>(s.labels.size()) < min_labels || s.labels.empty() || sd > max_std) {
      ++dropped;
      continue;
    }
    const double m = stats::mean(s.labels);
    by_topic[s.topic].push_back({&s, m, round_half_up(m)});
  }

  HarnessResult out;
  out.name = "annotation_coding";
  out.table = Table({"sentence_id", "topic", "expert_mean", "target", "variant", "tps", "basic_prior_greedy",
                     "variant_greedy"});

  struct Job {
    const Kept* kept;
    std::string topic;
    std::size_t prior;
    std::map<std::string, std::size_t> variant;
  };
  std::vector<Job> jobs;
  auto samples = nlohmann::json::array();
  Batch batch(client, mode);
  for (const auto& [topic, kept] : by_topic) {
    try {
      const auto basic = options.templates.get("coding_" + topic + "_basic");
      const auto technical = options.templates.get("coding_" + topic + "_technical");
      if (static_cast<int>(kept.size()) <= shots)
        throw ValidationError("topic " + topic + " has " + std::to_string(kept.size()) +
                              " usable sentences, more than " + std::to_string(shots) + " needed");
      const auto pick = sample_without_replacement(derive_key(options.seed, {"annotation-coding", topic, "fewshot"}),
                                                   kept.size(), static_cast<std::size_t>(shots));
      std::string fewshot = options.templates.get("coding_fewshot_header");
      auto chosen = nlohmann::json::array();
      std::vector<bool> exemplar(kept.size(), false);
      for (auto i : pick) {
        exemplar[i] = true;
        fewshot += options.templates.render(
            "coding_fewshot_item", {{"sentence", kept[i].s->text}, {"rating", std::to_string(kept[i].target)}});
        chosen.push_back(kept[i].s->id);
      }
      fewshot += options.templates.get("coding_fewshot_footer");
      samples.push_back({{"topic", topic}, {"fewshot_exemplars", chosen}});

      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (exemplar[i]) continue;
        if (!scale.numeric(std::to_string(kept[i].target))) {
          out.quarantined.push_back({kept[i].s->id, FailureKind::validation, "rounded expert mean is off the scale"});
          continue;
        }
        const auto query = prompts::render(query_t, {{"sentence", kept[i].s->text}});
        Job job{&kept[i], topic, batch.add({basic, std::nullopt, query}, space), {}};
        for (const auto& v : variants)
          job.variant[v] = batch.add({basic, v == "technical" ? technical : fewshot, query}, space);
        jobs.push_back(std::move(job));
      }
    } catch (...) {
      out.quarantined.push_back(quarantine("topic:" + topic, std::current_exception()));
    }
  }
  batch.run();

  struct Acc {
    std::vector<double> tps, greedy, expert;
    std::size_t sentinel_greedy = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const auto& job : jobs) {
    const auto& k = *job.kept;
    try {
      const auto& prior = batch.value(job.prior).distribution;
      std::vector<std::vector<std::string>> rows;
      std::map<std::string, std::pair<double, std::size_t>> scored;
      for (const auto& v : variants) {
        const auto& cond = batch.value(job.variant.at(v)).distribution;
        const auto r = distance_tps(prior, cond, Answer(std::to_string(k.target)), scale);
        scored[v] = {r.score, greedy_answer(cond)};
        rows.push_back({k.s->id, job.topic, fmt(k.mean), std::to_string(k.target), v, fmt(r.score),
                        greedy_label(prior), greedy_label(cond)});
      }
      for (auto& r : rows) out.table.add(std::move(r));

      auto record = [&](const std::string& variant, std::optional<double> score, std::size_t greedy) {
        auto& a = acc[{job.topic, variant}];
        if (score) a.tps.push_back(*score);
        if (space->is_sentinel(greedy)) {
          ++a.sentinel_greedy;
        } else {
          a.greedy.push_back(*scale.numeric(space->label(greedy)));
          a.expert.push_back(k.mean);
        }
      };
      record("basic", std::nullopt, greedy_answer(prior));
      for (const auto& [v, sc] : scored) record(v, sc.first, sc.second);
    } catch (...) {
      out.quarantined.push_back(quarantine(k.s->id, std::current_exception()));
    }
  }

  nlohmann::json topics = nlohmann::json::object();
  for (const auto& [key, a] : acc) {
    const auto& [topic, variant] = key;
    nlohmann::json entry = {{"rmse_greedy_vs_expert_mean",
                             a.greedy.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::rmse(a.greedy, a.expert))},
                            {"rated", a.greedy.size()},
                            {"sentinel_greedy_excluded", a.sentinel_greedy}};
    if (variant != "basic") {
      entry["n"] = a.tps.size();
      entry["mean_tps"] = a.tps.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::mean(a.tps));
      entry["variance_tps"] = a.tps.empty() ? nlohmann::json(nullptr) : nlohmann::json(stats::population_variance(a.tps));
    }
    topics[topic][variant] = entry;
  }
  out.summary = {{"experiment", "annotation-coding"},
                 {"distribution", lm::to_string(mode)},
                 {"filter", {{"min_labels", min_labels}, {"max_std", max_std}, {"dropped", dropped}}},
                 {"sentences", sentences.size()},
                 {"by_topic", topics},
                 {"quarantined", quarantine_json(out.quarantined)}};
  out.samples = {{"experiment", "annotation-coding"},
                 {"seed", options.seed},
                 {"protocol", "one draw of few-shot exemplars per topic; exemplars are not scored"},
                 {"seeded_choices", samples}};
  return out;
}

}  // namespace tps::exp

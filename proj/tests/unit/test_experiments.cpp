#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "synthetic_model.hpp"
#include "tps/errors.hpp"
#include "tps/experiments.hpp"
#include "tps/io.hpp"
#include "tps/stats.hpp"
#include "wire.hpp"

using namespace tps;
using namespace tps::exp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tps_experiment_tests";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_jsonl(const std::string& name, const std::vector<json>& rows) {
  const auto path = scratch(name);
  std::ofstream out(path);
  for (const auto& r : rows) out << r.dump() << "\n";
  return path;
}

lm::BackendConfig config() {
  lm::BackendConfig cfg;
  cfg.model_name = "m";
  cfg.max_in_flight = 2;
  return cfg;
}

RunOptions options(const fs::path& dataset, json params = json::object(), std::uint64_t seed = 0) {
  RunOptions o;
  o.dataset = dataset;
  o.params = std::move(params);
  o.seed = seed;
  return o;
}

std::string prompt_of(const lm::Request& r) { return r.body.at("prompt").get<std::string>(); }

std::size_t column(const Table& t, const std::string& name) {
  const auto& cols = t.columns();
  return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
}

std::vector<json> movie_rows(int per_polarity) {
  json reviews = json::array();
  for (int i = 0; i < per_polarity; ++i) {
    reviews.push_back({{"text", "good " + std::to_string(i)}, {"polarity", "positive"}});
    reviews.push_back({{"text", "bad " + std::to_string(i)}, {"polarity", "negative"}});
  }
  return {{{"id", "m1"}, {"title", "Alpha"}, {"reviews", reviews}},
          {{"id", "m2"}, {"title", "Beta"}, {"reviews", reviews}}};
}

}  // namespace

TEST_CASE("categorize") {
  CHECK(categorize(0, 1, 1) == Category::agrees_with_context);
  CHECK(categorize(1, 1, 1) == Category::agrees_with_context);
  CHECK(categorize(0, 0, 1) == Category::keeps_prior);
  CHECK(categorize(0, 2, 1) == Category::other);
  CHECK(to_string(Category::keeps_prior) == "keeps_prior");
}

TEST_CASE("minority arithmetic") {
  CHECK(minority_count(1) == 1);
  CHECK(minority_count(4) == 1);
  CHECK(minority_count(6) == 2);
  CHECK(minority_count(10) == 3);
  for (int k = 4; k <= 10; ++k) {
    const int m = minority_count(k);
    const int start = minority_start(k, m);
    CHECK(start >= 1);
    CHECK(start + m - 1 <= k);
    CHECK(start <= (k + 1) / 2);
    CHECK(start + m - 1 >= (k + 1) / 2);
  }
  CHECK(minority_start(10, 3) == 4);
  CHECK(minority_start(4, 1) == 2);
  CHECK(minority_start(5, 1) == 3);
}

TEST_CASE("round half up") {
  CHECK(round_half_up(2.5) == 3);
  CHECK(round_half_up(3.5) == 4);
  CHECK(round_half_up(2.49) == 2);
  CHECK(round_half_up(1.0) == 1);
}

TEST_CASE("seeded sampling is deterministic and keyed") {
  const auto k1 = derive_key(0, {"tps-vs-k", "m1", "4"});
  CHECK(k1 == derive_key(0, {"tps-vs-k", "m1", "4"}));
  CHECK(k1 != derive_key(1, {"tps-vs-k", "m1", "4"}));
  CHECK(k1 != derive_key(0, {"tps-vs-k", "m1", "5"}));
  CHECK(derive_key(0, {"ab", "c"}) != derive_key(0, {"a", "bc"}));

  const auto a = sample_without_replacement(k1, 12, 5);
  CHECK(a == sample_without_replacement(k1, 12, 5));
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 5);
  for (auto x : a) CHECK(x < 12);
  CHECK(sample_without_replacement(k1, 3, 3).size() == 3);
  CHECK_THROWS_AS(sample_without_replacement(k1, 3, 4), ValidationError);

  SplitMix64 rng(42);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 3000; ++i) ++counts[rng.below(3)];
  for (int c : counts) CHECK(c > 900);
}

TEST_CASE("table CSV and row width") {
  Table t({"a", "b"});
  t.add({"1", "x,y"});
  CHECK(t.to_csv() == "a,b\n1,\"x,y\"\n");
  CHECK_THROWS_AS(t.add({"only one"}), std::logic_error);
}

TEST_CASE("unknown harness and unknown parameters are rejected") {
  CHECK_THROWS_WITH_AS(find_harness("nope"), doctest::Contains("lost-in-middle"), ValidationError);
  CHECK(harnesses().size() == 6);
  synthetic::SyntheticBackend live;
  lm::LmClient client(live, config());
  const auto ds = write_jsonl("q_params.jsonl", {});
  CHECK_THROWS_WITH_AS(run_greedy_vs_tps(client, options(ds, {{"answerz", json::array()}})),
                       doctest::Contains("answerz"), ValidationError);
}

TEST_CASE("greedy-vs-tps on three scripted records") {
  // Prior always favours French; contexts name the language that wins.
  lm::FunctionBackend b([](const lm::Request& r) {
    const auto p = prompt_of(r);
    if (p.find("say German") != std::string::npos) return wire::next_token({{" German", 0.8}, {" French", 0.1}});
    if (p.find("say Dutch") != std::string::npos) return wire::next_token({{" German", 0.3}, {" French", 0.6}});
    if (p.find("say Polish") != std::string::npos) return wire::next_token({{" Polish", 0.7}, {" French", 0.2}});
    return wire::next_token({{" French", 0.6}, {" German", 0.2}, {" Dutch", 0.1}});
  });
  lm::LmClient client(b, config());
  const auto ds = write_jsonl("q3.jsonl", {{{"id", "a"}, {"entity", "X"}, {"context", "say German"}, {"target", "German"}},
                                           {{"id", "b"}, {"entity", "Y"}, {"context", "say Dutch"}, {"target", "Dutch"}},
                                           {{"id", "c"}, {"entity", "Z"}, {"context", "say Polish"}, {"target", "Dutch"}}});
  const auto r = run_greedy_vs_tps(
      client, options(ds, {{"distribution", "next_token"}, {"answers", {"French", "German", "Dutch", "Polish"}}}));
  REQUIRE(r.table.rows().size() == 3);
  const auto cat = column(r.table, "category");
  const auto tps_col = column(r.table, "basic_tps");
  CHECK(r.table.rows()[0][cat] == "agrees_with_context");
  CHECK(r.table.rows()[1][cat] == "keeps_prior");
  CHECK(r.table.rows()[2][cat] == "other");
  CHECK(std::stod(r.table.rows()[0][tps_col]) == doctest::Approx(0.8 - 0.2).epsilon(1e-12));
  CHECK(std::stod(r.table.rows()[1][tps_col]) == doctest::Approx(0.0 - 0.1).epsilon(1e-12));
  int total = 0;
  for (const auto& [_, v] : r.summary.at("by_category").items()) total += v.at("count").get<int>();
  CHECK(total == 3);
  CHECK(r.exit_code() == 0);
}

TEST_CASE("a failing record is quarantined and the rest still run") {
  lm::FunctionBackend b([](const lm::Request& r) -> json {
    if (prompt_of(r).find("of Y?") != std::string::npos) throw lm::BackendError("HTTP 400", false);
    return wire::next_token({{" French", 0.6}, {" German", 0.3}});
  });
  lm::LmClient client(b, config());
  const auto ds = write_jsonl("q_fail.jsonl", {{{"id", "a"}, {"entity", "X"}, {"context", "c"}, {"target", "German"}},
                                               {{"id", "b"}, {"entity", "Y"}, {"context", "c"}, {"target", "German"}}});
  const auto r =
      run_greedy_vs_tps(client, options(ds, {{"distribution", "next_token"}, {"answers", {"French", "German"}}}));
  CHECK(r.table.rows().size() == 1);
  REQUIRE(r.quarantined.size() == 1);
  CHECK(r.quarantined[0].id == "b");
  CHECK(r.quarantined[0].kind == FailureKind::backend);
  CHECK(r.exit_code() == 3);
}

TEST_CASE("word-sense: contexts that move all mass to the cued sense") {
  const std::map<std::string, double> prior{{"A", 0.4}, {"B", 0.3}, {"C", 0.2}, {"D", 0.1}};
  lm::FunctionBackend b([&](const lm::Request& r) {
    if (r.endpoint == "/v1/embeddings") {
      std::vector<std::vector<double>> v;
      for (const auto& t : r.body.at("input")) v.push_back({1.0 * t.get<std::string>().size(), 1.0, 0.5});
      return wire::embeddings(v);
    }
    const auto p = prompt_of(r);
    const auto at = p.find("cue=");
    if (at == std::string::npos) {
      std::map<std::string, double> k;
      for (const auto& [l, q] : prior) k[l] = q;
      return wire::next_token(k);
    }
    return wire::next_token({{p.substr(at + 4, 1), 1.0}});
  });
  lm::LmClient client(b, config());
  json senses = json::array(), contexts = json::array();
  for (const std::string l : {"A", "B", "C", "D"}) {
    senses.push_back({{"label", l}, {"gloss", "gloss for " + l + std::string(l == "C" ? " longer" : "")}});
    for (int i = 0; i < 3; ++i) contexts.push_back({{"sense", l}, {"text", "cue=" + l + " #" + std::to_string(i)}});
  }
  const auto ds = write_jsonl("w.jsonl", {{{"id", "w1"}, {"word", "bank"}, {"senses", senses}, {"contexts", contexts}}});
  const auto r = run_word_sense(client, options(ds));
  const auto sense = column(r.table, "sense"), group = column(r.table, "group"), mean = column(r.table, "mean_basic_tps"),
             note = column(r.table, "note");
  int checked = 0;
  for (const auto& row : r.table.rows()) {
    if (row[group] != "target") continue;
    CHECK(std::stod(row[mean]) == doctest::Approx(1.0 - prior.at(row[sense])).epsilon(1e-12));
    CHECK(row[note] == "zero_variance");
    ++checked;
  }
  CHECK(checked == 4);
}

TEST_CASE("concatenated equals individual when the model ignores the reviews") {
  lm::FunctionBackend b([](const lm::Request& r) {
    if (prompt_of(r).find("Review 1:") != std::string::npos) return wire::next_token({{" 3", 0.5}, {" 2", 0.5}});
    return wire::next_token({{" 7", 0.6}, {" 6", 0.4}});
  });
  lm::LmClient client(b, config());
  const auto ds = write_jsonl("movies_eq.jsonl", movie_rows(5));
  const auto r = run_concat_vs_individual(client, options(ds, {{"k_range", {4, 5}}}));
  REQUIRE(r.table.rows().size() == 2 * 2 * 2);
  const auto c = column(r.table, "concatenated_tps"), m = column(r.table, "mean_individual_tps");
  for (const auto& row : r.table.rows()) CHECK(std::stod(row[c]) == doctest::Approx(std::stod(row[m])).epsilon(1e-12));
  CHECK(r.summary.at("by_noise").at("uniform").at("points") == 4);
}

TEST_CASE("two-point least squares") {
  const std::vector<double> x{0, 1}, y{0, 2};
  CHECK(*stats::ols_slope(x, y) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("tps-vs-k samples contexts by prior split and noise") {
  synthetic::SyntheticBackend live;
  lm::LmClient client(live, config());
  const auto ds = write_jsonl("movies_k.jsonl", movie_rows(10));
  const auto r = run_tps_vs_k(client, options(ds, {{"k_uniform", {1, 3}}, {"k_noisy", {4, 6}}}));
  CHECK(r.table.rows().size() == 2 * 6);
  for (const auto& s : r.samples.at("seeded_choices")) {
    const int k = s.at("k");
    const int minority = s.at("minority");
    CHECK(s.at("slots").size() == static_cast<std::size_t>(k));
    std::set<int> seen;
    int minority_slots = 0;
    const auto major = s.at("slots")[0].at("polarity");
    for (const auto& slot : s.at("slots")) {
      seen.insert(slot.at("review_index").get<int>());
      minority_slots += slot.at("polarity") != major;
    }
    CHECK(seen.size() == static_cast<std::size_t>(k));
    CHECK(minority_slots == minority);
    CHECK(minority == (s.at("noise") == "noisy" ? minority_count(k) : 0));
  }
}

TEST_CASE("harness output is a deterministic function of inputs and seed") {
  synthetic::SyntheticBackend live;
  lm::LmClient client(live, config());
  const auto ds = write_jsonl("movies_det.jsonl", movie_rows(10));
  const json params{{"k_uniform", {1, 4}}, {"k_noisy", {4, 5}}};
  const auto a = run_tps_vs_k(client, options(ds, params, 3));
  const auto b = run_tps_vs_k(client, options(ds, params, 3));
  const auto c = run_tps_vs_k(client, options(ds, params, 4));
  CHECK(a.table.to_csv() == b.table.to_csv());
  CHECK(a.samples.dump() == b.samples.dump());
  CHECK(a.samples.dump() != c.samples.dump());
}

TEST_CASE("lost-in-middle flags a far first position") {
  // Only the ordering with the negative review first moves the model.
  lm::FunctionBackend b([](const lm::Request& r) {
    const auto p = prompt_of(r);
    if (p.find("Review 1: NEG") != std::string::npos) return wire::next_token({{" 2", 0.9}, {" 9", 0.1}});
    if (p.find("Review 1:") != std::string::npos) return wire::next_token({{" 9", 0.8}, {" 8", 0.2}});
    return wire::next_token({{" 7", 0.5}, {" 9", 0.5}});
  });
  lm::LmClient client(b, config());
  json positive = json::array();
  for (int i = 0; i < 9; ++i) positive.push_back("POS" + std::to_string(i));
  const auto ds = write_jsonl("perm.jsonl", {{{"id", "p1"}, {"title", "T"}, {"positive", positive}, {"negative", "NEG"}}});
  const auto r = run_lost_in_middle(client, options(ds));
  REQUIRE(r.table.rows().size() == 10);
  const auto df = column(r.table, "distance_flag"), bf = column(r.table, "basic_flag"), g = column(r.table, "position_group");
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(r.table.rows()[i][df] == (i == 0 ? "true" : "false"));
    CHECK(r.table.rows()[i][bf] == (i == 0 ? "true" : "false"));
  }
  CHECK(r.table.rows()[0][g] == "first");
  CHECK(r.table.rows()[9][g] == "last");
  const auto& basic = r.summary.at("anomalies").at("basic");
  CHECK(basic.at("groups").at("first").at("flagged") == 1);
  CHECK(basic.at("percent_total").get<double>() == doctest::Approx(10.0));
  CHECK(r.summary.at("per_set")[0].at("basic").at("degenerate") == true);
}

TEST_CASE("annotation coding targets the rounded expert mean") {
  lm::FunctionBackend b([](const lm::Request& r) {
    const auto p = prompt_of(r);
    if (p.find("Definitions.") != std::string::npos) return wire::next_token({{"3", 0.9}, {"2", 0.1}});
    if (p.find("Examples rated") != std::string::npos) return wire::next_token({{"3", 0.5}, {"4", 0.5}});
    return wire::next_token({{"1", 0.5}, {"3", 0.5}});
  });
  lm::LmClient client(b, config());
  std::vector<json> rows;
  for (int i = 0; i < 8; ++i)
    rows.push_back({{"id", "e" + std::to_string(i)}, {"topic", "economic"}, {"text", "sentence " + std::to_string(i)},
                    {"labels", i == 0 ? json{2, 3} : json{3, 3, 3}}});
  rows.push_back({{"id", "x"}, {"topic", "economic"}, {"text", "split"}, {"labels", {1, 5, 3}}});
  const auto ds = write_jsonl("coding.jsonl", rows);
  const auto r = run_annotation_coding(client, options(ds, {{"min_labels", 2}, {"max_std", 1.0}, {"shots", 2}}));
  CHECK(r.summary.at("filter").at("dropped") == 1);
  const auto id = column(r.table, "sentence_id"), target = column(r.table, "target"), tps_col = column(r.table, "tps"),
             variant = column(r.table, "variant");
  std::set<std::string> scored;
  for (const auto& row : r.table.rows()) {
    scored.insert(row[id]);
    if (row[id] == "e0") CHECK(row[target] == "3");
    if (row[variant] == "technical") CHECK(std::stod(row[tps_col]) > 0.0);
  }
  CHECK(scored.size() == 6);
  std::set<std::string> exemplars;
  for (const auto& e : r.samples.at("seeded_choices")[0].at("fewshot_exemplars")) exemplars.insert(e);
  CHECK(exemplars.size() == 2);
  for (const auto& e : exemplars) CHECK_FALSE(scored.contains(e));
  const auto& tech = r.summary.at("by_topic").at("economic").at("technical");
  const double expected = scored.contains("e0") ? std::sqrt(0.25 / 6.0) : 0.0;
  CHECK(tech.at("rmse_greedy_vs_expert_mean").get<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("write_outputs produces three files") {
  HarnessResult r;
  r.name = "demo";
  r.table = Table({"a"});
  r.table.add({"1"});
  const auto dir = scratch("outputs");
  fs::remove_all(dir);
  write_outputs(dir, r);
  CHECK(io::read_file(dir / "demo.csv") == "a\n1\n");
  CHECK(fs::exists(dir / "demo_summary.json"));
  CHECK(fs::exists(dir / "demo_samples.json"));
  CHECK_FALSE(fs::exists(dir / "demo.csv.tmp"));
}

#include <doctest.h>

#include <sstream>

#include "tps/datasets.hpp"
#include "tps/errors.hpp"

using namespace tps;
using namespace tps::data;

namespace {
template <class F>
auto parse(F f, const std::string& text) {
  std::istringstream in(text);
  return f(in);
}
}  // namespace

TEST_CASE("query records") {
  const auto q = parse([](std::istream& in) { return parse_queries(in, {"French", "German"}); },
                       R"({"id":"q1","entity":"France","context":"c","target":"German"})"
                       "\n\n"
                       R"({"id":"q2","entity":"Chile","context":"c","target":"B","answers":["A","B"],"query":"Q?"})"
                       "\n");
  REQUIRE(q.size() == 2);
  CHECK(q[0].answers == std::vector<std::string>{"French", "German"});
  CHECK_FALSE(q[0].query);
  CHECK(q[1].query == std::optional<std::string>("Q?"));
}

TEST_CASE("query errors carry the line number") {
  auto queries = [](std::istream& in) { return parse_queries(in, {"A", "B"}); };
  CHECK_THROWS_WITH_AS(parse(queries, R"({"id":"q1","entity":"e","context":"c","target":"Z"})"),
                       doctest::Contains("line 1: target \"Z\" is not among the answers"), ValidationError);
  CHECK_THROWS_WITH_AS(parse(queries, R"({"id":"q1","entity":"e","context":"c"})"),
                       doctest::Contains("line 1: missing \"target\""), ValidationError);
  CHECK_THROWS_WITH_AS(parse(queries, "{\"id\":\"q1\",\"entity\":\"e\",\"context\":\"c\",\"target\":\"A\"}\n"
                                      "{\"id\":\"q1\",\"entity\":\"f\",\"context\":\"c\",\"target\":\"A\"}\n"),
                       doctest::Contains("line 2: duplicate id \"q1\""), ValidationError);
  CHECK_THROWS_WITH_AS(
      parse(queries, R"({"id":"q","entity":"e","context":"c","target":"A","answers":["A","AB"]})"),
      doctest::Contains("prefix-free"), ValidationError);
  CHECK_THROWS_WITH_AS(parse(queries, "not json"), doctest::Contains("line 1"), ValidationError);
}

TEST_CASE("word items require known senses") {
  const std::string ok =
      R"({"id":"w","word":"bank","senses":[{"label":"A","gloss":"money"},{"label":"B","gloss":"river"}],)"
      R"("contexts":[{"sense":"B","text":"by the river"}]})";
  const auto w = parse(parse_words, ok);
  REQUIRE(w.size() == 1);
  CHECK(w[0].senses.size() == 2);
  CHECK(w[0].contexts[0].sense == "B");
  std::string bad = ok;
  bad.replace(bad.find("\"sense\":\"B\""), 11, "\"sense\":\"C\"");
  CHECK_THROWS_WITH_AS(parse(parse_words, bad), doctest::Contains("unknown sense \"C\""), ValidationError);
}

TEST_CASE("movie reviews by polarity") {
  const auto m = parse(parse_movies, R"({"id":"m","title":"T","reviews":[{"text":"good","polarity":"positive"},)"
                                     R"({"text":"bad","polarity":"negative"},{"text":"fine","polarity":"positive"}]})");
  REQUIRE(m.size() == 1);
  CHECK(m[0].with_polarity(Polarity::positive).size() == 2);
  CHECK(m[0].with_polarity(Polarity::negative).front()->text == "bad");
  CHECK_THROWS_AS(parse(parse_movies, R"({"id":"m","title":"T","reviews":[{"text":"x","polarity":"meh"}]})"),
                  ValidationError);
}

TEST_CASE("permutations place the negative review at every position") {
  PermutationSource src{"p", "T", {"p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9"}, "neg", std::nullopt};
  const auto perms = permutations(src);
  REQUIRE(perms.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(perms[i].negative_position == i + 1);
    REQUIRE(perms[i].reviews.size() == 10);
    CHECK(perms[i].reviews[i].text == "neg");
    CHECK(perms[i].reviews[i].polarity == Polarity::negative);
    std::vector<std::string> rest;
    for (int j = 0; j < 10; ++j)
      if (j != i) rest.push_back(perms[i].reviews[j].text);
    CHECK(rest == src.positive);
  }
  CHECK_THROWS_WITH_AS(parse(parse_permutation_sources, R"({"id":"p","title":"T","positive":["a"],"negative":"n"})"),
                       doctest::Contains("exactly 9"), ValidationError);
}

TEST_CASE("sentences") {
  const auto s = parse(parse_sentences, R"({"id":"s","text":"t","topic":"economic","labels":[1,2,2.5]})");
  CHECK(s[0].labels == std::vector<double>{1, 2, 2.5});
  CHECK_THROWS_AS(parse(parse_sentences, R"({"id":"s","text":"t","topic":"x","labels":["1"]})"), ValidationError);
}

TEST_CASE("shipped datasets load") {
  const std::filesystem::path d = std::filesystem::path(TPS_DATA_DIR) / "datasets";
  CHECK(load_queries(d / "official_language.jsonl", {"Arabic", "Dutch", "English", "French", "German", "Greek",
                                                      "Italian", "Japanese", "Mandarin Chinese", "Polish",
                                                      "Portuguese", "Russian", "Spanish", "Swahili"})
            .size() == 12);
  for (const auto& w : load_words(d / "word_sense.jsonl")) CHECK(w.senses.size() == 4);
  for (const auto& m : load_movies(d / "movies.jsonl")) {
    CHECK(m.with_polarity(Polarity::positive).size() >= 10);
    CHECK(m.with_polarity(Polarity::negative).size() >= 10);
  }
  CHECK(load_permutation_sources(d / "permutations.jsonl").size() == 3);
  CHECK(load_sentences(d / "manifesto.jsonl").size() == 29);
  CHECK_THROWS_WITH_AS(load_movies(d / "absent.jsonl"), doctest::Contains("cannot open"), ValidationError);
}

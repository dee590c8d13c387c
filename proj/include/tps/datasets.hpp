#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tps::data {

/// Calls `fn(record, line_number)` for every nonblank line. JSON and schema
/// errors are rethrown as ValidationError prefixed with "line N: ".
void for_each_jsonl(std::istream& in, const std::function<void(const nlohmann::json&, std::size_t)>& fn);

/// {"id", "entity", "context", "target", "answers"?, "query"?}
/// "query" overrides the templated query text for that record.
struct QueryRecord {
  std::string id;
  std::string entity;
  std::optional<std::string> query;
  std::string context;
  std::string target;
  std::vector<std::string> answers;
};

/// {"id", "word", "senses": [{"label", "gloss"}], "contexts": [{"sense", "text"}]}
struct Sense {
  std::string label;
  std::string gloss;
};
struct SenseContext {
  std::string sense;
  std::string text;
};
struct WordItem {
  std::string id;
  std::string word;
  std::vector<Sense> senses;
  std::vector<SenseContext> contexts;
};

enum class Polarity { positive, negative };
Polarity parse_polarity(const std::string& text);
std::string_view to_string(Polarity p);

/// {"id", "title", "reviews": [{"text", "polarity": "positive"|"negative"}]}
struct Review {
  std::string text;
  Polarity polarity;
};
struct Movie {
  std::string id;
  std::string title;
  std::vector<Review> reviews;

  [[nodiscard]] std::vector<const Review*> with_polarity(Polarity p) const;
};

/// {"id", "title", "positive": [9 texts], "negative": text, "target"?}
struct PermutationSource {
  std::string id;
  std::string title;
  std::vector<std::string> positive;
  std::string negative;
  std::optional<std::string> target;
};

/// The 10 orderings of one source: the negative review at position i
/// (1-based) with the positive reviews in their given order.
struct Permutation {
  int negative_position = 0;
  std::vector<Review> reviews;
};
std::vector<Permutation> permutations(const PermutationSource& source);

/// {"id", "text", "topic", "labels": [numbers]}
struct Sentence {
  std::string id;
  std::string text;
  std::string topic;
  std::vector<double> labels;
};

std::vector<QueryRecord> parse_queries(std::istream& in, const std::vector<std::string>& default_answers = {});
std::vector<WordItem> parse_words(std::istream& in);
std::vector<Movie> parse_movies(std::istream& in);
std::vector<PermutationSource> parse_permutation_sources(std::istream& in);
std::vector<Sentence> parse_sentences(std::istream& in);

std::vector<QueryRecord> load_queries(const std::filesystem::path& path,
                                      const std::vector<std::string>& default_answers = {});
std::vector<WordItem> load_words(const std::filesystem::path& path);
std::vector<Movie> load_movies(const std::filesystem::path& path);
std::vector<PermutationSource> load_permutation_sources(const std::filesystem::path& path);
std::vector<Sentence> load_sentences(const std::filesystem::path& path);

}  // namespace tps::data

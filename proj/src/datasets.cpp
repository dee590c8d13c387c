#include "tps/datasets.hpp"

#include <fstream>
#include <set>

#include "tps/answer_space.hpp"
#include "tps/errors.hpp"

namespace tps::data {

namespace {

using nlohmann::json;

const json& require(const json& rec, const char* key) {
  if (!rec.contains(key)) throw ValidationError(std::string("missing \"") + key + "\" field");
  return rec.at(key);
}

std::string require_string(const json& rec, const char* key, bool nonempty = true) {
  const auto& v = require(rec, key);
  if (!v.is_string()) throw ValidationError(std::string("\"") + key + "\" must be a string");
  auto s = v.get<std::string>();
  if (nonempty && s.empty()) throw ValidationError(std::string("\"") + key + "\" must be nonempty");
  return s;
}

std::vector<std::string> string_array(const json& v, const char* key) {
  if (!v.is_array()) throw ValidationError(std::string("\"") + key + "\" must be an array of strings");
  std::vector<std::string> out;
  for (const auto& x : v) {
    if (!x.is_string()) throw ValidationError(std::string("\"") + key + "\" must be an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

const json& require_array(const json& rec, const char* key) {
  const auto& v = require(rec, key);
  if (!v.is_array()) throw ValidationError(std::string("\"") + key + "\" must be an array");
  return v;
}

class IdRegistry {
 public:
  void add(const std::string& id) {
    if (!ids_.insert(id).second) throw ValidationError("duplicate id \"" + id + "\"");
  }

 private:
  std::set<std::string> ids_;
};

template <class T, class Parse>
std::vector<T> parse_all(std::istream& in, Parse parse_one) {
  std::vector<T> out;
  IdRegistry ids;
  for_each_jsonl(in, [&](const json& rec, std::size_t) {
    if (!rec.is_object()) throw ValidationError("record must be a JSON object");
    T item = parse_one(rec);
    ids.add(item.id);
    out.push_back(std::move(item));
  });
  return out;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  return in;
}

template <class F>
auto with_path(const std::filesystem::path& path, F f) {
  auto in = open(path);
  try {
    return f(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

void for_each_jsonl(std::istream& in, const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line), line_no);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

Polarity parse_polarity(const std::string& text) {
  if (text == "positive") return Polarity::positive;
  if (text == "negative") return Polarity::negative;
  throw ValidationError("polarity must be \"positive\" or \"negative\", got \"" + text + "\"");
}

std::string_view to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

std::vector<const Review*> Movie::with_polarity(Polarity p) const {
  std::vector<const Review*> out;
  for (const auto& r : reviews)
    if (r.polarity == p) out.push_back(&r);
  return out;
}

std::vector<Permutation> permutations(const PermutationSource& source) {
  std::vector<Permutation> out;
  const int total = static_cast<int>(source.positive.size()) + 1;
  for (int pos = 1; pos <= total; ++pos) {
    Permutation perm;
    perm.negative_position = pos;
    std::size_t next_positive = 0;
    for (int slot = 1; slot <= total; ++slot) {
      if (slot == pos) {
        perm.reviews.push_back({source.negative, Polarity::negative});
      } else {
        perm.reviews.push_back({source.positive[next_positive++], Polarity::positive});
      }
    }
    out.push_back(std::move(perm));
  }
  return out;
}

std::vector<QueryRecord> parse_queries(std::istream& in, const std::vector<std::string>& default_answers) {
  return parse_all<QueryRecord>(in, [&](const json& rec) {
    QueryRecord r;
    r.id = require_string(rec, "id");
    r.entity = require_string(rec, "entity");
    r.context = require_string(rec, "context");
    r.target = require_string(rec, "target");
    if (rec.contains("query")) r.query = require_string(rec, "query");
    r.answers = rec.contains("answers") ? string_array(rec.at("answers"), "answers") : default_answers;
    if (r.answers.empty()) throw ValidationError("no \"answers\" for the record and no default answer set");
    std::vector<Answer> as;
    for (const auto& a : r.answers) as.emplace_back(a);
    if (auto v = validate_prefix_free(as))
      throw ValidationError("answers are not prefix-free: \"" + v->first + "\" / \"" + v->second + "\"");
    if (std::find(r.answers.begin(), r.answers.end(), r.target) == r.answers.end())
      throw ValidationError("target \"" + r.target + "\" is not among the answers");
    return r;
  });
}

std::vector<WordItem> parse_words(std::istream& in) {
  return parse_all<WordItem>(in, [](const json& rec) {
    WordItem w;
    w.id = require_string(rec, "id");
    w.word = require_string(rec, "word");
    std::set<std::string> labels;
    for (const auto& s : require_array(rec, "senses")) {
      Sense sense{require_string(s, "label"), require_string(s, "gloss")};
      if (!labels.insert(sense.label).second) throw ValidationError("sense label \"" + sense.label + "\" repeated");
      w.senses.push_back(std::move(sense));
    }
    if (w.senses.size() < 2) throw ValidationError("a word needs at least two senses");
    for (const auto& c : require_array(rec, "contexts")) {
      SenseContext ctx{require_string(c, "sense"), require_string(c, "text")};
      if (!labels.contains(ctx.sense)) throw ValidationError("context cues unknown sense \"" + ctx.sense + "\"");
      w.contexts.push_back(std::move(ctx));
    }
    return w;
  });
}

std::vector<Movie> parse_movies(std::istream& in) {
  return parse_all<Movie>(in, [](const json& rec) {
    Movie m;
    m.id = require_string(rec, "id");
    m.title = require_string(rec, "title");
    for (const auto& r : require_array(rec, "reviews"))
      m.reviews.push_back({require_string(r, "text"), parse_polarity(require_string(r, "polarity"))});
    if (m.reviews.empty()) throw ValidationError("movie has no reviews");
    return m;
  });
}

std::vector<PermutationSource> parse_permutation_sources(std::istream& in) {
  return parse_all<PermutationSource>(in, [](const json& rec) {
    PermutationSource p;
    p.id = require_string(rec, "id");
    p.title = require_string(rec, "title");
    p.positive = string_array(require(rec, "positive"), "positive");
    if (p.positive.size() != 9)
      throw ValidationError("\"positive\" must hold exactly 9 reviews, got " + std::to_string(p.positive.size()));
    for (const auto& t : p.positive)
      if (t.empty()) throw ValidationError("empty positive review");
    p.negative = require_string(rec, "negative");
    if (rec.contains("target")) p.target = require_string(rec, "target");
    return p;
  });
}

std::vector<Sentence> parse_sentences(std::istream& in) {
  return parse_all<Sentence>(in, [](const json& rec) {
    Sentence s;
    s.id = require_string(rec, "id");
    s.text = require_string(rec, "text");
    s.topic = require_string(rec, "topic");
    for (const auto& l : require_array(rec, "labels")) {
      if (!l.is_number()) throw ValidationError("expert labels must be numbers");
      s.labels.push_back(l.get<double>());
    }
    return s;
  });
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path, const std::vector<std::string>& default_answers) {
  return with_path(path, [&](std::istream& in) { return parse_queries(in, default_answers); });
}

std::vector<WordItem> load_words(const std::filesystem::path& path) {
  return with_path(path, [](std::istream& in) { return parse_words(in); });
}

std::vector<Movie> load_movies(const std::filesystem::path& path) {
  return with_path(path, [](std::istream& in) { return parse_movies(in); });
}

std::vector<PermutationSource> load_permutation_sources(const std::filesystem::path& path) {
  return with_path(path, [](std::istream& in) { return parse_permutation_sources(in); });
}

std::vector<Sentence> load_sentences(const std::filesystem::path& path) {
  return with_path(path, [](std::istream& in) { return parse_sentences(in); });
}

}  // namespace tps::data

#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "synthetic_model.hpp"
#include "tps/errors.hpp"
#include "tps/lm_client.hpp"
#include "wire.hpp"

using namespace tps;
using namespace tps::lm;
using nlohmann::json;

namespace {

BackendConfig quiet_config() {
  BackendConfig cfg;
  cfg.model_name = "m";
  cfg.embedding_model = "e";
  cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  return cfg;
}

SpacePtr scale_space() { return AnswerSpace::create(ScaleMap::integer_range(0, 9).labels(), true); }

std::string fixture_line(const Request& r, const json& response) {
  return json{{"key", r.key()}, {"request", {{"endpoint", r.endpoint}, {"body", r.body}}}, {"response", response}}
      .dump();
}

std::vector<PromptBundle> movie_bundles() {
  std::vector<PromptBundle> out;
  for (const std::string title : {"Copper Kingdoms", "The Last Orchard", "Signals from Venus"}) {
    const std::string q = "On a scale of 0 to 9, what is the rating of " + title + "?\nA:";
    out.push_back({"Q: ", std::nullopt, q});
    out.push_back({"Q: ", "Here are some reviews of the film. Review 1: A boring film with clumsy acting. ", q});
  }
  return out;
}

}  // namespace

TEST_CASE("request key is the SHA-256 of the canonical request") {
  Request r{"/v1/completions", {{"prompt", "x"}, {"model", "m"}}};
  CHECK(r.canonical() == R"({"body":{"model":"m","prompt":"x"},"endpoint":"/v1/completions"})");
  CHECK(r.key() == sha256_hex(r.canonical()));
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("replay answers recorded requests and names the hash on a miss") {
  const Request hit{"/v1/completions", {{"prompt", "a"}}};
  const json response = {{"ok", true}};
  std::istringstream in(fixture_line(hit, response) + "\n");
  auto replay = ReplayBackend::parse(in);
  CHECK(replay->size() == 1);
  CHECK(replay->send(hit) == response);

  const Request miss{"/v1/completions", {{"prompt", "b"}}};
  try {
    (void)replay->send(miss);
    FAIL("expected a miss");
  } catch (const ReplayMiss& e) {
    CHECK(std::string(e.what()).find(miss.key()) != std::string::npos);
    CHECK_FALSE(e.transient());
  }
}

TEST_CASE("replay rejects corrupt fixtures with the line number") {
  const Request r{"/v1/completions", {{"prompt", "a"}}};
  auto line = json::parse(fixture_line(r, json::object()));
  line["key"] = std::string(64, '0');
  std::istringstream in(fixture_line(r, json::object()) + "\n" + line.dump() + "\n");
  CHECK_THROWS_WITH_AS(ReplayBackend::parse(in), doctest::Contains("fixture line 2"), ValidationError);
  std::istringstream garbage("{not json\n");
  CHECK_THROWS_WITH_AS(ReplayBackend::parse(garbage), doctest::Contains("fixture line 1"), ValidationError);
}

TEST_CASE("record then replay reproduces distributions bit for bit") {
  synthetic::SyntheticBackend live;
  RecordingBackend recorder(live);
  const auto cfg = quiet_config();
  const auto bundles = movie_bundles();
  const auto space = scale_space();
  LmClient recording_client(recorder, cfg);
  const auto first = recording_client.distributions(bundles, space, DistributionMode::cover);

  std::stringstream buf;
  recorder.write(buf);
  auto replay = ReplayBackend::parse(buf);
  CHECK(replay->size() == recorder.size());
  LmClient replay_client(*replay, cfg);
  const auto second = replay_client.distributions(bundles, space, DistributionMode::cover);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    REQUIRE(first[i].ok());
    REQUIRE(second[i].ok());
    const auto a = first[i].value->distribution.probabilities();
    const auto b = second[i].value->distribution.probabilities();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }

  std::stringstream again;
  recorder.write(again);
  std::stringstream rerecorded;
  RecordingBackend second_recorder(*replay);
  LmClient c(second_recorder, cfg);
  (void)c.distributions(bundles, space, DistributionMode::cover);
  second_recorder.write(rerecorded);
  CHECK(again.str() == rerecorded.str());
}

TEST_CASE("retries transient failures and returns the same result") {
  synthetic::SyntheticBackend live;
  std::mutex m;
  std::map<std::string, int> attempts;
  FunctionBackend flaky([&](const Request& r) {
    {
      std::lock_guard lock(m);
      if (attempts[r.key()]++ < 2) throw BackendError("HTTP 503", true);
    }
    return live.send(r);
  });
  std::vector<std::chrono::milliseconds> sleeps;
  RetryingBackend retrying(flaky, {3, std::chrono::milliseconds(200), 2.0},
                           [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto cfg = quiet_config();
  LmClient direct(live, cfg);
  BackendConfig serial = cfg;
  serial.max_in_flight = 1;
  LmClient through(retrying, serial);
  const auto bundles = movie_bundles();
  const auto a = direct.distributions(bundles, scale_space(), DistributionMode::next_token);
  const auto b = through.distributions(bundles, scale_space(), DistributionMode::next_token);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(b[i].ok());
    const auto pa = a[i].value->distribution.probabilities();
    const auto pb = b[i].value->distribution.probabilities();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  }
  for (const auto& [_, n] : attempts) CHECK(n == 3);
  REQUIRE(sleeps.size() == 2 * attempts.size());
  CHECK(sleeps[0] == std::chrono::milliseconds(200));
  CHECK(sleeps[1] == std::chrono::milliseconds(400));
}

TEST_CASE("retry gives up after the budget and never retries permanent errors") {
  int calls = 0;
  FunctionBackend down([&](const Request&) -> json {
    ++calls;
    throw BackendError("connection refused", true);
  });
  RetryingBackend r(down, {2, std::chrono::milliseconds(0), 2.0}, [](auto) {});
  try {
    (void)r.send({"/v1/completions", json::object()});
    FAIL("expected failure");
  } catch (const BackendError& e) {
    CHECK_FALSE(e.transient());
    CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
  }
  CHECK(calls == 3);

  calls = 0;
  FunctionBackend rejecting([&](const Request&) -> json {
    ++calls;
    throw BackendError("HTTP 400", false);
  });
  RetryingBackend r2(rejecting, {5, std::chrono::milliseconds(0), 2.0}, [](auto) {});
  CHECK_THROWS_AS(r2.send({"/v1/completions", json::object()}), BackendError);
  CHECK(calls == 1);
}

TEST_CASE("send_all keeps input order, dedupes and bounds concurrency") {
  std::mutex m;
  int in_flight = 0, peak = 0, calls = 0;
  FunctionBackend slow([&](const Request& r) {
    {
      std::lock_guard lock(m);
      ++calls;
      peak = std::max(peak, ++in_flight);
    }
    const auto n = r.body.at("n").get<int>();
    std::this_thread::sleep_for(std::chrono::milliseconds((n * 7) % 5));
    {
      std::lock_guard lock(m);
      --in_flight;
    }
    return json{{"echo", n}};
  });
  std::vector<Request> requests;
  for (int i = 0; i < 24; ++i) requests.push_back({"/x", {{"n", i % 16}}});
  for (int limit : {1, 3, 8}) {
    calls = 0;
    peak = 0;
    const auto out = send_all(slow, requests, limit);
    REQUIRE(out.size() == requests.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].value->at("echo") == static_cast<int>(i % 16));
    CHECK(calls == 16);
    CHECK(peak <= limit);
  }
}

TEST_CASE("max_in_flight 1 and 8 give identical distributions") {
  synthetic::SyntheticBackend live;
  auto cfg = quiet_config();
  cfg.max_in_flight = 1;
  LmClient one(live, cfg);
  cfg.max_in_flight = 8;
  LmClient eight(live, cfg);
  const auto bundles = movie_bundles();
  for (auto mode : {DistributionMode::next_token, DistributionMode::cover}) {
    const auto a = one.distributions(bundles, scale_space(), mode);
    const auto b = eight.distributions(bundles, scale_space(), mode);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto pa = a[i].value->distribution.probabilities();
      const auto pb = b[i].value->distribution.probabilities();
      CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
    }
  }
}

TEST_CASE("cancellation stops dispatch") {
  std::atomic<bool> cancel{true};
  int calls = 0;
  FunctionBackend b([&](const Request&) {
    ++calls;
    return json::object();
  });
  std::vector<Request> requests{{"/x", {{"n", 1}}}, {"/x", {{"n", 2}}}};
  const auto out = send_all(b, requests, 2, &cancel);
  CHECK(calls == 0);
  for (const auto& r : out) {
    CHECK_FALSE(r.ok());
    CHECK(r.message() == "cancelled before dispatch");
  }
}

TEST_CASE("next-token mapping over the scale space") {
  FunctionBackend b([](const Request&) { return wire::next_token({{"9", 0.7}, {"8", 0.2}}); });
  LmClient client(b, quiet_config());
  const auto space = scale_space();
  const auto r = client.next_token_distribution({"", std::nullopt, "q"}, space);
  CHECK(r.answer_found);
  CHECK(r.distribution.prob("9") == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(r.distribution.prob("8") == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.distribution.sentinel_mass() == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("whitespace variants of one answer are summed") {
  FunctionBackend b([](const Request&) { return wire::next_token({{"9", 0.3}, {" 9", 0.4}, {"\n", 0.3}}); });
  LmClient client(b, quiet_config());
  const auto r = client.next_token_distribution({"", std::nullopt, "q"}, scale_space());
  CHECK(r.distribution.prob("9") == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(r.distribution.sentinel_mass() == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("no matching token falls back to the sentinel point mass") {
  FunctionBackend b([](const Request&) { return wire::next_token({{"The", 0.5}, {"I", 0.4}}); });
  LmClient client(b, quiet_config());
  const auto r = client.next_token_distribution({"", std::nullopt, "q"}, scale_space());
  CHECK_FALSE(r.answer_found);
  CHECK(r.distribution.sentinel_mass() == 1.0);

  const auto closed = AnswerSpace::create(std::vector<std::string>{"A", "B"}, false);
  CHECK_THROWS_AS(client.next_token_distribution({"", std::nullopt, "q"}, closed), ValidationError);
}

TEST_CASE("first_token matching credits a unique prefix") {
  FunctionBackend b([](const Request&) { return wire::next_token({{" Mand", 0.6}, {" Eng", 0.3}}); });
  auto cfg = quiet_config();
  cfg.token_match = TokenMatch::first_token;
  LmClient client(b, cfg);
  const auto space = AnswerSpace::create(std::vector<std::string>{"Mandarin Chinese", "English", "Engadine"}, true);
  const auto r = client.next_token_distribution({"", std::nullopt, "q"}, space);
  CHECK(r.distribution.prob("Mandarin Chinese") == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r.distribution.prob("English") == 0.0);
  CHECK(r.distribution.sentinel_mass() == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("malformed next-token responses are backend errors") {
  FunctionBackend unused([](const Request&) { return json::object(); });
  LmClient client(unused, quiet_config());
  CHECK_THROWS_AS((void)client.parse_next_token(json::object()), BackendError);
  CHECK_THROWS_AS((void)client.parse_next_token(json{{"choices", json::array()}}), BackendError);
  auto positive = wire::next_token({{"9", 0.5}});
  positive["choices"][0]["logprobs"]["top_logprobs"][0]["9"] = 0.5;
  CHECK_THROWS_AS((void)client.parse_next_token(positive), BackendError);
}

TEST_CASE("top-k truncation keeps the best entries") {
  FunctionBackend b([](const Request&) {
    return wire::next_token({{"1", 0.05}, {"2", 0.1}, {"3", 0.5}, {"4", 0.25}});
  });
  auto cfg = quiet_config();
  cfg.top_k = 2;
  LmClient client(b, cfg);
  const auto r = client.next_token_distribution({"", std::nullopt, "q"}, scale_space());
  CHECK(r.distribution.prob("3") == doctest::Approx(0.5));
  CHECK(r.distribution.prob("4") == doctest::Approx(0.25));
  CHECK(r.distribution.prob("2") == 0.0);
}

TEST_CASE("answer string probability is the product of its token probabilities") {
  FunctionBackend b([](const Request&) {
    return wire::echo({{"Q", 0}, {":", 0.9}, {"Mand", 0.5}, {"arin", 0.5}, {"\n", 0.2}});
  });
  LmClient client(b, quiet_config());
  CHECK(client.answer_string_probability({"", std::nullopt, "Q:"}, Answer("Mandarin")) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("token spanning the answer boundary is a tokenization failure") {
  FunctionBackend b([](const Request&) { return wire::echo({{"Q", 0}, {": M", 0.9}, {"andarin", 0.5}}); });
  LmClient client(b, quiet_config());
  CHECK_THROWS_WITH_AS(client.answer_string_probability({"", std::nullopt, "Q:"}, Answer("Mandarin")),
                       doctest::Contains("tokenization"), ValidationError);
}

TEST_CASE("cover distribution from answer probabilities") {
  FunctionBackend unused([](const Request&) { return json::object(); });
  LmClient client(unused, quiet_config());
  const auto ab = AnswerSpace::create(std::vector<std::string>{"A", "B"}, true);
  const std::vector<double> fine{0.6, 0.3};
  const auto r = client.from_answer_probabilities(fine, ab);
  CHECK(r.distribution.prob("A") == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r.distribution.prob("B") == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.distribution.sentinel_mass() == doctest::Approx(0.1).epsilon(1e-12));

  const std::vector<double> rounding{0.6, 0.4000005};
  CHECK_NOTHROW((void)client.from_answer_probabilities(rounding, ab));
  const std::vector<double> excess{0.6, 0.6};
  CHECK_THROWS_AS((void)client.from_answer_probabilities(excess, ab), ValidationError);
}

TEST_CASE("cover over a chain-rule-consistent model never exceeds unit mass") {
  synthetic::SyntheticBackend live;
  LmClient client(live, quiet_config());
  const std::vector<std::string> vocab{"Arabic", "Dutch", "English", "French", "German", "Greek", "Mandarin",
                                       "Mandarin Chinese", "Polish", "Spanish", "Klingon", "Japanese"};
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::string> answers;
    for (const auto& v : vocab)
      if (rng() % 2) answers.push_back(v);
    // Drop words that break prefix-freeness.
    std::vector<std::string> kept;
    for (const auto& a : answers) {
      bool clash = false;
      for (const auto& k : kept) clash |= a.rfind(k, 0) == 0 || k.rfind(a, 0) == 0;
      if (!clash) kept.push_back(a);
    }
    if (kept.empty()) continue;
    const auto space = AnswerSpace::create(kept, true);
    const std::string country = trial % 2 ? "France" : "Atlantis";
    const PromptBundle bundle{"", trial % 3 == 0 ? std::optional<std::string>("German is spoken widely. ")
                                                 : std::nullopt,
                              "Q: What is the official language of " + country + "?\nA:"};
    double total = 0.0;
    for (const auto& a : space->answers()) total += client.answer_string_probability(bundle, a);
    CHECK(total <= 1.0 + 1e-6);
    const auto cover = client.cover_distribution(bundle, space);
    double answer_mass = 0.0;
    for (std::size_t i = 0; i < space->answer_count(); ++i) answer_mass += cover.distribution[i];
    CHECK(answer_mass == doctest::Approx(total).epsilon(1e-9));
  }
}

TEST_CASE("single-token answers agree between next-token and cover modes") {
  synthetic::SyntheticBackend live;
  LmClient client(live, quiet_config());
  const auto space = scale_space();
  for (const auto& b : movie_bundles()) {
    const auto nt = client.distribution(b, space, DistributionMode::next_token).distribution;
    const auto cv = client.distribution(b, space, DistributionMode::cover).distribution;
    for (std::size_t i = 0; i < space->size(); ++i) CHECK(nt[i] == doctest::Approx(cv[i]).epsilon(1e-9));
  }
}

TEST_CASE("embedding calls") {
  int calls = 0;
  std::vector<std::vector<std::string>> inputs;
  FunctionBackend b([&](const Request& r) {
    ++calls;
    inputs.push_back(r.body.at("input").get<std::vector<std::string>>());
    std::vector<std::vector<double>> v;
    for (std::size_t i = 0; i < inputs.back().size(); ++i) v.push_back({1.0 * i, 1.0, 0.0, -1.0});
    return wire::embeddings(v);
  });
  LmClient client(b, quiet_config());
  CHECK(client.embed({}).empty());
  CHECK(calls == 0);

  const auto table = client.embed({"river bank", "money bank"});
  CHECK(table.size() == 2);
  CHECK(table.dimension() == 4);
  CHECK(table.at("money bank")[0] == 1.0);

  calls = 0;
  inputs.clear();
  const auto dup = client.embed({"a", "b", "a"});
  CHECK(calls == 1);
  CHECK(inputs.front() == std::vector<std::string>{"a", "b"});
  CHECK(dup.size() == 2);
}

TEST_CASE("embedding responses with bad indices are rejected") {
  FunctionBackend b([](const Request&) {
    return json{{"data", {{{"index", 0}, {"embedding", {1.0}}}, {{"index", 0}, {"embedding", {2.0}}}}}};
  });
  LmClient client(b, quiet_config());
  CHECK_THROWS_AS(client.embed({"x", "y"}), BackendError);
}

TEST_CASE("backend config parsing") {
  ::setenv("TPS_TEST_KEY", "sk-test", 1);
  const auto cfg = parse_backend_config(
      json{{"base_url", "http://localhost:9"}, {"model", "m"}, {"top_k", 5}, {"api_key_env", "TPS_TEST_KEY"},
           {"token_match", "first_token"}, {"residual", "renorm"}});
  CHECK(cfg.base_url == "http://localhost:9");
  CHECK(cfg.top_k == 5);
  CHECK(cfg.api_key == std::optional<std::string>("sk-test"));
  CHECK(cfg.token_match == TokenMatch::first_token);
  CHECK(cfg.residual == ResidualMode::renormalize);
  CHECK_THROWS_AS(parse_backend_config(json{{"api_key", "inline"}}), ValidationError);
  CHECK_THROWS_AS(parse_backend_config(json{{"top_k", 0}}), ValidationError);
}

TEST_CASE("HTTP backend against the synthetic server") {
  auto cfg = quiet_config();
  cfg.retry = {3, std::chrono::milliseconds(1), 2.0};
  const PromptBundle bundle{"Q: ", std::nullopt, "On a scale of 0 to 9, what is the rating of Copper Kingdoms?\nA:"};
  synthetic::SyntheticBackend local;
  LmClient reference(local, cfg);
  const auto expected = reference.distribution(bundle, scale_space(), DistributionMode::next_token).distribution;

  SUBCASE("transient 503s are retried") {
    synthetic::SyntheticServer server({2, 503});
    cfg.base_url = server.url();
    auto http = make_http_backend(cfg);
    LmClient client(*http, cfg);
    const auto got = client.distribution(bundle, scale_space(), DistributionMode::next_token).distribution;
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expected[i]);
    CHECK(server.requests_served() == 3);
  }
  SUBCASE("4xx is permanent") {
    synthetic::SyntheticServer server({1, 404});
    cfg.base_url = server.url();
    auto http = make_http_backend(cfg);
    LmClient client(*http, cfg);
    try {
      (void)client.distribution(bundle, scale_space(), DistributionMode::next_token);
      FAIL("expected an error");
    } catch (const BackendError& e) {
      CHECK_FALSE(e.transient());
    }
    CHECK(server.requests_served() == 1);
  }
  SUBCASE("path prefix in the base URL") {
    synthetic::SyntheticServer server;
    cfg.base_url = server.url() + "/";
    auto http = make_http_backend(cfg);
    CHECK_NOTHROW(http->send(reference.next_token_request("hello")));
  }
  SUBCASE("unreachable server exhausts retries") {
    int port = 0;
    {
      synthetic::SyntheticServer probe;
      port = probe.port();
    }
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.timeout = std::chrono::milliseconds(500);
    auto http = make_http_backend(cfg);
    CHECK_THROWS_WITH_AS(http->send(reference.next_token_request("x")), doctest::Contains("after 4 attempts"),
                         BackendError);
  }
  SUBCASE("bad scheme") {
    cfg.base_url = "ftp://example.invalid";
    CHECK_THROWS_AS(make_http_backend(cfg), ValidationError);
  }
}

#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "tps/errors.hpp"
#include "tps/transport.hpp"

using namespace tps;

namespace {

SpacePtr letters(std::size_t n, bool sentinel = false) {
  std::vector<std::string> a;
  for (std::size_t i = 0; i < n; ++i) a.push_back(std::string(1, static_cast<char>('a' + i)));
  return AnswerSpace::create(a, sentinel);
}

}  // namespace

TEST_CASE("transportation simplex on a textbook instance") {
  // Supplies 20/30/50, demands 30/40/30.
  std::vector<double> supply{20, 30, 50}, demand{30, 40, 30};
  std::vector<double> cost{8, 6, 10, 9, 12, 13, 14, 9, 16};
  auto sol = detail::solve_transportation(supply, demand, cost);
  auto oracle = oracle::vertex_enumeration_optimum(supply, demand, cost);
  REQUIRE(oracle);
  CHECK(sol.objective == doctest::Approx(*oracle).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) {
    double r = 0;
    for (std::size_t j = 0; j < 3; ++j) r += sol.flow[i * 3 + j];
    CHECK(r == doctest::Approx(supply[i]));
  }
}

TEST_CASE("degenerate and zero-mass instances") {
  auto s = letters(3);
  auto p = AnswerDistribution::from_probabilities(s, {0.5, 0.5, 0.0});
  auto q = AnswerDistribution::from_probabilities(s, {0.5, 0.0, 0.5});
  CostMatrix c(s, {0, 1, 2, 1, 0, 1, 2, 1, 0});
  auto r = wasserstein(p, q, c);
  CHECK(r.value == doctest::Approx(0.5));
  CHECK(r.method == TransportMethod::general_lp);
  CHECK(validate_plan(r.plan, p, q).ok());

  auto same = wasserstein(p, p, c);
  CHECK(same.value == 0.0);
}

TEST_CASE("point-mass fast path matches expected cost") {
  std::mt19937_64 rng(7);
  for (int it = 0; it < 50; ++it) {
    const std::size_t n = 2 + it % 8;
    auto s = letters(n);
    auto pv = oracle::random_simplex(rng, n, 0.3);
    std::vector<double> cv(n * n);
    std::uniform_real_distribution<double> u(0, 3);
    for (auto& x : cv) x = u(rng);
    auto p = AnswerDistribution::from_probabilities(s, pv);
    CostMatrix c(s, cv);
    const std::size_t t = static_cast<std::size_t>(it) % n;
    auto fast = wasserstein_to_point_mass(p, t, c);
    CHECK(fast.method == TransportMethod::point_mass);
    CHECK(fast.value == doctest::Approx(oracle::expected_cost_to_point(
                                            std::vector<double>(p.probabilities().begin(), p.probabilities().end()),
                                            t, cv))
                            .epsilon(1e-12));
    auto lp = wasserstein(p, AnswerDistribution::point_mass(s, t), c);
    CHECK(std::abs(lp.value - fast.value) < 1e-12);
  }
}

TEST_CASE("1-D ordinal path against CDF formula and LP") {
  auto scale = ScaleMap::integer_range(1, 5);
  auto s = AnswerSpace::create(scale.labels(), true);
  auto p = build_distribution(s, {{"1", 0.5}, {"5", 0.5}});
  auto q = build_distribution(s, {{"3", 1.0}});
  auto r = wasserstein_1d_ordinal(p, q, scale);
  CHECK(r.method == TransportMethod::ordinal_1d);
  CHECK(r.value == doctest::Approx(0.5));
  CHECK(validate_plan(r.plan, p, q).ok());
  auto lp = wasserstein(p, q, ordinal_cost(s, scale));
  CHECK(lp.value == doctest::Approx(0.5));

  auto with_sentinel = build_distribution(s, {{"3", 0.5}});
  CHECK_THROWS_AS(wasserstein_1d_ordinal(with_sentinel, q, scale), ValidationError);
}

TEST_CASE("plan utilities") {
  auto s = letters(2);
  auto p = AnswerDistribution::from_probabilities(s, {0.5, 0.5});
  auto q = AnswerDistribution::point_mass(s, std::size_t{0});
  TransportPlan bad(s, {0.5, 0.0, 0.25, 0.25});
  auto report = validate_plan(bad, p, q);
  CHECK_FALSE(report.ok());
  TransportPlan good(s, {0.5, 0.0, 0.5, 0.0});
  CHECK(validate_plan(good, p, q).ok());
  CHECK(plan_cost(good, CostMatrix(s, {0, 1, 2, 0})) == doctest::Approx(1.0));

  std::ostringstream out;
  write_plan_csv(good, out);
  CHECK(out.str() == "source,destination,mass\na,a,0.5\nb,a,0.5\n");
}

TEST_CASE("solver rejects mismatched inputs") {
  auto s = letters(2);
  auto t = letters(3);
  auto p = AnswerDistribution::from_probabilities(s, {0.5, 0.5});
  auto q = AnswerDistribution::from_probabilities(t, {0.5, 0.5, 0.0});
  CHECK_THROWS_AS(wasserstein(p, q, CostMatrix::zeros(s)), ValidationError);
  CHECK_THROWS_AS(wasserstein(p, p, CostMatrix::zeros(s), SolverOptions{1}), ValidationError);
}

TEST_CASE("random instances agree with vertex enumeration") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int it = 0; it < 40; ++it) {
    const std::size_t m = 2 + it % 3, n = 2 + (it / 3) % 3;
    auto supply = oracle::grid_simplex(rng, m, 8);
    auto demand = oracle::grid_simplex(rng, n, 8);
    std::vector<double> cost(m * n);
    for (auto& x : cost) x = u(rng);
    auto sol = detail::solve_transportation(supply, demand, cost);
    auto ref = oracle::vertex_enumeration_optimum(supply, demand, cost);
    REQUIRE(ref);
    CHECK(std::abs(sol.objective - *ref) < 1e-9);
  }
}

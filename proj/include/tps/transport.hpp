#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tps/answer_space.hpp"
#include "tps/cost.hpp"

namespace tps {

inline constexpr double kFeasibilityTolerance = 1e-8;

/// Joint mass over (source, destination) outcome pairs of one space.
class TransportPlan {
 public:
  TransportPlan(SpacePtr space, std::vector<double> mass);

  [[nodiscard]] double operator()(std::size_t from, std::size_t to) const { return mass_[from * n_ + to]; }
  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] const AnswerSpace& space() const noexcept { return *space_; }
  [[nodiscard]] const SpacePtr& space_ptr() const noexcept { return space_; }
  [[nodiscard]] std::span<const double> mass() const noexcept { return mass_; }
  [[nodiscard]] double row_sum(std::size_t from) const;
  [[nodiscard]] double col_sum(std::size_t to) const;

 private:
  SpacePtr space_;
  std::size_t n_;
  std::vector<double> mass_;
};

enum class TransportMethod { general_lp, point_mass, ordinal_1d };

std::string_view to_string(TransportMethod method);

struct WassersteinResult {
  double value = 0.0;
  TransportPlan plan;
  TransportMethod method = TransportMethod::general_lp;
};

struct SolverOptions {
  std::size_t max_support = 1024;
};

/// Exact optimum of the transportation linear program between p and q under
/// cost c. Transportation simplex started from the north-west corner, with
/// Bland's rule for entering and leaving cells, so results are deterministic.
WassersteinResult wasserstein(const AnswerDistribution& p, const AnswerDistribution& q, const CostMatrix& c,
                              const SolverOptions& options = {});

/// With a point-mass destination the only feasible plan sends p(x) from every
/// x to the target; the value is the p-expectation of c(., target).
WassersteinResult wasserstein_to_point_mass(const AnswerDistribution& p, std::size_t target, const CostMatrix& c);

/// CDF identity for the normalized absolute-difference cost. Both inputs must
/// put zero mass on the sentinel and on answers off the scale.
WassersteinResult wasserstein_1d_ordinal(const AnswerDistribution& p, const AnswerDistribution& q,
                                         const ScaleMap& scale);

struct PlanReport {
  std::vector<std::string> violations;

  [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
  explicit operator bool() const noexcept { return ok(); }
};

/// Checks row marginals against p, column marginals against q and
/// nonnegativity, at the given absolute tolerance.
PlanReport validate_plan(const TransportPlan& plan, const AnswerDistribution& p, const AnswerDistribution& q,
                         double tolerance = kFeasibilityTolerance);

double plan_cost(const TransportPlan& plan, const CostMatrix& c);

/// "source,destination,mass" rows for every nonzero cell.
void write_plan_csv(const TransportPlan& plan, std::ostream& out);

namespace detail {

struct TransportationSolution {
  std::vector<double> flow;  // row-major rows x cols
  double objective = 0.0;
  std::size_t pivots = 0;
};

/// Solves min sum c_ij x_ij s.t. row sums = supply, col sums = demand, x >= 0.
/// supply and demand must have equal totals (up to rounding).
TransportationSolution solve_transportation(std::span<const double> supply, std::span<const double> demand,
                                            std::span<const double> cost);

}  // namespace detail

}  // namespace tps

#include "tps/transport.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "tps/csv.hpp"
#include "tps/errors.hpp"

namespace tps {

TransportPlan::TransportPlan(SpacePtr space, std::vector<double> mass)
    : space_(std::move(space)), n_(space_ ? space_->size() : 0), mass_(std::move(mass)) {
  if (!space_ || mass_.size() != n_ * n_) throw ValidationError("transport plan shape does not match the answer space");
}

double TransportPlan::row_sum(std::size_t from) const {
  double s = 0.0;
  for (std::size_t j = 0; j < n_; ++j) s += mass_[from * n_ + j];
  return s;
}

double TransportPlan::col_sum(std::size_t to) const {
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) s += mass_[i * n_ + to];
  return s;
}

std::string_view to_string(TransportMethod method) {
  switch (method) {
    case TransportMethod::general_lp: return "general_lp";
    case TransportMethod::point_mass: return "point_mass";
    case TransportMethod::ordinal_1d: return "ordinal_1d";
  }
  return "unknown";
}

namespace detail {

namespace {

// Basis of the transportation tableau as a spanning tree over m row nodes
// (0..m-1) and n column nodes (m..m+n-1); every basic cell is an edge.
class BasisTree {
 public:
  BasisTree(std::size_t m, std::size_t n) : m_(m), n_(n), adj_(m + n), is_basic_(m * n, 0) {}

  void add(std::size_t i, std::size_t j) {
    is_basic_[i * n_ + j] = 1;
    adj_[i].push_back(m_ + j);
    adj_[m_ + j].push_back(i);
  }

  void remove(std::size_t i, std::size_t j) {
    is_basic_[i * n_ + j] = 0;
    erase_one(adj_[i], m_ + j);
    erase_one(adj_[m_ + j], i);
  }

  [[nodiscard]] bool basic(std::size_t cell) const { return is_basic_[cell] != 0; }
  [[nodiscard]] const std::vector<std::size_t>& neighbors(std::size_t node) const { return adj_[node]; }

 private:
  static void erase_one(std::vector<std::size_t>& v, std::size_t value) {
    auto it = std::find(v.begin(), v.end(), value);
    if (it != v.end()) v.erase(it);
  }

  std::size_t m_, n_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<char> is_basic_;
};

}  // namespace

TransportationSolution solve_transportation(std::span<const double> supply, std::span<const double> demand,
                                            std::span<const double> cost) {
  const std::size_t m = supply.size();
  const std::size_t n = demand.size();
  if (m == 0 || n == 0) throw ValidationError("transportation problem has no rows or columns");
  if (cost.size() != m * n) throw ValidationError("transportation cost has the wrong shape");

  TransportationSolution sol;
  sol.flow.assign(m * n, 0.0);
  auto& x = sol.flow;
  BasisTree tree(m, n);

  // North-west corner staircase: exactly m + n - 1 cells, connected and acyclic.
  {
    std::vector<double> rs(supply.begin(), supply.end());
    std::vector<double> cd(demand.begin(), demand.end());
    std::size_t i = 0, j = 0;
    while (true) {
      const double a = std::max(0.0, std::min(rs[i], cd[j]));
      x[i * n + j] = a;
      tree.add(i, j);
      rs[i] -= a;
      cd[j] -= a;
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1) {
        ++j;
      } else if (j == n - 1) {
        ++i;
      } else if (rs[i] <= cd[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  double max_cost = 0.0;
  for (double c : cost) max_cost = std::max(max_cost, std::abs(c));
  const double tol = 1e-12 * std::max(1.0, max_cost);

  std::vector<double> u(m), v(n);
  std::vector<char> seen(m + n);
  std::vector<std::size_t> parent(m + n);
  std::vector<std::size_t> stack;
  stack.reserve(m + n);
  const std::size_t max_pivots = 100 * m * n + 10000;

  auto cell_of = [&](std::size_t a, std::size_t b) {
    const std::size_t row = std::min(a, b);
    const std::size_t col = std::max(a, b) - m;
    return row * n + col;
  };

  while (true) {
    // Dual potentials: u_i + v_j = c_ij on basic cells, u_0 = 0.
    std::fill(seen.begin(), seen.end(), 0);
    u[0] = 0.0;
    seen[0] = 1;
    stack.assign(1, 0);
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (std::size_t nb : tree.neighbors(node)) {
        if (seen[nb]) continue;
        seen[nb] = 1;
        if (node < m) {
          v[nb - m] = cost[node * n + (nb - m)] - u[node];
        } else {
          u[nb] = cost[nb * n + (node - m)] - v[node - m];
        }
        stack.push_back(nb);
      }
    }

    // Bland: the lowest-index cell with negative reduced cost enters.
    std::size_t entering = m * n;
    for (std::size_t cell = 0; cell < m * n; ++cell) {
      if (tree.basic(cell)) continue;
      const std::size_t i = cell / n, j = cell % n;
      if (cost[cell] - u[i] - v[j] < -tol) {
        entering = cell;
        break;
      }
    }
    if (entering == m * n) break;
    if (++sol.pivots > max_pivots) throw std::runtime_error("transportation simplex exceeded its pivot limit");

    const std::size_t ei = entering / n, ej = entering % n;

    // Tree path from row ei to column ej closes the entering cycle.
    std::fill(seen.begin(), seen.end(), 0);
    seen[ei] = 1;
    stack.assign(1, ei);
    const std::size_t goal = m + ej;
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      if (node == goal) break;
      for (std::size_t nb : tree.neighbors(node)) {
        if (seen[nb]) continue;
        seen[nb] = 1;
        parent[nb] = node;
        stack.push_back(nb);
      }
    }

    // Walking back from the column, cycle cells alternate -, +, -, ..., -.
    std::vector<std::size_t> minus_cells, plus_cells;
    bool minus = true;
    for (std::size_t node = goal; node != ei; node = parent[node]) {
      const std::size_t cell = cell_of(node, parent[node]);
      (minus ? minus_cells : plus_cells).push_back(cell);
      minus = !minus;
    }

    std::size_t leaving = minus_cells.front();
    for (std::size_t cell : minus_cells) {
      if (x[cell] < x[leaving] || (x[cell] == x[leaving] && cell < leaving)) leaving = cell;
    }
    const double theta = x[leaving];
    for (std::size_t cell : minus_cells) x[cell] -= theta;
    for (std::size_t cell : plus_cells) x[cell] += theta;
    x[entering] = theta;
    x[leaving] = 0.0;
    tree.remove(leaving / n, leaving % n);
    tree.add(ei, ej);
  }

  sol.objective = 0.0;
  for (std::size_t cell = 0; cell < m * n; ++cell) sol.objective += x[cell] * cost[cell];
  return sol;
}

}  // namespace detail

namespace {

void require_shared_space(const AnswerDistribution& p, const AnswerDistribution& q, const CostMatrix& c) {
  if (!same_space(p.space_ptr(), q.space_ptr()) || !same_space(p.space_ptr(), c.space_ptr()))
    throw ValidationError("distributions and cost matrix must share one answer space");
}

}  // namespace

double plan_cost(const TransportPlan& plan, const CostMatrix& c) {
  if (!same_space(plan.space_ptr(), c.space_ptr())) throw ValidationError("plan and cost matrix spaces differ");
  double total = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i)
    for (std::size_t j = 0; j < plan.size(); ++j) total += plan(i, j) * c(i, j);
  return total;
}

WassersteinResult wasserstein(const AnswerDistribution& p, const AnswerDistribution& q, const CostMatrix& c,
                              const SolverOptions& options) {
  require_shared_space(p, q, c);
  if (p.size() > options.max_support) {
    throw ValidationError("support of size " + std::to_string(p.size()) + " exceeds the solver cap of " +
                          std::to_string(options.max_support));
  }
  auto sol = detail::solve_transportation(p.probabilities(), q.probabilities(), c.entries());
  TransportPlan plan(p.space_ptr(), std::move(sol.flow));
  const double value = plan_cost(plan, c);
  return WassersteinResult{std::max(0.0, value), std::move(plan), TransportMethod::general_lp};
}

WassersteinResult wasserstein_to_point_mass(const AnswerDistribution& p, std::size_t target, const CostMatrix& c) {
  if (!same_space(p.space_ptr(), c.space_ptr())) throw ValidationError("distribution and cost matrix spaces differ");
  const auto n = p.size();
  if (target >= n) throw ValidationError("point-mass target is outside the answer space");
  std::vector<double> mass(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) mass[i * n + target] = p[i];
  TransportPlan plan(p.space_ptr(), std::move(mass));
  const double value = plan_cost(plan, c);
  return WassersteinResult{value, std::move(plan), TransportMethod::point_mass};
}

WassersteinResult wasserstein_1d_ordinal(const AnswerDistribution& p, const AnswerDistribution& q,
                                         const ScaleMap& scale) {
  if (!same_space(p.space_ptr(), q.space_ptr())) throw ValidationError("distributions must share one answer space");
  if (p.sentinel_mass() != 0.0 || q.sentinel_mass() != 0.0)
    throw ValidationError("1-D ordinal transport needs zero sentinel mass");
  if (scale.span() <= 0) throw ValidationError("ordinal transport needs a scale with nonzero span");
  const auto& space = p.space();
  for (std::size_t i = 0; i < space.answer_count(); ++i) {
    if ((p[i] != 0.0 || q[i] != 0.0) && !scale.numeric(space.answers()[i].text()))
      throw ValidationError("answer \"" + space.answers()[i].text() + "\" carries mass but is off the scale");
  }

  // Scale points present in the space, ascending.
  std::vector<std::size_t> order;
  std::vector<int> values;
  for (const auto& [answer, numeric] : scale.entries()) {
    if (auto idx = space.index_of(answer.text())) {
      order.push_back(*idx);
      values.push_back(numeric);
    }
  }
  const double span = static_cast<double>(scale.span());

  double value = 0.0;
  double cdf_p = 0.0, cdf_q = 0.0;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    cdf_p += p[order[k]];
    cdf_q += q[order[k]];
    value += std::abs(cdf_p - cdf_q) * static_cast<double>(values[k + 1] - values[k]);
  }
  value /= span;

  // Monotone (quantile) coupling along the scale order.
  const auto n = p.size();
  std::vector<double> mass(n * n, 0.0);
  if (!order.empty()) {
    std::vector<double> rs, cd;
    for (auto idx : order) {
      rs.push_back(p[idx]);
      cd.push_back(q[idx]);
    }
    std::size_t a = 0, b = 0;
    const std::size_t last = order.size() - 1;
    while (true) {
      const double moved = std::max(0.0, std::min(rs[a], cd[b]));
      mass[order[a] * n + order[b]] += moved;
      rs[a] -= moved;
      cd[b] -= moved;
      if (a == last && b == last) break;
      if (a == last) {
        ++b;
      } else if (b == last) {
        ++a;
      } else if (rs[a] <= cd[b]) {
        ++a;
      } else {
        ++b;
      }
    }
  }
  return WassersteinResult{value, TransportPlan(p.space_ptr(), std::move(mass)), TransportMethod::ordinal_1d};
}

PlanReport validate_plan(const TransportPlan& plan, const AnswerDistribution& p, const AnswerDistribution& q,
                         double tolerance) {
  PlanReport report;
  if (!same_space(plan.space_ptr(), p.space_ptr()) || !same_space(plan.space_ptr(), q.space_ptr())) {
    report.violations.emplace_back("plan and marginals use different answer spaces");
    return report;
  }
  const auto& space = plan.space();
  std::ostringstream msg;
  msg.precision(17);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (std::size_t j = 0; j < plan.size(); ++j) {
      if (plan(i, j) < -tolerance) {
        msg.str("");
        msg << "nonnegativity: mass(" << space.label(i) << ", " << space.label(j) << ") = " << plan(i, j);
        report.violations.push_back(msg.str());
      }
    }
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const double r = plan.row_sum(i);
    if (std::abs(r - p[i]) > tolerance) {
      msg.str("");
      msg << "row marginal: outcome " << space.label(i) << " sends " << r << ", expected " << p[i];
      report.violations.push_back(msg.str());
    }
  }
  for (std::size_t j = 0; j < plan.size(); ++j) {
    const double col = plan.col_sum(j);
    if (std::abs(col - q[j]) > tolerance) {
      msg.str("");
      msg << "column marginal: outcome " << space.label(j) << " receives " << col << ", expected " << q[j];
      report.violations.push_back(msg.str());
    }
  }
  return report;
}

void write_plan_csv(const TransportPlan& plan, std::ostream& out) {
  csv::write_row(out, {"source", "destination", "mass"});
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (std::size_t j = 0; j < plan.size(); ++j) {
      if (plan(i, j) == 0.0) continue;
      csv::write_row(out, {plan.space().label(i), plan.space().label(j), csv::format_double(plan(i, j))});
    }
  }
}

}  // namespace tps

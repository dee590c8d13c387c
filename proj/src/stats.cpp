#include "tps/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tps/errors.hpp"

namespace tps::stats {

namespace {

void require_nonempty(std::span<const double> values, const char* what) {
  if (values.empty()) throw ValidationError(std::string(what) + " of an empty sequence");
}

void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("sequences have different lengths");
}

}  // namespace

double median(std::span<const double> values) {
  require_nonempty(values, "median");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

OutlierReport mad_outliers(std::span<const double> values, MadOptions options) {
  require_nonempty(values, "MAD");
  OutlierReport report;
  report.threshold_multiplier = options.multiplier;
  report.median = median(values);
  std::vector<double> dev(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - report.median);
  report.mad = median(dev);
  report.flags.assign(values.size(), false);
  if (report.mad > 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) report.flags[i] = dev[i] > options.multiplier * report.mad;
  } else {
    report.degenerate = true;
    if (options.degenerate_rule) {
      for (std::size_t i = 0; i < values.size(); ++i) report.flags[i] = values[i] != report.median;
    }
  }
  return report;
}

double mean(std::span<const double> values) {
  require_nonempty(values, "mean");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("sample variance needs at least two values");
  const double m = mean(values);
  double ss = 0.0;
  for (double x : values) ss += (x - m) * (x - m);
  return ss / static_cast<double>(values.size() - 1);
}

double population_variance(std::span<const double> values) {
  const double m = mean(values);
  double ss = 0.0;
  for (double x : values) ss += (x - m) * (x - m);
  return ss / static_cast<double>(values.size());
}

double quantile(std::span<const double> values, double q) {
  require_nonempty(values, "quantile");
  if (q < 0.0 || q > 1.0) throw ValidationError("quantile level outside [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  require_same_length(xs, ys);
  if (xs.size() < 2) throw ValidationError("correlation needs at least two pairs");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlation of a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  require_same_length(xs, ys);
  if (xs.size() < 2) throw ValidationError("correlation needs at least two pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  constexpr int max_iter = 10000;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw ValidationError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw ValidationError("incomplete beta needs positive shape parameters");
  if (x < 0.0 || x > 1.0) throw ValidationError("incomplete beta argument outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

namespace {

// P(T > t).
double student_t_upper(double t, double dof) {
  if (dof <= 0.0) throw ValidationError("t distribution needs positive degrees of freedom");
  if (std::isnan(t)) return t;
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  // P(T > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2) / 2.
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
  return t >= 0.0 ? tail : 1.0 - tail;
}

}  // namespace

double student_t_cdf(double t, double dof) { return 1.0 - student_t_upper(t, dof); }

TTestResult t_test_one_sided(std::span<const double> values, double mu0, Tail tail) {
  if (values.size() < 2) throw ValidationError("t-test needs at least two values");
  const double var = sample_variance(values);
  if (!(var > 0.0)) throw ValidationError("t-test on a sample with zero variance");
  const double n = static_cast<double>(values.size());
  TTestResult r;
  r.dof = n - 1.0;
  r.t = (mean(values) - mu0) / std::sqrt(var / n);
  r.p_value = student_t_upper(tail == Tail::greater ? r.t : -r.t, r.dof);
  return r;
}

std::vector<bool> bonferroni(std::span<const double> p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  std::vector<bool> flags(p_values.size(), false);
  const double threshold = alpha / static_cast<double>(p_values.size());
  for (std::size_t i = 0; i < p_values.size(); ++i) flags[i] = p_values[i] < threshold;
  return flags;
}

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  require_same_length(predicted, actual);
  require_nonempty(predicted, "RMSE");
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) ss += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
  return std::sqrt(ss / static_cast<double>(predicted.size()));
}

std::optional<double> ols_slope(std::span<const double> xs, std::span<const double> ys) {
  require_same_length(xs, ys);
  if (xs.size() < 2) return std::nullopt;
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

}  // namespace tps::stats

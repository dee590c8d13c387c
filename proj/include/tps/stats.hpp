#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace tps::stats {

struct MadOptions {
  double multiplier = 3.0;
  /// With MAD = 0, flag every value that differs from the median. When off,
  /// a zero MAD flags nothing.
  bool degenerate_rule = true;
};

struct OutlierReport {
  double median = 0.0;
  double mad = 0.0;
  double threshold_multiplier = 3.0;
  std::vector<bool> flags;
  bool degenerate = false;
};

/// Flags |x_i - median| > multiplier * MAD. The raw MAD is used, without a
/// normal-consistency constant.
OutlierReport mad_outliers(std::span<const double> values, MadOptions options = {});

double median(std::span<const double> values);
double mean(std::span<const double> values);
/// Unbiased (n - 1) variance.
double sample_variance(std::span<const double> values);
/// Divides by n.
double population_variance(std::span<const double> values);
/// Linear interpolation between order statistics (R type 7).
double quantile(std::span<const double> values, double q);

/// 1-based ranks, ties receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);
double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);

enum class Tail { greater, less };

struct TTestResult {
  double t = 0.0;
  double p_value = 0.0;
  double dof = 0.0;
};

/// One-sample t-test of mean > mu0 (greater) or mean < mu0 (less).
/// Throws tps::ValidationError for n < 2 or zero sample variance.
TTestResult t_test_one_sided(std::span<const double> values, double mu0, Tail tail);

/// flag_i = p_i < alpha / n.
std::vector<bool> bonferroni(std::span<const double> p_values, double alpha);

double rmse(std::span<const double> predicted, std::span<const double> actual);

/// Least-squares slope of y on x with an intercept; nullopt when x is constant.
std::optional<double> ols_slope(std::span<const double> xs, std::span<const double> ys);

}  // namespace tps::stats

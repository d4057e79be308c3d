#pragma once

#include <span>
#include <vector>

namespace bvmdesign {

double normal_cdf(double x);
/// Upper tail 1 - Phi(x), accurate far into the tail.
double normal_sf(double x);
/// Phi^-1(p) for p in (0, 1).
double normal_quantile(double p);
/// Quantile of the chi-squared distribution with `df` degrees of freedom.
double chi_squared_quantile(double df, double p);

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator). Zero for fewer than 2 values.
double sample_sd(std::span<const double> x);
double sample_variance(std::span<const double> x);

/// Type-7 (linear interpolation) sample quantile. `sorted` must be ascending.
double quantile_sorted(std::span<const double> sorted, double p);
/// Sorts a copy and evaluates each requested probability.
std::vector<double> quantiles(std::span<const double> x, std::span<const double> probs);

}  // namespace bvmdesign

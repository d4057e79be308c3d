#include "bvmdesign/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "bvmdesign/error.hpp"

namespace bvmdesign {

double normal_cdf(double x) {
    if (std::isnan(x)) return x;
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double normal_sf(double x) {
    if (std::isnan(x)) return x;
    return 0.5 * std::erfc(x / std::sqrt(2.0));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw InvalidParameter("normal_quantile: probability must lie in (0, 1)");
    }
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, p);
}

double chi_squared_quantile(double df, double p) {
    if (!(df > 0.0) || !(p > 0.0 && p < 1.0)) {
        throw InvalidParameter("chi_squared_quantile: need df > 0 and p in (0, 1)");
    }
    return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), p);
}

double mean(std::span<const double> x) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

double sample_sd(std::span<const double> x) { return std::sqrt(sample_variance(x)); }

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidSize("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameter("quantile probability outside [0, 1]");
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> quantiles(std::span<const double> x, std::span<const double> probs) {
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(probs.size());
    for (double p : probs) out.push_back(quantile_sorted(sorted, p));
    return out;
}

}  // namespace bvmdesign

#pragma once

// Small models with closed-form Fisher information, used as oracles.

#include <cmath>
#include <limits>
#include <random>

#include "bvmdesign/error.hpp"
#include "bvmdesign/model.hpp"
#include "bvmdesign/random.hpp"

namespace harness {

using namespace bvmdesign;

// y ~ N(mu, sigma^2) with sigma known; psi = mu, lambda = sigma.
class NormalMeanModel final : public Model {
  public:
    explicit NormalMeanModel(double sigma = 2.0) : sigma_(sigma) {}

    std::string id() const override { return "normal-mean"; }
    const std::vector<std::string>& parameter_names() const override {
        static const std::vector<std::string> names{"mu"};
        return names;
    }
    double psi(const ParameterPoint& theta) const override { return theta[0]; }
    std::size_t psi_coordinate() const override { return 0; }

    Dataset simulate(const ParameterPoint& theta, std::size_t n, std::uint64_t seed) const override {
        Rng rng(seed);
        std::normal_distribution<double> z;
        Dataset d(id(), {"y"});
        for (std::size_t i = 0; i < n; ++i) {
            const double y = theta[0] + sigma_ * z(rng);
            d.append(std::span<const double>(&y, 1));
        }
        return d;
    }
    double log_likelihood(const ParameterPoint& theta, const Dataset& data) const override {
        double ll = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) {
            const double e = (data.at(r, 0) - theta[0]) / sigma_;
            ll -= 0.5 * e * e;
        }
        return ll;
    }

    const std::vector<std::string>& analysis_names() const override { return parameter_names(); }
    std::size_t analysis_psi_index() const override { return 0; }
    AnalysisPrior default_analysis_prior() const override { return {{0.0}, {10.0}}; }
    LogDensityFn analysis_log_likelihood(const Dataset& data) const override {
        double n = 0.0, s = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) {
            n += 1.0;
            s += data.at(r, 0);
        }
        const double ybar = s / n, prec = n / (sigma_ * sigma_);
        return [ybar, prec](std::span<const double> x) { return -0.5 * prec * (x[0] - ybar) * (x[0] - ybar); };
    }

  private:
    double sigma_;
};

// y ~ Bernoulli(p); psi = p, lambda = sqrt(p (1 - p)).
class BernoulliMeanModel final : public Model {
  public:
    std::string id() const override { return "bernoulli-mean"; }
    const std::vector<std::string>& parameter_names() const override {
        static const std::vector<std::string> names{"p"};
        return names;
    }
    void validate(const ParameterPoint& theta) const override {
        check_dimension(theta);
        if (!(theta[0] > 0.0 && theta[0] < 1.0)) throw InvalidParameter("p must lie in (0, 1)");
    }
    double psi(const ParameterPoint& theta) const override { return theta[0]; }
    std::size_t psi_coordinate() const override { return 0; }

    Dataset simulate(const ParameterPoint& theta, std::size_t n, std::uint64_t seed) const override {
        validate(theta);
        Rng rng(seed);
        std::bernoulli_distribution b(theta[0]);
        Dataset d(id(), {"y"});
        for (std::size_t i = 0; i < n; ++i) {
            const double y = b(rng) ? 1.0 : 0.0;
            d.append(std::span<const double>(&y, 1));
        }
        return d;
    }
    double log_likelihood(const ParameterPoint& theta, const Dataset& data) const override {
        double ll = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) {
            ll += data.at(r, 0) > 0.5 ? std::log(theta[0]) : std::log1p(-theta[0]);
        }
        return ll;
    }

    const std::vector<std::string>& analysis_names() const override { return parameter_names(); }
    std::size_t analysis_psi_index() const override { return 0; }
    AnalysisPrior default_analysis_prior() const override { return {{0.5}, {10.0}}; }
    LogDensityFn analysis_log_likelihood(const Dataset& data) const override {
        double n = 0.0, k = 0.0;
        for (std::size_t r = 0; r < data.rows(); ++r) {
            n += 1.0;
            k += data.at(r, 0);
        }
        return [n, k](std::span<const double> x) {
            const double p = x[0];
            if (!(p > 0.0 && p < 1.0)) return -std::numeric_limits<double>::infinity();
            return k * std::log(p) + (n - k) * std::log1p(-p);
        };
    }
};

inline ModelSpec normal_spec(double sigma = 2.0, double psi0 = 0.0) {
    return {std::make_shared<NormalMeanModel>(sigma), {psi0}};
}

inline ModelSpec bernoulli_spec(double psi0 = 0.5) { return {std::make_shared<BernoulliMeanModel>(), {psi0}}; }

}  // namespace harness

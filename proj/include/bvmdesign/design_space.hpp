#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvmdesign/model.hpp"
#include "bvmdesign/posterior.hpp"

namespace bvmdesign {

/// Maximin Latin hypercube: `candidates` seeded random LHDs are generated and
/// the one with the largest minimum pairwise distance (on the unit-scaled box)
/// is returned.
std::vector<ParameterPoint> lhs(const DesignBox& box, std::size_t k, std::uint64_t seed,
                                std::size_t candidates = 100);

enum class LambdaEstimator {
    sd_of_posterior_means,  ///< sqrt(n) * sd over replicates of the posterior mean of psi
    mean_of_posterior_sds,  ///< mean over replicates of sqrt(n) * posterior sd of psi
};

std::string to_string(LambdaEstimator kind);
LambdaEstimator parse_lambda_estimator(const std::string& s);

struct LambdaEstimate {
    ParameterPoint theta;
    double lambda_hat = 0.0;
    double mc_se = 0.0;
    std::size_t n_used = 0;
    std::size_t R_used = 0;
    std::size_t failures = 0;
    LambdaEstimator estimator_kind = LambdaEstimator::sd_of_posterior_means;
};

/// Replicated simulation + posterior fitting at theta. mc_se is the sd of 200
/// nonparametric bootstrap resamples of the replicate-level statistic.
LambdaEstimate estimate_lambda(const Model& model, const AnalysisPrior& prior,
                               const ParameterPoint& theta, std::size_t n, std::size_t R,
                               LambdaEstimator kind, const McmcConfig& mcmc, std::uint64_t seed);

struct TrainingSet {
    std::string model_id;
    std::vector<std::string> parameter_names;
    std::size_t n = 0;
    std::size_t R = 0;
    std::uint64_t seed = 0;
    LambdaEstimator estimator_kind = LambdaEstimator::sd_of_posterior_means;
    std::vector<LambdaEstimate> rows;

    /// columns: parameters..., lambda_hat, mc_se, n, R, estimator
    void write_csv(std::ostream& os) const;
    nlohmann::json provenance() const;

    static TrainingSet read_csv(const std::string& path);
    static TrainingSet parse_csv(const std::string& text, const std::string& origin = "<memory>");
};

TrainingSet build_training_set(const Model& model, const AnalysisPrior& prior, const DesignBox& box,
                               std::size_t k, std::size_t n, std::size_t R, LambdaEstimator kind,
                               const McmcConfig& mcmc, std::uint64_t seed);

}  // namespace bvmdesign

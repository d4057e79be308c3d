#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvmdesign/model.hpp"

namespace bvmdesign {

struct McmcConfig {
    std::size_t n_iterations = 3000;  ///< per chain, including burn-in
    std::size_t n_burnin = 1000;
    std::size_t n_chains = 1;
    double proposal_scale = 0.25;     ///< initial random-walk sd, all components
    double target_acceptance = 0.44;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t retained_per_chain() const { return n_iterations - n_burnin; }

    static McmcConfig from_json(const nlohmann::json& j);
    static McmcConfig from_json(const nlohmann::json& j, McmcConfig base);
    nlohmann::json to_json() const;
};

struct PosteriorDraws {
    std::vector<std::string> names;
    std::size_t n_chains = 0;
    std::size_t draws_per_chain = 0;
    /// Retained draws, row-major: chain 0 rows first, then chain 1, ...
    std::vector<double> draws;
    std::vector<double> psi;
    std::vector<double> acceptance_rate;  ///< post-burn-in, per parameter
    std::vector<double> proposal_scale;   ///< frozen scales after adaptation
    std::vector<double> rhat;             ///< split-R-hat per parameter
    bool convergence_warning = false;

    std::size_t rows() const { return n_chains * draws_per_chain; }
    std::size_t cols() const { return names.size(); }
    double at(std::size_t row, std::size_t col) const { return draws[row * cols() + col]; }
    std::vector<double> column(std::size_t col) const;

    void write_csv(std::ostream& os) const;
    nlohmann::json diagnostics_json() const;
};

/// Adaptive componentwise random-walk Metropolis within Gibbs on an arbitrary
/// log posterior. Chains start at `init`. Proposal scales are tuned towards
/// the target acceptance during burn-in and frozen afterwards.
PosteriorDraws sample_posterior(const LogDensityFn& log_posterior, std::vector<std::string> names,
                                std::size_t psi_index, std::span<const double> init,
                                const McmcConfig& config);

/// Posterior of the model's analysis parameters given data, started at the
/// prior mean.
PosteriorDraws fit_posterior(const Model& model, const Dataset& data, const AnalysisPrior& prior,
                             const McmcConfig& config);

/// Fraction of psi draws strictly greater than psi0.
double tau(std::span<const double> psi_draws, double psi0);
double tau(const PosteriorDraws& draws, double psi0);

struct PosteriorSummary {
    double mean = 0.0;
    double sd = 0.0;
    std::vector<double> quantiles;
};

inline constexpr std::array<double, 3> kDefaultSummaryProbs{0.025, 0.5, 0.975};

/// Mean, sd and quantiles of psi draws. Needs at least 100 draws and
/// probabilities strictly inside (0, 1).
PosteriorSummary posterior_summary(std::span<const double> psi_draws,
                                   std::span<const double> probs);
PosteriorSummary posterior_summary(const PosteriorDraws& draws,
                                   std::span<const double> probs = kDefaultSummaryProbs);

/// Split-R-hat of one parameter across chains (each chain halved).
double split_rhat(std::span<const double> values, std::size_t n_chains);

/// Effective sample size from the initial positive sequence of
/// autocorrelations of a single series.
double effective_sample_size(std::span<const double> series);

}  // namespace bvmdesign

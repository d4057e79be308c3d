#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include <json.hpp>

#include "bvmdesign/model.hpp"
#include "bvmdesign/oc_engine.hpp"
#include "bvmdesign/posterior.hpp"

namespace bvmdesign {

struct OracleConfig {
    std::size_t nsim = 400;
    McmcConfig mcmc;
    std::uint64_t seed = 1;
    /// Draw theta from the design prior for every replicate instead of holding it fixed.
    bool resample = false;

    void validate() const;
    static OracleConfig from_json(const nlohmann::json& j);
    static OracleConfig from_json(const nlohmann::json& j, OracleConfig base);
    nlohmann::json to_json() const;
};

struct OracleEstimate {
    double p = 0.0;
    double se = 0.0;
    std::size_t nsim = 0;      ///< replicates used
    std::size_t failures = 0;  ///< replicates dropped after a failed posterior fit
};

/// Full-simulation rejection rate of the fixed design: success when tau > u.
OracleEstimate mc_power_fixed(const ModelSpec& spec, const AnalysisPrior& prior, const ParameterPoint& theta,
                              std::size_t n, double u, const OracleConfig& oracle);
OracleEstimate mc_power_fixed(const ModelSpec& spec, const AnalysisPrior& prior, const DesignPrior& design_prior,
                              std::size_t n, double u, const OracleConfig& oracle);

/// Simulates one dataset of size n_T per replicate and analyzes its nested
/// prefixes in order, stopping at the first efficacy (tau > u_t) or futility
/// (tau <= l_t) decision. The report is tagged source="mc-oracle".
OcReport mc_gsd(const ModelSpec& spec, const AnalysisPrior& prior, const ParameterPoint& theta,
                const TrialDesign& design, const OracleConfig& oracle,
                const std::optional<CostSpec>& cost = std::nullopt);
OcReport mc_gsd(const ModelSpec& spec, const AnalysisPrior& prior, const DesignPrior& design_prior,
                const TrialDesign& design, const OracleConfig& oracle,
                const std::optional<CostSpec>& cost = std::nullopt);

}  // namespace bvmdesign

#include "bvmdesign/mc_oracle.hpp"

#include <cmath>
#include <numeric>

#include "bvmdesign/error.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/random.hpp"

namespace bvmdesign {

void OracleConfig::validate() const {
    if (nsim < 100) throw InvalidParameter("oracle: nsim must be at least 100");
    mcmc.validate();
}

OracleConfig OracleConfig::from_json(const nlohmann::json& j) { return from_json(j, OracleConfig{}); }

OracleConfig OracleConfig::from_json(const nlohmann::json& j, OracleConfig base) {
    try {
        base.nsim = j.value("nsim", base.nsim);
        base.seed = j.value("seed", base.seed);
        base.resample = j.value("resample", base.resample);
        if (j.contains("mcmc")) base.mcmc = McmcConfig::from_json(j["mcmc"], base.mcmc);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("oracle config: ") + e.what());
    }
    base.validate();
    return base;
}

nlohmann::json OracleConfig::to_json() const {
    return {{"nsim", nsim}, {"seed", seed}, {"resample", resample}, {"mcmc", mcmc.to_json()}};
}

namespace {

enum class Kind : char { failed, efficacy, futility, none };

struct Replicate {
    Kind kind = Kind::failed;
    std::size_t analysis = 0;  // 0-based analysis at which the trial ended
    double psi = 0.0;
};

OcReport run_oracle(const ModelSpec& spec, const AnalysisPrior& prior, const ParameterPoint* theta,
                    const DesignPrior* design_prior, const TrialDesign& design, const OracleConfig& oracle,
                    const std::optional<CostSpec>& cost) {
    oracle.validate();
    design.validate();
    if (cost) cost->validate();
    prior.validate(spec->analysis_names().size());
    if (theta) spec->validate(*theta);

    const std::size_t T = design.analyses();
    std::vector<double> upper = design.efficacy;
    std::vector<double> lower(T, -1.0);
    for (std::size_t t = 0; t < design.futility.size(); ++t) {
        if (design.futility[t] > 0.0) lower[t] = design.futility[t];
    }

    std::vector<Replicate> reps(oracle.nsim);
    parallel_for(oracle.nsim, [&](std::size_t r) {
        Replicate rep;
        try {
            ParameterPoint th = theta ? *theta : sample_design_prior(*design_prior, 1, derive_seed(oracle.seed, r, 3))[0];
            rep.psi = spec->psi(th);
            const Dataset full = spec->simulate(th, design.max_n(), derive_seed(oracle.seed, r, 1));
            rep.kind = Kind::none;
            rep.analysis = T - 1;
            for (std::size_t t = 0; t < T; ++t) {
                McmcConfig cfg = oracle.mcmc;
                cfg.seed = derive_seed(oracle.seed, r, 2 + 16 * t);
                const Dataset data = t + 1 == T ? full : full.prefix(design.schedule[t]);
                const double tau_t = tau(fit_posterior(*spec, data, prior, cfg), design.psi0);
                if (tau_t > upper[t]) {
                    rep.kind = Kind::efficacy;
                    rep.analysis = t;
                    break;
                }
                if (t + 1 < T && tau_t <= lower[t]) {
                    rep.kind = Kind::futility;
                    rep.analysis = t;
                    break;
                }
            }
        } catch (const NumericalError&) {
            rep.kind = Kind::failed;
        }
        reps[r] = rep;
    });

    std::size_t failures = 0;
    std::vector<double> eff(T, 0.0), fut(T, 0.0);
    double none = 0.0, ess = 0.0, ess2 = 0.0, type1 = 0.0, type2 = 0.0, loss2 = 0.0;
    for (const auto& rep : reps) {
        if (rep.kind == Kind::failed) {
            ++failures;
            continue;
        }
        const double n = static_cast<double>(design.schedule[rep.analysis]);
        const bool success = rep.kind == Kind::efficacy;
        if (success) eff[rep.analysis] += 1.0;
        if (rep.kind == Kind::futility) fut[rep.analysis] += 1.0;
        if (rep.kind == Kind::none) none += 1.0;
        ess += n;
        ess2 += n * n;
        const bool null_true = rep.psi <= design.psi0;
        const double t1 = null_true && success ? 1.0 : 0.0;
        const double t2 = !null_true && !success ? 1.0 : 0.0;
        type1 += t1;
        type2 += t2;
        if (cost) {
            const double l = cost->c0 * t1 + cost->c1 * t2 + cost->c2 * n;
            loss2 += l * l;
        }
    }
    if (failures * 10 > oracle.nsim) {
        throw EstimationError("oracle: " + std::to_string(failures) + " of " + std::to_string(oracle.nsim) +
                              " posterior fits failed");
    }
    const double N = static_cast<double>(oracle.nsim - failures);
    auto binom_se = [N](double p) { return std::sqrt(std::max(0.0, p * (1.0 - p)) / N); };

    OcReport r;
    r.source = "mc-oracle";
    r.design = design;
    r.prior_draws = oracle.nsim - failures;
    double cum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double p = eff[t] / N;
        cum += p;
        r.efficacy_stop_at.push_back(p);
        r.efficacy_stop_at_se.push_back(binom_se(p));
        r.efficacy_cumulative.push_back(cum);
        r.efficacy_cumulative_se.push_back(binom_se(cum));
        if (design.has_futility()) {
            r.futility_stop_at.push_back(fut[t] / N);
            r.futility_stop_at_se.push_back(binom_se(fut[t] / N));
        }
        r.end_at.push_back((eff[t] + fut[t]) / N);
    }
    if (design.has_futility()) {
        r.futility_cumulative.resize(T);
        std::partial_sum(r.futility_stop_at.begin(), r.futility_stop_at.end(), r.futility_cumulative.begin());
    }
    r.no_success = none / N;
    r.end_at.back() += r.no_success;
    r.iess = ess / N;
    r.iess_se = std::sqrt(std::max(0.0, ess2 / N - r.iess * r.iess) / N);
    if (cost) {
        r.cost = cost;
        r.iec.type1 = cost->c0 * type1 / N;
        r.iec.type2 = cost->c1 * type2 / N;
        r.iec.sample_size = cost->c2 * r.iess;
        r.iec.total = r.iec.type1 + r.iec.type2 + r.iec.sample_size;
        r.iec_se = std::sqrt(std::max(0.0, loss2 / N - r.iec.total * r.iec.total) / N);
    }
    if (failures > 0) {
        r.warnings.push_back(std::to_string(failures) + " replicate(s) dropped after failed posterior fits");
    }
    return r;
}

OracleEstimate to_estimate(const OcReport& r, std::size_t nsim) {
    OracleEstimate e;
    e.p = r.efficacy_cumulative.back();
    e.se = r.efficacy_cumulative_se.back();
    e.nsim = r.prior_draws;
    e.failures = nsim - r.prior_draws;
    return e;
}

}  // namespace

OracleEstimate mc_power_fixed(const ModelSpec& spec, const AnalysisPrior& prior, const ParameterPoint& theta,
                              std::size_t n, double u, const OracleConfig& oracle) {
    return to_estimate(mc_gsd(spec, prior, theta, fixed_design(n, u, spec.psi0()), oracle), oracle.nsim);
}

OracleEstimate mc_power_fixed(const ModelSpec& spec, const AnalysisPrior& prior, const DesignPrior& design_prior,
                              std::size_t n, double u, const OracleConfig& oracle) {
    return to_estimate(mc_gsd(spec, prior, design_prior, fixed_design(n, u, spec.psi0()), oracle), oracle.nsim);
}

OcReport mc_gsd(const ModelSpec& spec, const AnalysisPrior& prior, const ParameterPoint& theta,
                const TrialDesign& design, const OracleConfig& oracle, const std::optional<CostSpec>& cost) {
    if (oracle.resample) throw ConfigError("oracle: resample requires a design prior");
    return run_oracle(spec, prior, &theta, nullptr, design, oracle, cost);
}

OcReport mc_gsd(const ModelSpec& spec, const AnalysisPrior& prior, const DesignPrior& design_prior,
                const TrialDesign& design, const OracleConfig& oracle, const std::optional<CostSpec>& cost) {
    if (design_prior.names() != spec->parameter_names()) {
        throw ConfigError("oracle: design prior does not match the model parameters");
    }
    if (!oracle.resample) {
        // Theta held at the design-prior means.
        const ParameterPoint theta(design_prior.means(), design_prior.names());
        return run_oracle(spec, prior, &theta, nullptr, design, oracle, cost);
    }
    return run_oracle(spec, prior, nullptr, &design_prior, design, oracle, cost);
}

}  // namespace bvmdesign

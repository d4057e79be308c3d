#include "bvmdesign/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/random.hpp"
#include "bvmdesign/stats.hpp"

namespace bvmdesign {

void McmcConfig::validate() const {
    if (n_iterations == 0 || n_chains == 0) {
        throw ConfigError("mcmc: n_iterations and n_chains must be positive");
    }
    if (n_burnin >= n_iterations) throw ConfigError("mcmc: n_burnin must be smaller than n_iterations");
    if (!(proposal_scale > 0.0)) throw ConfigError("mcmc: proposal_scale must be positive");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
        throw ConfigError("mcmc: target_acceptance must lie in (0, 1)");
    }
}

McmcConfig McmcConfig::from_json(const nlohmann::json& j) { return from_json(j, McmcConfig{}); }

McmcConfig McmcConfig::from_json(const nlohmann::json& j, McmcConfig base) {
    try {
        base.n_iterations = j.value("n_iterations", base.n_iterations);
        base.n_burnin = j.value("n_burnin", base.n_burnin);
        base.n_chains = j.value("n_chains", base.n_chains);
        base.proposal_scale = j.value("proposal_scale", base.proposal_scale);
        base.target_acceptance = j.value("target_acceptance", base.target_acceptance);
        base.seed = j.value("seed", base.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mcmc config: ") + e.what());
    }
    base.validate();
    return base;
}

nlohmann::json McmcConfig::to_json() const {
    return {{"n_iterations", n_iterations}, {"n_burnin", n_burnin},
            {"n_chains", n_chains},         {"proposal_scale", proposal_scale},
            {"target_acceptance", target_acceptance}, {"seed", seed}};
}

std::vector<double> PosteriorDraws::column(std::size_t col) const {
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, col);
    return out;
}

void PosteriorDraws::write_csv(std::ostream& os) const {
    os << "chain,iteration";
    for (const auto& n : names) os << ',' << n;
    os << ",psi\n";
    for (std::size_t r = 0; r < rows(); ++r) {
        os << r / draws_per_chain << ',' << r % draws_per_chain;
        for (std::size_t c = 0; c < cols(); ++c) os << ',' << format_double(at(r, c));
        os << ',' << format_double(psi[r]) << '\n';
    }
}

nlohmann::json PosteriorDraws::diagnostics_json() const {
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t c = 0; c < cols(); ++c) {
        params.push_back({{"name", names[c]},
                          {"acceptance_rate", acceptance_rate[c]},
                          {"proposal_scale", proposal_scale[c]},
                          {"rhat", rhat[c]}});
    }
    return {{"chains", n_chains},
            {"draws_per_chain", draws_per_chain},
            {"parameters", params},
            {"convergence_warning", convergence_warning}};
}

namespace {

struct ChainResult {
    std::vector<double> draws;  // retained, row-major
    std::vector<double> accepted;
    std::vector<double> scales;
};

ChainResult run_chain(const LogDensityFn& log_post, std::span<const double> init,
                      const McmcConfig& cfg, std::uint64_t seed) {
    const std::size_t p = init.size();
    Rng rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;

    std::vector<double> x(init.begin(), init.end());
    double lp = log_post(x);
    if (!std::isfinite(lp)) {
        throw InitializationError("posterior: log density is not finite at the initial point");
    }

    std::vector<double> log_scale(p, std::log(cfg.proposal_scale));
    ChainResult out;
    out.draws.reserve(cfg.retained_per_chain() * p);
    out.accepted.assign(p, 0.0);

    for (std::size_t it = 0; it < cfg.n_iterations; ++it) {
        const bool burnin = it < cfg.n_burnin;
        // Robbins-Monro step on the log proposal scale, burn-in only.
        const double gain = std::min(1.0, 3.0 / std::pow(static_cast<double>(it + 1), 0.6));
        for (std::size_t j = 0; j < p; ++j) {
            const double old = x[j];
            x[j] = old + std::exp(log_scale[j]) * normal(rng);
            const double lp_new = log_post(x);
            const double log_u = std::log(unif(rng));
            const bool accept = std::isfinite(lp_new) && log_u < lp_new - lp;
            if (accept) {
                lp = lp_new;
            } else {
                x[j] = old;
            }
            if (burnin) {
                log_scale[j] += gain * ((accept ? 1.0 : 0.0) - cfg.target_acceptance);
            } else if (accept) {
                out.accepted[j] += 1.0;
            }
        }
        if (!burnin) out.draws.insert(out.draws.end(), x.begin(), x.end());
    }
    const double kept = static_cast<double>(cfg.retained_per_chain());
    for (auto& a : out.accepted) a /= kept;
    for (double ls : log_scale) out.scales.push_back(std::exp(ls));
    return out;
}

}  // namespace

PosteriorDraws sample_posterior(const LogDensityFn& log_posterior, std::vector<std::string> names,
                                std::size_t psi_index, std::span<const double> init,
                                const McmcConfig& config) {
    config.validate();
    const std::size_t p = names.size();
    if (init.size() != p || psi_index >= p) throw InvalidParameter("posterior: dimension mismatch");

    std::vector<ChainResult> chains(config.n_chains);
    parallel_for(config.n_chains, [&](std::size_t c) {
        chains[c] = run_chain(log_posterior, init, config, derive_seed(config.seed, 0x4d434d43ULL, c));
    });

    PosteriorDraws out;
    out.names = std::move(names);
    out.n_chains = config.n_chains;
    out.draws_per_chain = config.retained_per_chain();
    out.draws.reserve(out.rows() * p);
    out.acceptance_rate.assign(p, 0.0);
    out.proposal_scale.assign(p, 0.0);
    for (const auto& ch : chains) {
        out.draws.insert(out.draws.end(), ch.draws.begin(), ch.draws.end());
        for (std::size_t j = 0; j < p; ++j) {
            out.acceptance_rate[j] += ch.accepted[j] / static_cast<double>(config.n_chains);
            out.proposal_scale[j] += ch.scales[j] / static_cast<double>(config.n_chains);
        }
    }
    out.psi = out.column(psi_index);
    for (std::size_t j = 0; j < p; ++j) {
        const double r = split_rhat(out.column(j), out.n_chains);
        out.rhat.push_back(r);
        if (r > 1.1) out.convergence_warning = true;
    }
    return out;
}

PosteriorDraws fit_posterior(const Model& model, const Dataset& data, const AnalysisPrior& prior,
                             const McmcConfig& config) {
    config.validate();
    if (data.rows() == 0) throw InvalidSize("fit_posterior: empty dataset");
    prior.validate(model.analysis_names().size());
    auto loglik = model.analysis_log_likelihood(data);
    LogDensityFn log_post = [loglik, prior](std::span<const double> x) {
        return loglik(x) + prior.log_density(x);
    };
    return sample_posterior(log_post, model.analysis_names(), model.analysis_psi_index(),
                            prior.means, config);
}

double tau(std::span<const double> psi_draws, double psi0) {
    if (psi_draws.empty()) throw InvalidSize("tau: no posterior draws");
    std::size_t above = 0;
    for (double v : psi_draws) above += v > psi0 ? 1 : 0;
    return static_cast<double>(above) / static_cast<double>(psi_draws.size());
}

double tau(const PosteriorDraws& draws, double psi0) { return tau(draws.psi, psi0); }

PosteriorSummary posterior_summary(std::span<const double> psi_draws,
                                   std::span<const double> probs) {
    if (psi_draws.size() < 100) throw InvalidSize("posterior_summary: need at least 100 draws");
    for (double p : probs) {
        if (!(p > 0.0 && p < 1.0)) throw InvalidParameter("posterior_summary: quantile outside (0, 1)");
    }
    PosteriorSummary s;
    s.mean = mean(psi_draws);
    s.sd = sample_sd(psi_draws);
    s.quantiles = quantiles(psi_draws, probs);
    return s;
}

PosteriorSummary posterior_summary(const PosteriorDraws& draws, std::span<const double> probs) {
    return posterior_summary(draws.psi, probs);
}

double split_rhat(std::span<const double> values, std::size_t n_chains) {
    if (n_chains == 0 || values.size() % n_chains != 0) {
        throw InvalidSize("split_rhat: values not divisible into chains");
    }
    const std::size_t per_chain = values.size() / n_chains;
    const std::size_t half = per_chain / 2;
    if (half < 2) return std::nan("");
    std::vector<double> means, vars;
    for (std::size_t c = 0; c < n_chains; ++c) {
        for (int h = 0; h < 2; ++h) {
            auto seg = values.subspan(c * per_chain + h * half, half);
            means.push_back(mean(seg));
            vars.push_back(sample_variance(seg));
        }
    }
    const double w = mean(vars);
    const double b = static_cast<double>(half) * sample_variance(means);
    if (!(w > 0.0)) return 1.0;
    const double n = static_cast<double>(half);
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

double effective_sample_size(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 4) return static_cast<double>(n);
    const double m = mean(series);
    double c0 = 0.0;
    for (double v : series) c0 += (v - m) * (v - m);
    c0 /= static_cast<double>(n);
    if (!(c0 > 0.0)) return static_cast<double>(n);
    auto autocorr = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (series[i] - m) * (series[i + lag] - m);
        return s / static_cast<double>(n) / c0;
    };
    // Geyer's initial positive sequence.
    double sum = 0.0;
    for (std::size_t lag = 1; lag + 1 < n / 2; lag += 2) {
        const double pair = autocorr(lag) + autocorr(lag + 1);
        if (pair <= 0.0) break;
        sum += pair;
    }
    const double tau_int = 1.0 + 2.0 * sum;
    return static_cast<double>(n) / std::max(tau_int, 1e-12);
}

}  // namespace bvmdesign

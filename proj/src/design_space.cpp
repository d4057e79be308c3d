#include "bvmdesign/design_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/random.hpp"
#include "bvmdesign/stats.hpp"

namespace bvmdesign {

namespace {

// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

double min_pairwise_distance(const std::vector<double>& u, std::size_t k, std::size_t d) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = u[i * d + c] - u[j * d + c];
                s += diff * diff;
            }
            best = std::min(best, s);
        }
    }
    return std::sqrt(best);
}

}  // namespace

std::vector<ParameterPoint> lhs(const DesignBox& box, std::size_t k, std::uint64_t seed,
                                std::size_t candidates) {
    if (k == 0) throw InvalidSize("lhs: k must be at least 1");
    if (candidates == 0) candidates = 1;
    const std::size_t d = box.dimension();

    std::vector<double> best_u;
    double best_score = -1.0;
    std::vector<std::size_t> perm(k);
    for (std::size_t cand = 0; cand < candidates; ++cand) {
        Rng rng(derive_seed(seed, 0x4c4853ULL, cand));
        std::vector<double> u(k * d);
        for (std::size_t c = 0; c < d; ++c) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::shuffle(perm.begin(), perm.end(), rng);
            for (std::size_t i = 0; i < k; ++i) {
                u[i * d + c] = (static_cast<double>(perm[i]) + open_uniform(rng)) / static_cast<double>(k);
            }
        }
        const double score = k > 1 ? min_pairwise_distance(u, k, d) : 0.0;
        if (score > best_score) {
            best_score = score;
            best_u = std::move(u);
        }
    }

    std::vector<ParameterPoint> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> v(d);
        for (std::size_t c = 0; c < d; ++c) {
            v[c] = box.lo()[c] + best_u[i * d + c] * (box.hi()[c] - box.lo()[c]);
        }
        out.emplace_back(std::move(v), box.names());
    }
    return out;
}

std::string to_string(LambdaEstimator kind) {
    return kind == LambdaEstimator::sd_of_posterior_means ? "sd-of-posterior-means"
                                                          : "mean-of-posterior-sds";
}

LambdaEstimator parse_lambda_estimator(const std::string& s) {
    if (s == "sd-of-posterior-means") return LambdaEstimator::sd_of_posterior_means;
    if (s == "mean-of-posterior-sds") return LambdaEstimator::mean_of_posterior_sds;
    throw ConfigError("unknown lambda estimator '" + s + "'");
}

namespace {

double lambda_statistic(LambdaEstimator kind, std::span<const double> means,
                        std::span<const double> sds, double root_n) {
    if (kind == LambdaEstimator::sd_of_posterior_means) return root_n * sample_sd(means);
    return root_n * mean(sds);
}

}  // namespace

LambdaEstimate estimate_lambda(const Model& model, const AnalysisPrior& prior,
                               const ParameterPoint& theta, std::size_t n, std::size_t R,
                               LambdaEstimator kind, const McmcConfig& mcmc, std::uint64_t seed) {
    if (R < 30) throw InvalidSize("estimate_lambda: need R >= 30 replicates");
    if (n < 50) throw InvalidSize("estimate_lambda: need n >= 50");
    model.validate(theta);
    mcmc.validate();

    std::vector<double> post_mean(R, 0.0), post_sd(R, 0.0);
    std::vector<char> ok(R, 0);
    parallel_for(R, [&](std::size_t r) {
        try {
            const Dataset data = model.simulate(theta, n, derive_seed(seed, r, 1));
            McmcConfig cfg = mcmc;
            cfg.seed = derive_seed(seed, r, 2);
            const PosteriorDraws draws = fit_posterior(model, data, prior, cfg);
            post_mean[r] = mean(draws.psi);
            post_sd[r] = sample_sd(draws.psi);
            ok[r] = std::isfinite(post_mean[r]) && std::isfinite(post_sd[r]) ? 1 : 0;
        } catch (const NumericalError&) {
            ok[r] = 0;
        }
    });

    std::vector<double> means, sds;
    for (std::size_t r = 0; r < R; ++r) {
        if (!ok[r]) continue;
        means.push_back(post_mean[r]);
        sds.push_back(post_sd[r]);
    }
    const std::size_t failures = R - means.size();
    if (failures * 10 > R) {
        throw EstimationError("estimate_lambda: " + std::to_string(failures) + " of " +
                              std::to_string(R) + " posterior fits failed");
    }

    const double root_n = std::sqrt(static_cast<double>(n));
    LambdaEstimate est;
    est.theta = theta;
    est.lambda_hat = lambda_statistic(kind, means, sds, root_n);
    est.n_used = n;
    est.R_used = means.size();
    est.failures = failures;
    est.estimator_kind = kind;

    // Nonparametric bootstrap over replicates.
    constexpr std::size_t kBootstrap = 200;
    Rng rng(derive_seed(seed, 0xb0075712ULL));
    std::uniform_int_distribution<std::size_t> pick(0, means.size() - 1);
    std::vector<double> bm(means.size()), bs(means.size()), stats(kBootstrap);
    for (std::size_t b = 0; b < kBootstrap; ++b) {
        for (std::size_t i = 0; i < means.size(); ++i) {
            const std::size_t j = pick(rng);
            bm[i] = means[j];
            bs[i] = sds[j];
        }
        stats[b] = lambda_statistic(kind, bm, bs, root_n);
    }
    est.mc_se = std::max(sample_sd(stats), 1e-12 * std::max(est.lambda_hat, 1.0));
    if (!(est.lambda_hat > 0.0)) throw EstimationError("estimate_lambda: non-positive lambda estimate");
    return est;
}

TrainingSet build_training_set(const Model& model, const AnalysisPrior& prior, const DesignBox& box,
                               std::size_t k, std::size_t n, std::size_t R, LambdaEstimator kind,
                               const McmcConfig& mcmc, std::uint64_t seed) {
    if (box.names() != model.parameter_names()) {
        throw ConfigError("design box parameters do not match model '" + model.id() + "'");
    }
    const auto points = lhs(box, k, derive_seed(seed, 0x1a5ULL));
    TrainingSet set;
    set.model_id = model.id();
    set.parameter_names = model.parameter_names();
    set.n = n;
    set.R = R;
    set.seed = seed;
    set.estimator_kind = kind;
    set.rows.resize(k);
    parallel_for(k, [&](std::size_t i) {
        set.rows[i] = estimate_lambda(model, prior, points[i], n, R, kind, mcmc,
                                      derive_seed(seed, 0x7ea1ULL, i));
    });
    return set;
}

void TrainingSet::write_csv(std::ostream& os) const {
    for (const auto& name : parameter_names) os << name << ',';
    os << "lambda_hat,mc_se,n,R,estimator\n";
    for (const auto& row : rows) {
        for (double v : row.theta.values) os << format_double(v) << ',';
        os << format_double(row.lambda_hat) << ',' << format_double(row.mc_se) << ',' << row.n_used
           << ',' << row.R_used << ',' << to_string(row.estimator_kind) << '\n';
    }
}

nlohmann::json TrainingSet::provenance() const {
    return {{"model", model_id},       {"parameters", parameter_names},
            {"n", n},                  {"R", R},
            {"seed", seed},            {"estimator", to_string(estimator_kind)},
            {"rows", rows.size()}};
}

TrainingSet TrainingSet::parse_csv(const std::string& text, const std::string& origin) {
    const CsvTable table = bvmdesign::parse_csv(text, origin);
    const std::size_t lam = table.column("lambda_hat");
    const std::size_t se = table.column("mc_se");
    const std::size_t nc = table.column("n");
    const std::size_t rc = table.column("R");
    const std::size_t ec = table.column("estimator");
    if (lam == 0) throw ConfigError("'" + origin + "': no parameter columns before lambda_hat");

    TrainingSet set;
    set.parameter_names.assign(table.header.begin(), table.header.begin() + static_cast<std::ptrdiff_t>(lam));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        LambdaEstimate est;
        std::vector<double> v(lam);
        for (std::size_t c = 0; c < lam; ++c) v[c] = table.number(r, c);
        est.theta = ParameterPoint(std::move(v), set.parameter_names);
        est.lambda_hat = table.number(r, lam);
        est.mc_se = table.number(r, se);
        est.n_used = static_cast<std::size_t>(table.number(r, nc));
        est.R_used = static_cast<std::size_t>(table.number(r, rc));
        est.estimator_kind = parse_lambda_estimator(table.rows[r][ec]);
        if (!(est.lambda_hat > 0.0) || !std::isfinite(est.lambda_hat)) {
            throw ConfigError("'" + origin + "': lambda_hat must be positive (row " +
                              std::to_string(r + 1) + ")");
        }
        set.rows.push_back(std::move(est));
    }
    if (!set.rows.empty()) {
        set.n = set.rows.front().n_used;
        set.R = set.rows.front().R_used;
        set.estimator_kind = set.rows.front().estimator_kind;
    }
    return set;
}

TrainingSet TrainingSet::read_csv(const std::string& path) {
    return parse_csv(read_text_file(path), path);
}

}  // namespace bvmdesign

#include "bvmdesign/oc_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include <Eigen/Cholesky>

#include "bvmdesign/io.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/random.hpp"
#include "bvmdesign/stats.hpp"

namespace bvmdesign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string describe(const FieldErrors& errors) {
    std::string msg = "invalid design:";
    for (const auto& [field, what] : errors) msg += " " + field + " " + what + ";";
    msg.pop_back();
    return msg;
}

}  // namespace

DesignError::DesignError(FieldErrors errors) : InvalidParameter(describe(errors)), fields_(std::move(errors)) {}

// ---------------------------------------------------------- TrialDesign

bool TrialDesign::has_futility() const {
    return std::any_of(futility.begin(), futility.end(), [](double l) { return l > 0.0; });
}

FieldErrors TrialDesign::validation_errors() const {
    FieldErrors errors;
    const std::size_t T = schedule.size();
    if (T == 0) {
        errors.emplace_back("schedule", "must contain at least one analysis");
    } else {
        if (schedule.front() == 0) errors.emplace_back("schedule", "sample sizes must be positive");
        for (std::size_t t = 1; t < T; ++t) {
            if (schedule[t] <= schedule[t - 1]) {
                errors.emplace_back("schedule", "must be strictly increasing");
                break;
            }
        }
    }
    if (efficacy.size() != T) {
        errors.emplace_back("efficacy", "needs one threshold per analysis");
    }
    for (std::size_t t = 0; t < efficacy.size(); ++t) {
        if (!(efficacy[t] > 0.0 && efficacy[t] < 1.0)) {
            errors.emplace_back("efficacy[" + std::to_string(t) + "]", "must lie in (0, 1)");
        }
    }
    if (!futility.empty()) {
        if (T == 0 || futility.size() != T - 1) {
            errors.emplace_back("futility", "needs one threshold per interim analysis");
        }
        for (std::size_t t = 0; t < futility.size(); ++t) {
            const std::string field = "futility[" + std::to_string(t) + "]";
            if (!(futility[t] >= 0.0 && futility[t] < 1.0)) {
                errors.emplace_back(field, "must lie in [0, 1)");
            } else if (t < efficacy.size() && !(futility[t] < efficacy[t])) {
                errors.emplace_back(field, "must be below the efficacy threshold");
            }
        }
    }
    if (!std::isfinite(psi0)) errors.emplace_back("psi0", "must be finite");
    return errors;
}

void TrialDesign::validate() const {
    auto errors = validation_errors();
    if (!errors.empty()) throw DesignError(std::move(errors));
}

namespace {

std::vector<double> number_list(const nlohmann::json& j, const std::string& field, FieldErrors& errors) {
    std::vector<double> out;
    if (!j.is_array()) {
        errors.emplace_back(field, "must be an array of numbers");
        return out;
    }
    for (const auto& v : j) {
        if (!v.is_number()) {
            errors.emplace_back(field, "must be an array of numbers");
            return {};
        }
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

TrialDesign TrialDesign::from_json(const nlohmann::json& j, double default_psi0) {
    if (!j.is_object()) throw DesignError(FieldErrors{{"design", "must be a JSON object"}});
    FieldErrors errors;
    TrialDesign d;
    d.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>() : "design";
    if (!j.contains("schedule")) {
        errors.emplace_back("schedule", "is required");
    } else {
        for (double n : number_list(j["schedule"], "schedule", errors)) {
            if (!(n >= 1.0) || n != std::floor(n) || n > 1e9) {
                errors.emplace_back("schedule", "entries must be positive integers");
                break;
            }
            d.schedule.push_back(static_cast<std::size_t>(n));
        }
    }
    if (!j.contains("efficacy")) {
        errors.emplace_back("efficacy", "is required");
    } else {
        d.efficacy = number_list(j["efficacy"], "efficacy", errors);
    }
    if (j.contains("futility") && !j["futility"].is_null()) {
        d.futility = number_list(j["futility"], "futility", errors);
    }
    d.psi0 = default_psi0;
    if (j.contains("psi0")) {
        if (j["psi0"].is_number()) {
            d.psi0 = j["psi0"].get<double>();
        } else {
            errors.emplace_back("psi0", "must be a number");
        }
    }
    if (j.contains("reference")) d.reference = j["reference"];
    if (!errors.empty()) throw DesignError(std::move(errors));
    d.validate();
    return d;
}

nlohmann::json TrialDesign::to_json() const {
    nlohmann::json j = {{"name", name}, {"schedule", schedule}, {"efficacy", efficacy}, {"psi0", psi0}};
    if (!futility.empty()) j["futility"] = futility;
    if (!reference.is_null()) j["reference"] = reference;
    return j;
}

TrialDesign fixed_design(std::size_t n, double u, double psi0) {
    TrialDesign d;
    d.name = "fixed-" + std::to_string(n);
    d.schedule = {n};
    d.efficacy = {u};
    d.psi0 = psi0;
    d.validate();
    return d;
}

// ---------------------------------------------------------- small configs

void CostSpec::validate() const {
    if (!(c0 >= 0.0 && c1 >= 0.0 && c2 >= 0.0)) throw InvalidParameter("cost: entries must be non-negative");
    if (c0 == 0.0 && c1 == 0.0 && c2 == 0.0) throw InvalidParameter("cost: entries must not all be zero");
}

CostSpec CostSpec::from_json(const nlohmann::json& j) {
    CostSpec c;
    try {
        c.c0 = j.at("c0").get<double>();
        c.c1 = j.at("c1").get<double>();
        c.c2 = j.at("c2").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cost: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json CostSpec::to_json() const { return {{"c0", c0}, {"c1", c1}, {"c2", c2}}; }

void MvnConfig::validate() const {
    if (draws < 1000) throw InvalidParameter("mvn: need at least 1000 draws");
}

MvnConfig MvnConfig::from_json(const nlohmann::json& j) { return from_json(j, MvnConfig{}); }

MvnConfig MvnConfig::from_json(const nlohmann::json& j, MvnConfig base) {
    try {
        base.draws = j.value("draws", base.draws);
        base.seed = j.value("seed", base.seed);
        base.antithetic = j.value("antithetic", base.antithetic);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mvn config: ") + e.what());
    }
    base.validate();
    return base;
}

nlohmann::json MvnConfig::to_json() const {
    return {{"draws", draws}, {"seed", seed}, {"antithetic", antithetic}};
}

// ---------------------------------------------------------- closed forms

double power_fixed(double psi, double psi0, std::size_t n, double u, double lambda) {
    if (!(u > 0.0 && u < 1.0)) throw InvalidParameter("power_fixed: u must lie in (0, 1)");
    if (n == 0) throw InvalidParameter("power_fixed: n must be at least 1");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidParameter("power_fixed: lambda must be positive");
    const double shift = std::sqrt(static_cast<double>(n)) * (psi - psi0) / lambda;
    return normal_sf(normal_quantile(u) - shift);
}

Eigen::MatrixXd schedule_correlation(std::span<const std::size_t> schedule) {
    const auto T = static_cast<Eigen::Index>(schedule.size());
    Eigen::MatrixXd C(T, T);
    for (Eigen::Index j = 0; j < T; ++j) {
        for (Eigen::Index k = 0; k < T; ++k) {
            const double a = static_cast<double>(schedule[std::min(j, k)]);
            const double b = static_cast<double>(schedule[std::max(j, k)]);
            C(j, k) = j == k ? 1.0 : std::sqrt(a / b);
        }
    }
    return C;
}

GsdJointDistribution gamma_joint(double psi, double psi0, const TrialDesign& design, double lambda) {
    design.validate();
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidParameter("gamma_joint: lambda must be positive");
    const double delta = (psi - psi0) / lambda;
    GsdJointDistribution g;
    const auto T = static_cast<Eigen::Index>(design.analyses());
    g.mean.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) g.mean(t) = delta * std::sqrt(static_cast<double>(design.schedule[t]));
    g.correlation = schedule_correlation(design.schedule);
    Eigen::LLT<Eigen::MatrixXd> llt(g.correlation);
    if (llt.info() != Eigen::Success) throw NumericalError("gamma_joint: correlation is not positive definite");
    g.cholesky = llt.matrixL();
    return g;
}

// ---------------------------------------------------------- stopping kernel

std::vector<double> StopProbabilities::cumulative_efficacy() const {
    std::vector<double> out(efficacy.size());
    std::partial_sum(efficacy.begin(), efficacy.end(), out.begin());
    return out;
}

std::vector<double> StopProbabilities::cumulative_futility() const {
    std::vector<double> out(futility.size());
    std::partial_sum(futility.begin(), futility.end(), out.begin());
    return out;
}

std::vector<double> StopProbabilities::end_at() const {
    std::vector<double> out(efficacy.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = efficacy[t] + futility[t];
    if (!out.empty()) out.back() += no_success;
    return out;
}

StoppingKernel::StoppingKernel(const TrialDesign& design, const MvnConfig& mvn) {
    design.validate();
    mvn.validate();
    const std::size_t T = design.analyses();
    has_futility_ = design.has_futility();
    const std::size_t base = mvn.antithetic ? (mvn.draws + 1) / 2 : mvn.draws;
    draws_ = mvn.antithetic ? 2 * base : base;

    const auto g = gamma_joint(0.0, 0.0, design, 1.0);
    std::vector<double> root_n(T), upper(T), lower(T, -kInf);
    for (std::size_t t = 0; t < T; ++t) {
        root_n[t] = std::sqrt(static_cast<double>(design.schedule[t]));
        upper[t] = normal_quantile(design.efficacy[t]);
        if (t < design.futility.size() && design.futility[t] > 0.0) lower[t] = normal_quantile(design.futility[t]);
    }

    eff_lo_.assign(T, {});
    eff_hi_.assign(T, {});
    for (auto& v : eff_lo_) v.reserve(draws_);
    for (auto& v : eff_hi_) v.reserve(draws_);
    if (has_futility_) {
        fut_lo_.assign(T, {});
        fut_hi_.assign(T, {});
    }

    auto push = [](std::vector<double>& lo, std::vector<double>& hi, double a, double b) {
        if (a < b) {
            lo.push_back(a);
            hi.push_back(b);
        } else {
            lo.push_back(kInf);
            hi.push_back(kInf);
        }
    };
    // Continue region after analysis t is [L, U) in delta.
    auto process = [&](const Eigen::VectorXd& eps) {
        double L = -kInf, U = kInf;
        for (std::size_t t = 0; t < T; ++t) {
            const double d = (upper[t] - eps(static_cast<Eigen::Index>(t))) / root_n[t];
            push(eff_lo_[t], eff_hi_[t], std::max(L, d), U);
            if (has_futility_) {
                if (std::isfinite(lower[t])) {
                    const double e = (lower[t] - eps(static_cast<Eigen::Index>(t))) / root_n[t];
                    const double e_open = std::nextafter(e, kInf);
                    push(fut_lo_[t], fut_hi_[t], L, std::min(U, e_open));
                    L = std::max(L, e_open);
                } else {
                    push(fut_lo_[t], fut_hi_[t], kInf, kInf);
                }
            }
            U = std::min(U, d);
        }
    };

    Rng rng(derive_seed(mvn.seed, 0x4d564eULL));
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(static_cast<Eigen::Index>(T));
    for (std::size_t i = 0; i < base; ++i) {
        for (auto& v : z) v = normal(rng);
        const Eigen::VectorXd eps = g.cholesky * z;
        process(eps);
        if (mvn.antithetic) process(-eps);
    }
    for (auto* set : {&eff_lo_, &eff_hi_, &fut_lo_, &fut_hi_}) {
        for (auto& v : *set) std::sort(v.begin(), v.end());
    }
}

void StoppingKernel::counts(double delta, std::span<std::size_t> eff, std::span<std::size_t> fut) const {
    auto count = [delta](const std::vector<double>& lo, const std::vector<double>& hi) {
        const auto a = std::upper_bound(lo.begin(), lo.end(), delta) - lo.begin();
        const auto b = std::upper_bound(hi.begin(), hi.end(), delta) - hi.begin();
        return static_cast<std::size_t>(a - b);
    };
    const std::size_t T = analyses();
    for (std::size_t t = 0; t < T; ++t) {
        eff[t] = count(eff_lo_[t], eff_hi_[t]);
        fut[t] = has_futility_ ? count(fut_lo_[t], fut_hi_[t]) : 0;
    }
}

StopProbabilities StoppingKernel::at(double delta) const {
    const std::size_t T = analyses();
    std::vector<std::size_t> e(T), f(T);
    counts(delta, e, f);
    StopProbabilities p;
    p.draws = draws_;
    const double M = static_cast<double>(draws_);
    std::size_t ended = 0;
    for (std::size_t t = 0; t < T; ++t) {
        p.efficacy.push_back(static_cast<double>(e[t]) / M);
        p.futility.push_back(static_cast<double>(f[t]) / M);
        ended += e[t] + f[t];
    }
    p.no_success = static_cast<double>(draws_ - ended) / M;
    for (std::size_t t = 0; t < T; ++t) {
        p.efficacy_se.push_back(std::sqrt(p.efficacy[t] * (1.0 - p.efficacy[t]) / M));
        p.futility_se.push_back(std::sqrt(p.futility[t] * (1.0 - p.futility[t]) / M));
    }
    return p;
}

StopProbabilities stop_probs(const TrialDesign& design, double psi, double lambda, const MvnConfig& mvn) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidParameter("stop_probs: lambda must be positive");
    const StoppingKernel kernel(design, mvn);
    return kernel.at((psi - design.psi0) / lambda);
}

// ---------------------------------------------------------- lambda sources

void LambdaSource::states(std::span<const double>, std::span<double> out) const {
    if (!out.empty()) throw InvalidSize("lambda source has no posterior states");
}

FixedLambda::FixedLambda(double lambda) : lambda_(lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidParameter("FixedLambda: lambda must be positive");
}

BartLambda::BartLambda(std::shared_ptr<const BartPosterior> posterior, std::size_t max_states,
                       double box_inflation)
    : posterior_(std::move(posterior)), inflation_(box_inflation) {
    if (!posterior_ || posterior_->state_count() == 0) throw ConfigError("BartLambda: empty ensemble");
    if (max_states == 0) throw InvalidParameter("BartLambda: max_states must be positive");
    const std::string& tr = posterior_->response_transform();
    if (tr != "log" && tr != "identity") throw ConfigError("BartLambda: unknown response transform '" + tr + "'");
    log_scale_ = tr == "log";
    const std::size_t S = posterior_->state_count();
    const std::size_t keep = std::min(S, max_states);
    for (std::size_t i = 0; i < keep; ++i) selected_.push_back(i * S / keep);
}

double BartLambda::to_lambda(double y) const {
    const double lam = log_scale_ ? std::exp(y) : y;
    if (!(lam > 0.0) || !std::isfinite(lam)) throw NumericalError("BartLambda: non-positive lambda prediction");
    return lam;
}

double BartLambda::plug_in(std::span<const double> theta) const {
    return to_lambda(posterior_->predict_mean(theta));
}

void BartLambda::states(std::span<const double> theta, std::span<double> out) const {
    if (out.size() != selected_.size()) throw InvalidSize("BartLambda: state buffer size mismatch");
    if (theta.size() != posterior_->dimension()) throw InvalidSize("bart: predictor dimension mismatch");
    for (std::size_t s = 0; s < selected_.size(); ++s) {
        out[s] = to_lambda(posterior_->predict_state(selected_[s], theta));
    }
}

bool BartLambda::covers(std::span<const double> theta) const {
    const auto& lo = posterior_->training_lo();
    const auto& hi = posterior_->training_hi();
    for (std::size_t i = 0; i < theta.size() && i < lo.size(); ++i) {
        const double pad = inflation_ * (hi[i] - lo[i]);
        if (theta[i] < lo[i] - pad || theta[i] > hi[i] + pad) return false;
    }
    return true;
}

// ---------------------------------------------------------- prepared prior

namespace {

constexpr std::size_t kChunk = 512;

std::size_t chunk_count(std::size_t n) { return (n + kChunk - 1) / kChunk; }

}  // namespace

PreparedPrior prepare_prior(const ModelSpec& spec, std::span<const ParameterPoint> sample,
                            const LambdaSource& source) {
    if (sample.empty()) throw InvalidSize("prepare_prior: empty design-prior sample");
    const std::size_t K = sample.size();
    PreparedPrior p;
    p.psi.resize(K);
    p.lambda.resize(K);
    p.states = source.state_count();
    p.state_lambda.resize(K * p.states);
    std::vector<char> outside(K, 0);
    parallel_for(chunk_count(K), [&](std::size_t c) {
        const std::size_t end = std::min(K, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            const auto x = sample[i].span();
            p.psi[i] = spec->psi(sample[i]);
            p.lambda[i] = source.plug_in(x);
            if (p.states) source.states(x, std::span<double>(p.state_lambda).subspan(i * p.states, p.states));
            outside[i] = source.covers(x) ? 0 : 1;
        }
    });
    p.outside_box = static_cast<std::size_t>(std::count(outside.begin(), outside.end(), 1));
    return p;
}

Interval power_uncertainty(std::span<const double> per_state) {
    if (per_state.size() < 50) throw InvalidSize("power_uncertainty: need at least 50 posterior states");
    std::vector<double> v(per_state.begin(), per_state.end());
    std::sort(v.begin(), v.end());
    return {mean(per_state), quantile_sorted(v, 0.025), quantile_sorted(v, 0.975)};
}

// ---------------------------------------------------------- evaluation

namespace {

// Per-theta summary of one design: end-of-trial distribution moments.
struct ThetaOutcome {
    std::vector<double> eff;  // stop-at
    std::vector<double> fut;
    double ess = 0.0, ess2 = 0.0;    // E[N], E[N^2]
    double loss = 0.0, loss2 = 0.0;  // E[L], E[L^2]
    double success = 0.0;
};

class OutcomeEvaluator {
  public:
    OutcomeEvaluator(const TrialDesign& d, const StoppingKernel& k, const std::optional<CostSpec>& cost)
        : design_(d), kernel_(k), cost_(cost), e_(d.analyses()), f_(d.analyses()) {}

    void eval(double psi, double lambda, ThetaOutcome& out) {
        const std::size_t T = design_.analyses();
        kernel_.counts((psi - design_.psi0) / lambda, e_, f_);
        const double M = static_cast<double>(kernel_.draws());
        out.eff.resize(T);
        out.fut.resize(T);
        const bool null_true = psi <= design_.psi0;
        const double c0 = cost_ ? cost_->c0 : 0.0, c1 = cost_ ? cost_->c1 : 0.0, c2 = cost_ ? cost_->c2 : 0.0;
        out.ess = out.ess2 = out.loss = out.loss2 = out.success = 0.0;
        double rest = 1.0;
        auto add = [&](double prob, double n, bool success) {
            const double l = (success ? (null_true ? c0 : 0.0) : (null_true ? 0.0 : c1)) + c2 * n;
            out.ess += prob * n;
            out.ess2 += prob * n * n;
            out.loss += prob * l;
            out.loss2 += prob * l * l;
        };
        for (std::size_t t = 0; t < T; ++t) {
            out.eff[t] = static_cast<double>(e_[t]) / M;
            out.fut[t] = static_cast<double>(f_[t]) / M;
            const double n = static_cast<double>(design_.schedule[t]);
            add(out.eff[t], n, true);
            add(out.fut[t], n, false);
            out.success += out.eff[t];
            rest -= out.eff[t] + out.fut[t];
        }
        add(std::max(rest, 0.0), static_cast<double>(design_.max_n()), false);
    }

  private:
    const TrialDesign& design_;
    const StoppingKernel& kernel_;
    const std::optional<CostSpec>& cost_;
    std::vector<std::size_t> e_, f_;
};

struct Moments {
    std::vector<double> s, s2;
    explicit Moments(std::size_t n = 0) : s(n, 0.0), s2(n, 0.0) {}
    void add(std::size_t i, double v) {
        s[i] += v;
        s2[i] += v * v;
    }
    void merge(const Moments& o) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] += o.s[i];
            s2[i] += o.s2[i];
        }
    }
    double mean(std::size_t i, double K) const { return s[i] / K; }
    double var(std::size_t i, double K) const {
        if (K < 2.0) return 0.0;
        return std::max(0.0, (s2[i] - s[i] * s[i] / K) / (K - 1.0));
    }
};

// Layout of the per-theta quantities accumulated in Moments.
struct Layout {
    std::size_t T;
    std::size_t eff(std::size_t t) const { return t; }
    std::size_t cum(std::size_t t) const { return T + t; }
    std::size_t fut(std::size_t t) const { return 2 * T + t; }
    std::size_t ess() const { return 3 * T; }
    std::size_t loss() const { return 3 * T + 1; }
    std::size_t type1() const { return 3 * T + 2; }
    std::size_t type2() const { return 3 * T + 3; }
    std::size_t ess_var() const { return 3 * T + 4; }
    std::size_t loss_var() const { return 3 * T + 5; }
    std::size_t size() const { return 3 * T + 6; }
};

struct ChunkAccum {
    Moments plug;
    std::vector<double> state;  // states x (T cum + ess + loss)
};

nlohmann::json reference_check(const OcReport& r) {
    const auto& ref = r.design.reference;
    if (!ref.is_object()) return nullptr;
    const double tol = ref.value("tolerance", 0.05);
    nlohmann::json out = nlohmann::json::object();
    out["tolerance"] = tol;
    if (ref.contains("cumulative_efficacy")) {
        const auto vals = ref["cumulative_efficacy"].get<std::vector<double>>();
        nlohmann::json rows = nlohmann::json::array();
        bool all = true;
        for (std::size_t t = 0; t < vals.size() && t < r.efficacy_cumulative.size(); ++t) {
            const double diff = r.efficacy_cumulative[t] - vals[t];
            const bool ok = std::abs(diff) <= tol;
            all = all && ok;
            rows.push_back({{"analysis", t + 1},
                            {"reference", vals[t]},
                            {"computed", r.efficacy_cumulative[t]},
                            {"difference", diff},
                            {"within_tolerance", ok}});
        }
        out["cumulative_efficacy"] = rows;
        out["cumulative_efficacy_within_tolerance"] = all && vals.size() == r.efficacy_cumulative.size();

        // Sample size implied by the reference efficacy values when the only
        // early exits are efficacy stops.
        if (vals.size() == r.design.analyses() && !r.design.has_futility()) {
            double implied = 0.0, prev = 0.0;
            for (std::size_t t = 0; t + 1 < vals.size(); ++t) {
                implied += (vals[t] - prev) * static_cast<double>(r.design.schedule[t]);
                prev = vals[t];
            }
            implied += (1.0 - prev) * static_cast<double>(r.design.max_n());
            out["iess_implied_by_reference_efficacy"] = implied;
        }
    }
    auto scalar = [&](const char* key, double computed) {
        if (!ref.contains(key)) return;
        const double v = ref[key].get<double>();
        const double rel = std::abs(computed - v) / std::max(std::abs(v), 1e-12);
        nlohmann::json e = {{"reference", v}, {"computed", computed}, {"relative_difference", rel}};
        e["discrepancy"] = rel > 0.02;
        if (rel > 0.02) {
            e["note"] = "reference value is not reproduced by the stated formula applied to the computed stopping probabilities";
        }
        out[key] = e;
    };
    scalar("iess", r.iess);
    if (r.cost) scalar("iec", r.iec.total);
    return out;
}

}  // namespace

OcReport evaluate_design(const TrialDesign& design, const PreparedPrior& prior, const MvnConfig& mvn,
                         const std::optional<CostSpec>& cost) {
    design.validate();
    if (cost) cost->validate();
    const std::size_t K = prior.size();
    if (K == 0) throw InvalidSize("evaluate_design: empty design-prior sample");
    const StoppingKernel kernel(design, mvn);
    const std::size_t T = design.analyses();
    const Layout lay{T};
    const std::size_t S = prior.states;
    const std::size_t per_state = T + 2;

    std::vector<ChunkAccum> chunks(chunk_count(K));
    parallel_for(chunks.size(), [&](std::size_t c) {
        ChunkAccum acc{Moments(lay.size()), std::vector<double>(S * per_state, 0.0)};
        OutcomeEvaluator ev(design, kernel, cost);
        ThetaOutcome o;
        const std::size_t end = std::min(K, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            const double psi = prior.psi[i];
            const bool null_true = psi <= design.psi0;
            ev.eval(psi, prior.lambda[i], o);
            double cum = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                cum += o.eff[t];
                acc.plug.add(lay.eff(t), o.eff[t]);
                acc.plug.add(lay.cum(t), cum);
                acc.plug.add(lay.fut(t), o.fut[t]);
            }
            acc.plug.add(lay.ess(), o.ess);
            acc.plug.add(lay.loss(), o.loss);
            acc.plug.add(lay.type1(), null_true ? o.success : 0.0);
            acc.plug.add(lay.type2(), null_true ? 0.0 : 1.0 - o.success);
            acc.plug.add(lay.ess_var(), o.ess2 - o.ess * o.ess);
            acc.plug.add(lay.loss_var(), o.loss2 - o.loss * o.loss);
            for (std::size_t s = 0; s < S; ++s) {
                ev.eval(psi, prior.state_lambda[i * S + s], o);
                double* row = &acc.state[s * per_state];
                double cs = 0.0;
                for (std::size_t t = 0; t < T; ++t) {
                    cs += o.eff[t];
                    row[t] += cs;
                }
                row[T] += o.ess;
                row[T + 1] += o.loss;
            }
        }
        chunks[c] = std::move(acc);
    });

    Moments tot(lay.size());
    std::vector<double> state(S * per_state, 0.0);
    for (const auto& ch : chunks) {
        tot.merge(ch.plug);
        for (std::size_t i = 0; i < state.size(); ++i) state[i] += ch.state[i];
    }

    const double Kd = static_cast<double>(K);
    const double M = static_cast<double>(kernel.draws());
    auto se = [&](std::size_t idx) {
        const double p = tot.mean(idx, Kd);
        return std::sqrt(tot.var(idx, Kd) / Kd + std::max(0.0, p * (1.0 - p)) / M);
    };

    OcReport r;
    r.design = design;
    r.prior_draws = K;
    r.mvn_draws = kernel.draws();
    r.lambda_states = S;
    r.extrapolated = prior.outside_box;
    double ended = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        r.efficacy_stop_at.push_back(tot.mean(lay.eff(t), Kd));
        r.efficacy_cumulative.push_back(tot.mean(lay.cum(t), Kd));
        r.efficacy_stop_at_se.push_back(se(lay.eff(t)));
        r.efficacy_cumulative_se.push_back(se(lay.cum(t)));
        if (design.has_futility()) {
            r.futility_stop_at.push_back(tot.mean(lay.fut(t), Kd));
            r.futility_stop_at_se.push_back(se(lay.fut(t)));
        }
        const double e = r.efficacy_stop_at.back() + (design.has_futility() ? r.futility_stop_at.back() : 0.0);
        r.end_at.push_back(e);
        ended += e;
    }
    // Cumulative efficacy must be non-decreasing; partial sums guarantee it.
    std::partial_sum(r.efficacy_stop_at.begin(), r.efficacy_stop_at.end(), r.efficacy_cumulative.begin());
    if (design.has_futility()) {
        r.futility_cumulative.resize(T);
        std::partial_sum(r.futility_stop_at.begin(), r.futility_stop_at.end(), r.futility_cumulative.begin());
    }
    r.no_success = std::max(0.0, 1.0 - ended);
    r.end_at.back() += r.no_success;
    r.iess = tot.mean(lay.ess(), Kd);
    r.iess_se = std::sqrt(tot.var(lay.ess(), Kd) / Kd + tot.mean(lay.ess_var(), Kd) / M);
    if (cost) {
        r.cost = cost;
        r.iec.type1 = cost->c0 * tot.mean(lay.type1(), Kd);
        r.iec.type2 = cost->c1 * tot.mean(lay.type2(), Kd);
        r.iec.sample_size = cost->c2 * r.iess;
        r.iec.total = r.iec.type1 + r.iec.type2 + r.iec.sample_size;
        r.iec_se = std::sqrt(tot.var(lay.loss(), Kd) / Kd + tot.mean(lay.loss_var(), Kd) / M);
    }

    if (S >= 50) {
        std::vector<double> v(S);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t s = 0; s < S; ++s) v[s] = state[s * per_state + t] / Kd;
            r.efficacy_cumulative_interval.push_back(power_uncertainty(v));
        }
        for (std::size_t s = 0; s < S; ++s) v[s] = state[s * per_state + T] / Kd;
        r.iess_interval = power_uncertainty(v);
        if (cost) {
            for (std::size_t s = 0; s < S; ++s) v[s] = state[s * per_state + T + 1] / Kd;
            r.iec_interval = power_uncertainty(v);
        }
    } else if (S > 0) {
        r.warnings.push_back("fewer than 50 lambda posterior states; uncertainty intervals omitted");
    }
    if (prior.outside_box > 0) {
        r.warnings.push_back(std::to_string(prior.outside_box) + " of " + std::to_string(K) +
                             " design-prior draws lie outside the inflated training box (extrapolation)");
    }
    r.reference_check = reference_check(r);
    return r;
}

OcReport assurance(const TrialDesign& design, std::span<const ParameterPoint> prior_sample,
                   const ModelSpec& spec, const LambdaSource& source, const MvnConfig& mvn,
                   const std::optional<CostSpec>& cost) {
    return evaluate_design(design, prepare_prior(spec, prior_sample, source), mvn, cost);
}

double iess(const TrialDesign& design, std::span<const double> end_at) {
    design.validate();
    if (end_at.size() != design.analyses()) throw InvalidSize("iess: one probability per analysis required");
    double total = 0.0, value = 0.0;
    for (std::size_t t = 0; t < end_at.size(); ++t) {
        if (!(end_at[t] >= -1e-12 && end_at[t] <= 1.0 + 1e-12)) throw InvalidParameter("iess: probability outside [0, 1]");
        total += end_at[t];
        value += end_at[t] * static_cast<double>(design.schedule[t]);
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidParameter("iess: end-of-trial probabilities must sum to 1");
    return value;
}

double iess(const TrialDesign& design, const StopProbabilities& probs) { return iess(design, probs.end_at()); }

IecBreakdown iec(const TrialDesign& design, const CostSpec& cost, std::span<const ParameterPoint> prior_sample,
                 const ModelSpec& spec, const LambdaSource& source, const MvnConfig& mvn) {
    return assurance(design, prior_sample, spec, source, mvn, cost).iec;
}

// ---------------------------------------------------------- curves

std::vector<CurvePoint> integrated_power_curve(std::span<const double> psi_grid, const TrialDesign& design,
                                               std::span<const ParameterPoint> nuisance_sample,
                                               const ModelSpec& spec, const LambdaSource& source,
                                               const MvnConfig& mvn) {
    if (psi_grid.empty()) throw InvalidSize("curve: empty psi grid");
    for (double g : psi_grid) {
        if (!std::isfinite(g)) throw InvalidParameter("curve: psi grid values must be finite");
    }
    if (nuisance_sample.empty()) throw InvalidSize("curve: empty nuisance sample");
    const StoppingKernel kernel(design, mvn);
    const std::size_t T = design.analyses();
    const std::size_t K = nuisance_sample.size();
    const std::size_t coord = spec->psi_coordinate();
    const double Kd = static_cast<double>(K), M = static_cast<double>(kernel.draws());

    std::vector<CurvePoint> out;
    for (double g : psi_grid) {
        const double value = spec->coordinate_for_psi(g);
        std::vector<Moments> chunks(chunk_count(K), Moments(2 * T));
        parallel_for(chunks.size(), [&](std::size_t c) {
            std::vector<std::size_t> e(T), f(T);
            const std::size_t end = std::min(K, (c + 1) * kChunk);
            for (std::size_t i = c * kChunk; i < end; ++i) {
                ParameterPoint theta = nuisance_sample[i];
                theta.values[coord] = value;
                const double psi = spec->psi(theta);
                const double lambda = source.plug_in(theta.span());
                kernel.counts((psi - design.psi0) / lambda, e, f);
                double ce = 0.0, cf = 0.0;
                for (std::size_t t = 0; t < T; ++t) {
                    ce += static_cast<double>(e[t]) / M;
                    cf += static_cast<double>(f[t]) / M;
                    chunks[c].add(t, ce);
                    chunks[c].add(T + t, cf);
                }
            }
        });
        Moments tot(2 * T);
        for (const auto& m : chunks) tot.merge(m);
        CurvePoint p;
        p.psi = g;
        for (std::size_t t = 0; t < T; ++t) {
            const double v = tot.mean(t, Kd);
            p.efficacy_cumulative.push_back(v);
            p.efficacy_se.push_back(std::sqrt(tot.var(t, Kd) / Kd + v * (1.0 - v) / M));
            p.futility_cumulative.push_back(tot.mean(T + t, Kd));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<double> default_psi_grid(const ModelSpec& spec, const DesignPrior& prior, std::size_t points) {
    if (points < 2) throw InvalidSize("default_psi_grid: need at least 2 points");
    const std::size_t coord = spec->psi_coordinate();
    if (coord >= prior.dimension()) throw InvalidSize("default_psi_grid: prior dimension mismatch");
    const auto& comp = prior.components()[coord];
    const double m = comp.mean(), s = comp.sd();
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i) {
        grid[i] = m - 3.0 * s + 6.0 * s * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return grid;
}

void write_curve_csv(std::ostream& os, const TrialDesign& design, const std::vector<CurvePoint>& curve) {
    os << "design,psi,analysis,n,efficacy_cumulative,se,futility_cumulative\n";
    for (const auto& p : curve) {
        for (std::size_t t = 0; t < p.efficacy_cumulative.size(); ++t) {
            os << design.name << ',' << format_double(p.psi) << ',' << t + 1 << ',' << design.schedule[t] << ','
               << format_double(p.efficacy_cumulative[t]) << ',' << format_double(p.efficacy_se[t]) << ','
               << format_double(p.futility_cumulative[t]) << '\n';
        }
    }
}

nlohmann::json curve_to_json(const TrialDesign& design, const std::vector<CurvePoint>& curve) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : curve) {
        pts.push_back({{"psi", p.psi},
                       {"efficacy_cumulative", p.efficacy_cumulative},
                       {"se", p.efficacy_se},
                       {"futility_cumulative", p.futility_cumulative}});
    }
    return {{"design", design.to_json()}, {"points", pts}};
}

// ---------------------------------------------------------- reports

namespace {

nlohmann::json interval_json(const Interval& i) { return {{"mean", i.mean}, {"lo", i.lo}, {"hi", i.hi}}; }

}  // namespace

nlohmann::json OcReport::to_json() const {
    nlohmann::json j;
    j["source"] = source;
    j["design"] = design.to_json();
    j["efficacy"] = {{"stop_at", efficacy_stop_at},
                     {"stop_at_se", efficacy_stop_at_se},
                     {"cumulative", efficacy_cumulative},
                     {"cumulative_se", efficacy_cumulative_se}};
    if (!efficacy_cumulative_interval.empty()) {
        nlohmann::json iv = nlohmann::json::array();
        for (const auto& i : efficacy_cumulative_interval) iv.push_back(interval_json(i));
        j["efficacy"]["cumulative_interval"] = iv;
    }
    if (!futility_stop_at.empty()) {
        j["futility"] = {{"stop_at", futility_stop_at},
                         {"stop_at_se", futility_stop_at_se},
                         {"cumulative", futility_cumulative}};
    }
    j["end_at"] = end_at;
    j["no_success"] = no_success;
    j["iess"] = {{"value", iess}, {"se", iess_se}};
    if (iess_interval) j["iess"]["interval"] = interval_json(*iess_interval);
    if (cost) {
        j["cost"] = cost->to_json();
        j["iec"] = {{"value", iec.total},
                    {"se", iec_se},
                    {"type1", iec.type1},
                    {"type2", iec.type2},
                    {"sample_size", iec.sample_size}};
        if (iec_interval) j["iec"]["interval"] = interval_json(*iec_interval);
    }
    j["prior_draws"] = prior_draws;
    j["mvn_draws"] = mvn_draws;
    j["lambda_states"] = lambda_states;
    j["extrapolated"] = extrapolated;
    j["warnings"] = warnings;
    if (!reference_check.is_null()) j["reference_check"] = reference_check;
    return j;
}

void OcReport::write_csv(std::ostream& os, bool header) const {
    if (header) os << "source,design,analysis,n,quantity,value,se,lo,hi\n";
    auto row = [&](const std::string& analysis, const std::string& n, const char* q, double v, double se,
                   const Interval* iv) {
        os << source << ',' << design.name << ',' << analysis << ',' << n << ',' << q << ',' << format_double(v)
           << ',' << format_double(se) << ',' << (iv ? format_double(iv->lo) : "") << ','
           << (iv ? format_double(iv->hi) : "") << '\n';
    };
    for (std::size_t t = 0; t < efficacy_stop_at.size(); ++t) {
        const std::string a = std::to_string(t + 1), n = std::to_string(design.schedule[t]);
        row(a, n, "efficacy_stop_at", efficacy_stop_at[t], efficacy_stop_at_se[t], nullptr);
        row(a, n, "efficacy_cumulative", efficacy_cumulative[t], efficacy_cumulative_se[t],
            efficacy_cumulative_interval.empty() ? nullptr : &efficacy_cumulative_interval[t]);
        if (!futility_stop_at.empty()) {
            row(a, n, "futility_stop_at", futility_stop_at[t], futility_stop_at_se[t], nullptr);
        }
        row(a, n, "end_at", end_at[t], 0.0, nullptr);
    }
    row("", "", "iess", iess, iess_se, iess_interval ? &*iess_interval : nullptr);
    if (cost) {
        row("", "", "iec", iec.total, iec_se, iec_interval ? &*iec_interval : nullptr);
        row("", "", "iec_type1", iec.type1, 0.0, nullptr);
        row("", "", "iec_type2", iec.type2, 0.0, nullptr);
        row("", "", "iec_sample_size", iec.sample_size, 0.0, nullptr);
    }
}

// ---------------------------------------------------------- optimization

std::string to_string(Objective o) { return o == Objective::min_iec ? "min-iec" : "min-iess"; }

Objective parse_objective(const std::string& s) {
    if (s == "min-iec") return Objective::min_iec;
    if (s == "min-iess") return Objective::min_iess;
    throw ConfigError("unknown objective '" + s + "' (expected min-iec or min-iess)");
}

OptimizationResult optimize_design(std::span<const TrialDesign> candidates, Objective objective,
                                   const CostSpec& cost, double target, const PreparedPrior& prior,
                                   const MvnConfig& mvn) {
    if (candidates.empty()) throw InvalidSize("optimize_design: no candidate designs");
    if (objective == Objective::min_iess && !(target > 0.0 && target < 1.0)) {
        throw InvalidParameter("optimize_design: target must lie in (0, 1)");
    }
    OptimizationResult result;
    std::vector<RankedDesign> scored;
    double best_assurance = -1.0;
    std::string best_name;
    for (const auto& d : candidates) {
        const OcReport r = evaluate_design(d, prior, mvn, cost);
        RankedDesign rd;
        rd.name = d.name;
        rd.final_assurance = r.efficacy_cumulative.back();
        rd.iess = r.iess;
        rd.iec = r.iec.total;
        rd.max_n = d.max_n();
        rd.analyses = d.analyses();
        if (rd.final_assurance > best_assurance) {
            best_assurance = rd.final_assurance;
            best_name = d.name;
        }
        if (objective == Objective::min_iess) {
            if (rd.final_assurance < target) continue;
            rd.score = rd.iess;
        } else {
            rd.score = rd.iec;
        }
        scored.push_back(rd);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const RankedDesign& a, const RankedDesign& b) {
        if (a.score != b.score) return a.score < b.score;
        if (a.max_n != b.max_n) return a.max_n < b.max_n;
        return a.analyses < b.analyses;
    });
    for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = i + 1;
    result.ranking = std::move(scored);
    if (result.ranking.empty()) {
        result.diagnostic = "no candidate reaches final assurance " + format_double(target) + "; best is '" +
                            best_name + "' at " + format_double(best_assurance);
    }
    return result;
}

void OptimizationResult::write_csv(std::ostream& os) const {
    os << "rank,design,score,final_assurance,iess,iec,max_n,analyses\n";
    for (const auto& r : ranking) {
        os << r.rank << ',' << r.name << ',' << format_double(r.score) << ',' << format_double(r.final_assurance)
           << ',' << format_double(r.iess) << ',' << format_double(r.iec) << ',' << r.max_n << ',' << r.analyses
           << '\n';
    }
}

nlohmann::json OptimizationResult::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : ranking) {
        rows.push_back({{"rank", r.rank},
                        {"design", r.name},
                        {"score", r.score},
                        {"final_assurance", r.final_assurance},
                        {"iess", r.iess},
                        {"iec", r.iec},
                        {"max_n", r.max_n},
                        {"analyses", r.analyses}});
    }
    nlohmann::json j = {{"ranking", rows}};
    if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
    return j;
}

}  // namespace bvmdesign

#include "bvmdesign/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"

namespace bvmdesign {

namespace {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Permuted blocks of two: patients 2k and 2k+1 receive one of each arm in a
// random order, so every prefix is balanced to within one patient.
class BlockRandomizer {
  public:
    explicit BlockRandomizer(Rng& rng) : rng_(rng) {}
    double next() {
        if (index_ % 2 == 0) first_ = (rng_() >> 63) != 0 ? 1.0 : 0.0;
        const double a = (index_ % 2 == 0) ? first_ : 1.0 - first_;
        ++index_;
        return a;
    }

  private:
    Rng& rng_;
    std::size_t index_ = 0;
    double first_ = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// ParameterPoint / Dataset

ParameterPoint::ParameterPoint(std::vector<double> v, std::vector<std::string> n)
    : values(std::move(v)), names(std::move(n)) {
    if (values.size() != names.size()) {
        throw InvalidParameter("parameter point: " + std::to_string(values.size()) +
                               " values but " + std::to_string(names.size()) + " names");
    }
}

double ParameterPoint::at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return values[i];
    }
    throw InvalidParameter("parameter point has no component '" + std::string(name) + "'");
}

Dataset::Dataset(std::string model_id, std::vector<std::string> columns)
    : model_id_(std::move(model_id)), columns_(std::move(columns)) {}

std::size_t Dataset::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i] == name) return i;
    }
    throw InvalidParameter("dataset has no column '" + std::string(name) + "'");
}

void Dataset::append(std::span<const double> record) {
    if (record.size() != cols()) throw InvalidSize("dataset record has the wrong width");
    values_.insert(values_.end(), record.begin(), record.end());
}

Dataset Dataset::prefix(std::size_t n) const {
    if (n > rows()) throw InvalidSize("prefix longer than dataset");
    Dataset out(model_id_, columns_);
    out.values_.assign(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(n * cols()));
    return out;
}

void Dataset::write_csv(std::ostream& os) const {
    for (std::size_t c = 0; c < cols(); ++c) os << (c ? "," : "") << columns_[c];
    os << '\n';
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t c = 0; c < cols(); ++c) os << (c ? "," : "") << format_double(at(r, c));
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// AnalysisPrior / Model base

void AnalysisPrior::validate(std::size_t dimension) const {
    if (means.size() != dimension || sds.size() != dimension) {
        throw InvalidParameter("analysis prior dimension does not match the model");
    }
    for (double s : sds) {
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidParameter("analysis prior sd must be positive");
    }
}

double AnalysisPrior::log_density(std::span<const double> x) const {
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = (x[i] - means[i]) / sds[i];
        lp -= 0.5 * z * z + std::log(sds[i]);
    }
    return lp;
}

void Model::check_dimension(const ParameterPoint& theta) const {
    if (theta.size() != dimension()) {
        throw InvalidParameter(id() + ": expected " + std::to_string(dimension()) +
                               " parameters, got " + std::to_string(theta.size()));
    }
    for (double v : theta.values) {
        if (!std::isfinite(v)) throw InvalidParameter(id() + ": non-finite parameter value");
    }
}

void Model::validate(const ParameterPoint& theta) const { check_dimension(theta); }

ParameterPoint Model::make_point(std::vector<double> values) const {
    ParameterPoint p(std::move(values), parameter_names());
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------
// Logistic subgroup model

const std::vector<std::string>& LogisticSubgroupModel::parameter_names() const {
    static const std::vector<std::string> names{"beta0", "beta1", "psi0", "psi1"};
    return names;
}

const std::vector<std::string>& LogisticSubgroupModel::analysis_names() const {
    return parameter_names();
}

double LogisticSubgroupModel::psi(const ParameterPoint& theta) const {
    validate(theta);
    return theta[2];
}

Dataset LogisticSubgroupModel::simulate(const ParameterPoint& theta, std::size_t n,
                                        std::uint64_t seed) const {
    validate(theta);
    if (n < 2) throw InvalidSize("simulate_dataset: n must be at least 2");
    Rng rng(seed);
    BlockRandomizer arms(rng);
    Dataset data(id(), {"y", "A", "x"});
    data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = arms.next();
        const double x = uniform01(rng) < 0.5 ? 1.0 : 0.0;
        const double eta = theta[0] + theta[1] * x + (theta[2] + theta[3] * x) * a;
        const double p = 1.0 / (1.0 + std::exp(-eta));
        const double y = uniform01(rng) < p ? 1.0 : 0.0;
        const std::array<double, 3> rec{y, a, x};
        data.append(rec);
    }
    return data;
}

double LogisticSubgroupModel::log_likelihood(const ParameterPoint& theta, const Dataset& data) const {
    validate(theta);
    const std::size_t iy = data.column_index("y"), ia = data.column_index("A"),
                      ix = data.column_index("x");
    double ll = 0.0;
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const double y = data.at(r, iy), a = data.at(r, ia), x = data.at(r, ix);
        const double eta = theta[0] + theta[1] * x + (theta[2] + theta[3] * x) * a;
        ll += y * eta - softplus(eta);
    }
    return ll;
}

AnalysisPrior LogisticSubgroupModel::default_analysis_prior() const {
    return {{0.0, 0.0, 0.0, 0.0}, {2.5, 2.5, 2.5, 2.5}};
}

LogDensityFn LogisticSubgroupModel::analysis_log_likelihood(const Dataset& data) const {
    // Sufficient statistics: trials and successes in each (x, A) cell.
    std::array<double, 4> trials{}, successes{};
    const std::size_t iy = data.column_index("y"), ia = data.column_index("A"),
                      ix = data.column_index("x");
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const int cell = 2 * static_cast<int>(data.at(r, ix)) + static_cast<int>(data.at(r, ia));
        trials[cell] += 1.0;
        successes[cell] += data.at(r, iy);
    }
    return [trials, successes](std::span<const double> b) {
        double ll = 0.0;
        for (int cell = 0; cell < 4; ++cell) {
            if (trials[cell] == 0.0) continue;
            const double x = cell / 2, a = cell % 2;
            const double eta = b[0] + b[1] * x + (b[2] + b[3] * x) * a;
            ll += successes[cell] * eta - trials[cell] * softplus(eta);
        }
        return ll;
    };
}

// ---------------------------------------------------------------------------
// Piecewise-exponential survival model

const std::vector<std::string>& PiecewiseExpSurvivalModel::parameter_names() const {
    static const std::vector<std::string> names{"h1", "h2", "h3", "h4", "beta", "kappa"};
    return names;
}

const std::vector<std::string>& PiecewiseExpSurvivalModel::analysis_names() const {
    static const std::vector<std::string> names{"log_h1", "log_h2", "log_h3", "log_h4", "beta"};
    return names;
}

void PiecewiseExpSurvivalModel::validate(const ParameterPoint& theta) const {
    check_dimension(theta);
    for (int j = 0; j < kIntervals; ++j) {
        if (!(theta[j] > 0.0)) {
            throw InvalidParameter("piecewise-exp-survival: hazard h" + std::to_string(j + 1) +
                                   " must be positive");
        }
    }
    if (!(theta[5] >= 0.0 && theta[5] <= 1.0)) {
        throw InvalidParameter("piecewise-exp-survival: kappa must lie in [0, 1]");
    }
}

double PiecewiseExpSurvivalModel::psi(const ParameterPoint& theta) const {
    validate(theta);
    return theta[4];
}

int PiecewiseExpSurvivalModel::interval_of(double s) {
    // [0,7] -> 0, (7,14] -> 1, (14,21] -> 2, (21, inf) -> 3
    if (s <= kIntervalLength) return 0;
    if (s <= 2 * kIntervalLength) return 1;
    if (s <= 3 * kIntervalLength) return 2;
    return 3;
}

double PiecewiseExpSurvivalModel::cumulative_hazard(std::span<const double> rates, double s) {
    double h = 0.0;
    for (int j = 0; j < kIntervals; ++j) {
        const double start = j * kIntervalLength;
        if (s <= start) break;
        const double end = (j == kIntervals - 1) ? s : std::min(s, start + kIntervalLength);
        h += rates[j] * (end - start);
    }
    return h;
}

Dataset PiecewiseExpSurvivalModel::simulate(const ParameterPoint& theta, std::size_t n,
                                            std::uint64_t seed) const {
    validate(theta);
    if (n < 2) throw InvalidSize("simulate_dataset: n must be at least 2");
    Rng rng(seed);
    BlockRandomizer arms(rng);
    const double beta = theta[4], kappa = theta[5];
    Dataset data(id(), {"s", "delta", "A"});
    data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = arms.next();
        const double scale = std::exp(beta * a);

        // Inverse CDF on the piecewise-linear cumulative hazard.
        double remaining = -std::log1p(-uniform01(rng));
        double event_time = std::numeric_limits<double>::infinity();
        for (int j = 0; j < kIntervals; ++j) {
            const double rate = theta[j] * scale;
            const double width = (j == kIntervals - 1) ? std::numeric_limits<double>::infinity()
                                                       : kIntervalLength;
            if (remaining <= rate * width) {
                event_time = j * kIntervalLength + remaining / rate;
                break;
            }
            remaining -= rate * width;
        }

        // Visit on day 7v: a still-unresolved patient drops out with
        // probability kappa and is censored at the previous visit.
        double s = 0.0, delta = 0.0;
        bool dropped = false;
        for (int v = 1; v <= kIntervals; ++v) {
            const double visit = v * kIntervalLength;
            if (event_time <= visit) break;
            if (uniform01(rng) < kappa) {
                s = visit - kIntervalLength;
                dropped = true;
                break;
            }
        }
        if (!dropped) {
            if (event_time <= kFollowUp) {
                s = event_time;
                delta = 1.0;
            } else {
                s = kFollowUp;
            }
        }
        const std::array<double, 3> rec{s, delta, a};
        data.append(rec);
    }
    return data;
}

double PiecewiseExpSurvivalModel::log_likelihood(const ParameterPoint& theta,
                                                 const Dataset& data) const {
    validate(theta);
    const std::size_t is = data.column_index("s"), id_ = data.column_index("delta"),
                      ia = data.column_index("A");
    const double beta = theta[4];
    double ll = 0.0;
    std::array<double, kIntervals> rates{};
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const double s = data.at(r, is), delta = data.at(r, id_), a = data.at(r, ia);
        const double scale = std::exp(beta * a);
        for (int j = 0; j < kIntervals; ++j) rates[j] = theta[j] * scale;
        if (delta > 0.5) ll += std::log(rates[interval_of(s)]);
        ll -= cumulative_hazard(rates, s);
    }
    return ll;
}

AnalysisPrior PiecewiseExpSurvivalModel::default_analysis_prior() const {
    return {{0.0, 0.0, 0.0, 0.0, 0.0}, {10.0, 10.0, 10.0, 10.0, 10.0}};
}

LogDensityFn PiecewiseExpSurvivalModel::analysis_log_likelihood(const Dataset& data) const {
    // Events and exposure per (arm, interval).
    std::array<std::array<double, kIntervals>, 2> events{}, exposure{};
    const std::size_t is = data.column_index("s"), id_ = data.column_index("delta"),
                      ia = data.column_index("A");
    for (std::size_t r = 0; r < data.rows(); ++r) {
        const double s = data.at(r, is);
        const int a = data.at(r, ia) > 0.5 ? 1 : 0;
        if (data.at(r, id_) > 0.5) events[a][interval_of(s)] += 1.0;
        for (int j = 0; j < kIntervals; ++j) {
            const double start = j * kIntervalLength;
            const double end = (j == kIntervals - 1) ? s : std::min(s, start + kIntervalLength);
            if (end > start) exposure[a][j] += end - start;
        }
    }
    return [events, exposure](std::span<const double> u) {
        const double beta = u[4];
        double ll = 0.0;
        for (int j = 0; j < kIntervals; ++j) {
            for (int a = 0; a < 2; ++a) {
                const double log_rate = u[j] + beta * a;
                ll += events[a][j] * log_rate - std::exp(log_rate) * exposure[a][j];
            }
        }
        return ll;
    };
}

// ---------------------------------------------------------------------------

std::shared_ptr<const Model> make_model(std::string_view id) {
    if (id == "logistic-subgroup") return std::make_shared<LogisticSubgroupModel>();
    if (id == "piecewise-exp-survival") return std::make_shared<PiecewiseExpSurvivalModel>();
    throw ConfigError("unknown model '" + std::string(id) + "'");
}

double psi(const ModelSpec& spec, const ParameterPoint& theta) { return spec->psi(theta); }

Dataset simulate_dataset(const ModelSpec& spec, const ParameterPoint& theta, std::size_t n,
                         std::uint64_t seed) {
    return spec->simulate(theta, n, seed);
}

double log_likelihood(const ModelSpec& spec, const ParameterPoint& theta, const Dataset& data) {
    return spec->log_likelihood(theta, data);
}

// ---------------------------------------------------------------------------
// Design prior

MarginalPrior::MarginalPrior(std::string name, MarginalKind kind, double a, double b)
    : name_(std::move(name)), kind_(kind), a_(a), b_(b) {
    if (!std::isfinite(a) || !std::isfinite(b)) {
        throw InvalidParameter("prior '" + name_ + "': non-finite parameter");
    }
    if (kind == MarginalKind::uniform) {
        if (!(a < b)) throw InvalidParameter("prior '" + name_ + "': uniform needs lo < hi");
    } else if (!(b > 0.0)) {
        throw InvalidParameter("prior '" + name_ + "': sd must be positive");
    }
}

double MarginalPrior::sample(Rng& rng) const {
    switch (kind_) {
        case MarginalKind::normal:
            return std::normal_distribution<double>(a_, b_)(rng);
        case MarginalKind::lognormal:
            return std::exp(std::normal_distribution<double>(a_, b_)(rng));
        case MarginalKind::uniform:
            return a_ + (b_ - a_) * uniform01(rng);
    }
    return 0.0;
}

double MarginalPrior::mean() const {
    switch (kind_) {
        case MarginalKind::normal: return a_;
        case MarginalKind::lognormal: return std::exp(a_ + 0.5 * b_ * b_);
        case MarginalKind::uniform: return 0.5 * (a_ + b_);
    }
    return 0.0;
}

double MarginalPrior::sd() const {
    switch (kind_) {
        case MarginalKind::normal: return b_;
        case MarginalKind::lognormal:
            return std::sqrt(std::expm1(b_ * b_)) * std::exp(a_ + 0.5 * b_ * b_);
        case MarginalKind::uniform: return (b_ - a_) / std::sqrt(12.0);
    }
    return 0.0;
}

DesignPrior::DesignPrior(std::vector<MarginalPrior> components) : components_(std::move(components)) {
    if (components_.empty()) throw InvalidParameter("design prior has no components");
}

std::vector<std::string> DesignPrior::names() const {
    std::vector<std::string> out;
    for (const auto& c : components_) out.push_back(c.name());
    return out;
}

std::vector<double> DesignPrior::means() const {
    std::vector<double> out;
    for (const auto& c : components_) out.push_back(c.mean());
    return out;
}

DesignPrior DesignPrior::point_mass(const ParameterPoint& theta, double sd) {
    std::vector<MarginalPrior> comps;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        comps.emplace_back(theta.names[i], MarginalKind::normal, theta[i], sd);
    }
    return DesignPrior(std::move(comps));
}

std::vector<ParameterPoint> sample_design_prior(const DesignPrior& prior, std::size_t k,
                                                std::uint64_t seed) {
    if (k == 0) throw InvalidSize("sample_design_prior: k must be at least 1");
    if (prior.dimension() == 0) throw InvalidParameter("sample_design_prior: empty prior");
    Rng rng(derive_seed(seed, 0x5052494f52ULL));
    const auto names = prior.names();
    std::vector<ParameterPoint> out;
    out.reserve(k);
    std::vector<double> v(prior.dimension());
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t d = 0; d < prior.dimension(); ++d) v[d] = prior.components()[d].sample(rng);
        out.emplace_back(v, names);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Design box

DesignBox::DesignBox(std::vector<std::string> names, std::vector<double> lo, std::vector<double> hi)
    : names_(std::move(names)), lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.size() != hi_.size() || names_.size() != lo_.size() || lo_.empty()) {
        throw InvalidParameter("design box: mismatched or empty bounds");
    }
    for (std::size_t i = 0; i < lo_.size(); ++i) {
        if (!(lo_[i] < hi_[i]) || !std::isfinite(lo_[i]) || !std::isfinite(hi_[i])) {
            throw InvalidParameter("design box: need lo < hi for '" + names_[i] + "'");
        }
    }
}

bool DesignBox::contains(std::span<const double> x, double inflate) const {
    if (x.size() != lo_.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double pad = inflate * (hi_[i] - lo_[i]);
        if (x[i] < lo_[i] - pad || x[i] > hi_[i] + pad) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// JSON

DesignPrior parse_design_prior(const nlohmann::json& arr) {
    if (!arr.is_array() || arr.empty()) throw ConfigError("design_prior must be a non-empty array");
    std::vector<MarginalPrior> comps;
    for (const auto& item : arr) {
        const auto name = item.at("name").get<std::string>();
        const auto dist = item.at("dist").get<std::string>();
        const auto params = item.at("params").get<std::vector<double>>();
        if (params.size() != 2) throw ConfigError("prior '" + name + "': expected two params");
        MarginalKind kind;
        if (dist == "normal") kind = MarginalKind::normal;
        else if (dist == "lognormal") kind = MarginalKind::lognormal;
        else if (dist == "uniform") kind = MarginalKind::uniform;
        else throw ConfigError("prior '" + name + "': unknown dist '" + dist + "'");
        comps.emplace_back(name, kind, params[0], params[1]);
    }
    return DesignPrior(std::move(comps));
}

nlohmann::json design_prior_to_json(const DesignPrior& prior) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : prior.components()) {
        const char* dist = c.kind() == MarginalKind::normal      ? "normal"
                           : c.kind() == MarginalKind::lognormal ? "lognormal"
                                                                 : "uniform";
        arr.push_back({{"name", c.name()}, {"dist", dist}, {"params", {c.a(), c.b()}}});
    }
    return arr;
}

DesignBox parse_design_box(const nlohmann::json& arr) {
    if (!arr.is_array() || arr.empty()) throw ConfigError("design_box must be a non-empty array");
    std::vector<std::string> names;
    std::vector<double> lo, hi;
    for (const auto& item : arr) {
        names.push_back(item.at("name").get<std::string>());
        lo.push_back(item.at("lo").get<double>());
        hi.push_back(item.at("hi").get<double>());
    }
    return DesignBox(std::move(names), std::move(lo), std::move(hi));
}

StudyConfig parse_study_config(const nlohmann::json& doc) {
    try {
        StudyConfig cfg;
        cfg.document = doc;
        cfg.spec.model = make_model(doc.at("model").get<std::string>());
        cfg.spec.hypothesis.psi0 = doc.value("psi0", 0.0);
        cfg.design_prior = parse_design_prior(doc.at("design_prior"));
        if (cfg.design_prior.names() != cfg.spec->parameter_names()) {
            throw ConfigError("design_prior components must be, in order: " +
                              join(cfg.spec->parameter_names(), ", "));
        }
        if (doc.contains("design_box")) {
            cfg.design_box = parse_design_box(doc.at("design_box"));
            if (cfg.design_box->names() != cfg.spec->parameter_names()) {
                throw ConfigError("design_box components must match the model parameters");
            }
        }
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("study config: ") + e.what());
    }
}

StudyConfig load_study_config(const std::string& path) { return parse_study_config(read_json_file(path)); }

}  // namespace bvmdesign

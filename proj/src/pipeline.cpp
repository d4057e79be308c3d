#include "bvmdesign/pipeline.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"

namespace bvmdesign {

TrainingSettings TrainingSettings::from_json(const nlohmann::json& j) {
    TrainingSettings s;
    try {
        s.k = j.value("k", s.k);
        s.n = j.value("n", s.n);
        s.R = j.value("R", s.R);
        s.seed = j.value("seed", s.seed);
        if (j.contains("estimator")) s.estimator = parse_lambda_estimator(j["estimator"].get<std::string>());
        if (j.contains("mcmc")) s.mcmc = McmcConfig::from_json(j["mcmc"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training settings: ") + e.what());
    }
    if (s.k == 0) throw ConfigError("training settings: k must be positive");
    return s;
}

nlohmann::json TrainingSettings::to_json() const {
    return {{"k", k},   {"n", n}, {"R", R}, {"estimator", to_string(estimator)}, {"mcmc", mcmc.to_json()},
            {"seed", seed}};
}

EvaluationSettings EvaluationSettings::from_json(const nlohmann::json& j) { return from_json(j, EvaluationSettings{}); }

EvaluationSettings EvaluationSettings::from_json(const nlohmann::json& j, EvaluationSettings base) {
    try {
        base.prior_draws = j.value("prior_draws", base.prior_draws);
        base.prior_seed = j.value("prior_seed", base.prior_seed);
        base.max_states = j.value("max_states", base.max_states);
        base.curve_draws = j.value("curve_draws", base.curve_draws);
        if (j.contains("mvn")) base.mvn = MvnConfig::from_json(j["mvn"], base.mvn);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("evaluation settings: ") + e.what());
    }
    if (base.prior_draws == 0) throw ConfigError("evaluation settings: prior_draws must be positive");
    if (base.curve_draws == 0) throw ConfigError("evaluation settings: curve_draws must be positive");
    if (base.max_states == 0) throw ConfigError("evaluation settings: max_states must be positive");
    base.mvn.validate();
    return base;
}

nlohmann::json EvaluationSettings::to_json() const {
    return {{"prior_draws", prior_draws}, {"prior_seed", prior_seed}, {"mvn", mvn.to_json()},
            {"max_states", max_states},   {"curve_draws", curve_draws}};
}

EvaluationSettings EvaluationSettings::interactive(EvaluationSettings base) {
    base.prior_draws = std::min<std::size_t>(base.prior_draws, 10000);
    base.mvn.draws = std::min<std::size_t>(base.mvn.draws, 20000);
    base.curve_draws = std::min<std::size_t>(base.curve_draws, 1000);
    return base;
}

TrainingSet train(const StudyConfig& study, const TrainingSettings& settings) {
    if (!study.design_box) throw ConfigError("study config has no design_box; training needs one");
    return build_training_set(*study.spec, study.spec->default_analysis_prior(), *study.design_box, settings.k,
                              settings.n, settings.R, settings.estimator, settings.mcmc, settings.seed);
}

namespace {

void training_matrix(const TrainingSet& training, Matrix& X, std::vector<double>& y) {
    const std::size_t rows = training.rows.size();
    const std::size_t d = training.parameter_names.size();
    X.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    y.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& r = training.rows[i];
        if (r.theta.values.size() != d) throw InvalidSize("training row has the wrong number of parameters");
        for (std::size_t c = 0; c < d; ++c) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r.theta[c];
        if (!(r.lambda_hat > 0.0)) throw InvalidParameter("training lambda_hat must be positive");
        y[i] = std::log(r.lambda_hat);
    }
}

}  // namespace

BartPosterior fit_ensemble(const TrainingSet& training, const BartConfig& config) {
    Matrix X;
    std::vector<double> y;
    training_matrix(training, X, y);
    BartPosterior post = bart_fit(X, y, config);
    post.set_predictor_names(training.parameter_names);
    post.set_response_transform("log");
    return post;
}

std::vector<LoocvRow> loocv_lambda(const TrainingSet& training, const BartConfig& config) {
    Matrix X;
    std::vector<double> y;
    training_matrix(training, X, y);
    const auto cv = loocv(X, y, config);
    std::vector<LoocvRow> out(training.rows.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = {training.rows[i].theta, training.rows[i].lambda_hat, training.rows[i].mc_se,
                  std::exp(cv.mean[i]),   std::exp(cv.lo[i]),          std::exp(cv.hi[i])};
    }
    return out;
}

BartPosterior load_ensemble(const std::string& path) { return BartPosterior::from_json(read_json_file(path)); }

Evaluator::Evaluator(StudyConfig study, std::shared_ptr<const BartPosterior> ensemble, EvaluationSettings settings)
    : study_(std::move(study)), ensemble_(std::move(ensemble)), settings_(std::move(settings)) {
    if (!ensemble_) throw ConfigError("no ensemble supplied");
    const auto& names = ensemble_->predictor_names();
    if (!names.empty() && names != study_.spec->parameter_names()) {
        throw ConfigError("ensemble predictors (" + join(names, ", ") + ") do not match the model parameters (" +
                          join(study_.spec->parameter_names(), ", ") + ")");
    }
    if (ensemble_->dimension() != study_.spec->parameter_names().size()) {
        throw ConfigError("ensemble dimension does not match the model");
    }
    lambda_ = std::make_unique<BartLambda>(ensemble_, settings_.max_states);
    sample_ = sample_design_prior(study_.design_prior, settings_.prior_draws, settings_.prior_seed);
    prepared_ = prepare_prior(study_.spec, sample_, *lambda_);
}

OcReport Evaluator::evaluate(const TrialDesign& design, const std::optional<CostSpec>& cost) const {
    return evaluate_design(design, prepared_, settings_.mvn, cost);
}

std::vector<CurvePoint> Evaluator::curve(std::span<const double> grid, const TrialDesign& design) const {
    design.validate();
    const std::size_t k = std::min(settings_.curve_draws, sample_.size());
    return integrated_power_curve(grid, design, std::span<const ParameterPoint>(sample_).first(k), study_.spec,
                                  *lambda_, settings_.mvn);
}

OptimizationResult Evaluator::optimize(std::span<const TrialDesign> candidates, Objective objective,
                                       const CostSpec& cost, double target) const {
    return optimize_design(candidates, objective, cost, target, prepared_, settings_.mvn);
}

std::vector<TrialDesign> load_designs(const std::string& path, double default_psi0) {
    const auto doc = read_json_file(path);
    std::vector<TrialDesign> out;
    try {
        if (doc.is_object() && doc.contains("designs")) {
            for (const auto& d : doc.at("designs")) out.push_back(TrialDesign::from_json(d, default_psi0));
        } else {
            out.push_back(TrialDesign::from_json(doc, default_psi0));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
    if (out.empty()) throw ConfigError("'" + path + "' contains no designs");
    return out;
}

void write_comparison_csv(std::ostream& os, const std::vector<OcReport>& reports) {
    std::size_t T = 0;
    for (const auto& r : reports) T = std::max(T, r.design.analyses());
    os << "design,max_n";
    for (std::size_t t = 0; t < T; ++t) os << ",ba_" << t + 1;
    os << ",iess,iec\n";
    for (const auto& r : reports) {
        os << r.design.name << ',' << r.design.max_n();
        for (std::size_t t = 0; t < T; ++t) {
            os << ',';
            if (t < r.efficacy_cumulative.size()) os << format_double(r.efficacy_cumulative[t]);
        }
        os << ',' << format_double(r.iess) << ',';
        if (r.cost) os << format_double(r.iec.total);
        os << '\n';
    }
}

std::string comparison_table(const std::vector<OcReport>& reports) {
    std::size_t T = 0;
    for (const auto& r : reports) T = std::max(T, r.design.analyses());
    std::ostringstream os;
    os << std::left << std::setw(12) << "design";
    for (std::size_t t = 0; t < T; ++t) os << std::right << std::setw(9) << ("BA" + std::to_string(t + 1));
    os << std::setw(10) << "IESS" << std::setw(10) << "IEC" << '\n';
    os << std::fixed;
    for (const auto& r : reports) {
        os << std::left << std::setw(12) << r.design.name << std::right;
        for (std::size_t t = 0; t < T; ++t) {
            if (t < r.efficacy_cumulative.size()) {
                os << std::setw(9) << std::setprecision(3) << r.efficacy_cumulative[t];
            } else {
                os << std::setw(9) << "-";
            }
        }
        os << std::setw(10) << std::setprecision(1) << r.iess;
        if (r.cost) {
            os << std::setw(10) << std::setprecision(1) << r.iec.total;
        } else {
            os << std::setw(10) << "-";
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace bvmdesign

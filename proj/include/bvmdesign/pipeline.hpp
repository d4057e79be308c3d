#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvmdesign/bart.hpp"
#include "bvmdesign/design_space.hpp"
#include "bvmdesign/model.hpp"
#include "bvmdesign/oc_engine.hpp"
#include "bvmdesign/posterior.hpp"

namespace bvmdesign {

/// The "training" section of a study document.
struct TrainingSettings {
    std::size_t k = 40;
    std::size_t n = 500;
    std::size_t R = 200;
    LambdaEstimator estimator = LambdaEstimator::sd_of_posterior_means;
    McmcConfig mcmc;
    std::uint64_t seed = 1;

    static TrainingSettings from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// The "evaluation" section: how the design prior and the MVN draws are sampled.
struct EvaluationSettings {
    std::size_t prior_draws = 100000;
    std::uint64_t prior_seed = 1;
    MvnConfig mvn;
    std::size_t max_states = 100;
    std::size_t curve_draws = 2000;

    static EvaluationSettings from_json(const nlohmann::json& j);
    static EvaluationSettings from_json(const nlohmann::json& j, EvaluationSettings base);
    nlohmann::json to_json() const;
    /// Reduced sample used by the interactive service.
    static EvaluationSettings interactive(EvaluationSettings base);
};

TrainingSet train(const StudyConfig& study, const TrainingSettings& settings);

/// Fits log(lambda_hat) on the training parameters.
BartPosterior fit_ensemble(const TrainingSet& training, const BartConfig& config);

struct LoocvRow {
    ParameterPoint theta;
    double lambda_hat = 0.0;
    double mc_se = 0.0;
    double predicted = 0.0;  ///< exp of held-out posterior-mean log lambda
    double lo = 0.0, hi = 0.0;
};

std::vector<LoocvRow> loocv_lambda(const TrainingSet& training, const BartConfig& config);

BartPosterior load_ensemble(const std::string& path);

/// Design-prior sample plus lambda predictions, built once and reused for
/// every design evaluated against the same study.
class Evaluator {
  public:
    Evaluator(StudyConfig study, std::shared_ptr<const BartPosterior> ensemble, EvaluationSettings settings);

    const StudyConfig& study() const { return study_; }
    const EvaluationSettings& settings() const { return settings_; }
    const BartLambda& lambda() const { return *lambda_; }
    const PreparedPrior& prepared() const { return prepared_; }
    const std::vector<ParameterPoint>& sample() const { return sample_; }

    OcReport evaluate(const TrialDesign& design, const std::optional<CostSpec>& cost) const;
    std::vector<CurvePoint> curve(std::span<const double> grid, const TrialDesign& design) const;
    OptimizationResult optimize(std::span<const TrialDesign> candidates, Objective objective,
                                const CostSpec& cost, double target) const;

  private:
    StudyConfig study_;
    std::shared_ptr<const BartPosterior> ensemble_;
    EvaluationSettings settings_;
    std::unique_ptr<BartLambda> lambda_;
    std::vector<ParameterPoint> sample_;
    PreparedPrior prepared_;
};

/// Designs may be a single object or {"designs": [...]}.
std::vector<TrialDesign> load_designs(const std::string& path, double default_psi0);

/// One row per design: cumulative efficacy per analysis, IESS, IEC.
void write_comparison_csv(std::ostream& os, const std::vector<OcReport>& reports);
std::string comparison_table(const std::vector<OcReport>& reports);

}  // namespace bvmdesign

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "bvmdesign/bart.hpp"
#include "bvmdesign/error.hpp"
#include "bvmdesign/model.hpp"

namespace bvmdesign {

using FieldErrors = std::vector<std::pair<std::string, std::string>>;

/// Invalid design document; carries one message per offending field.
class DesignError : public InvalidParameter {
  public:
    explicit DesignError(FieldErrors errors);
    const FieldErrors& fields() const { return fields_; }

  private:
    FieldErrors fields_;
};

/// A (possibly group sequential) design: cumulative sample sizes n_1 < ... < n_T,
/// efficacy thresholds u_t, optional futility thresholds l_1..l_{T-1}.
struct TrialDesign {
    std::string name;
    std::vector<std::size_t> schedule;
    std::vector<double> efficacy;
    std::vector<double> futility;  ///< empty, or T-1 entries; 0 disables a stage
    double psi0 = 0.0;
    nlohmann::json reference;      ///< optional published values to compare against

    std::size_t analyses() const { return schedule.size(); }
    std::size_t max_n() const { return schedule.empty() ? 0 : schedule.back(); }
    bool has_futility() const;

    /// One message per offending field, e.g. {"schedule", "must be strictly increasing"}.
    FieldErrors validation_errors() const;
    void validate() const;

    /// `psi0` falls back to `default_psi0` when the document does not set it.
    static TrialDesign from_json(const nlohmann::json& j, double default_psi0 = 0.0);
    nlohmann::json to_json() const;
};

TrialDesign fixed_design(std::size_t n, double u, double psi0 = 0.0);

struct CostSpec {
    double c0 = 0.0;  ///< type I error
    double c1 = 0.0;  ///< type II error
    double c2 = 0.0;  ///< per patient

    void validate() const;
    static CostSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct MvnConfig {
    std::size_t draws = 100000;
    std::uint64_t seed = 1;
    bool antithetic = true;

    void validate() const;
    static MvnConfig from_json(const nlohmann::json& j);
    static MvnConfig from_json(const nlohmann::json& j, MvnConfig base);
    nlohmann::json to_json() const;
};

/// 1 - Phi(Phi^-1(u) - sqrt(n) (psi - psi0) / lambda).
double power_fixed(double psi, double psi0, std::size_t n, double u, double lambda);

struct GsdJointDistribution {
    Eigen::VectorXd mean;
    Eigen::MatrixXd correlation;
    Eigen::MatrixXd cholesky;  ///< lower triangular
};

GsdJointDistribution gamma_joint(double psi, double psi0, const TrialDesign& design, double lambda);
Eigen::MatrixXd schedule_correlation(std::span<const std::size_t> schedule);

struct StopProbabilities {
    std::vector<double> efficacy;  ///< stop-at, per analysis
    std::vector<double> futility;  ///< stop-at, per analysis (last entry always 0)
    double no_success = 0.0;       ///< reach the final analysis without efficacy
    std::vector<double> efficacy_se, futility_se;
    std::size_t draws = 0;

    std::vector<double> cumulative_efficacy() const;
    std::vector<double> cumulative_futility() const;
    /// Probability that the trial ends at each analysis.
    std::vector<double> end_at() const;
};

/// Precomputed common-random-number draws for one design. Every outcome is a
/// half-open interval of the standardized effect delta = (psi - psi0)/lambda
/// per draw, so outcome counts at any delta are exact and sum to the number of
/// draws.
class StoppingKernel {
  public:
    StoppingKernel(const TrialDesign& design, const MvnConfig& mvn);

    std::size_t analyses() const { return eff_lo_.size(); }
    std::size_t draws() const { return draws_; }
    bool has_futility() const { return has_futility_; }

    /// Outcome counts at delta. `fut` must have analyses() entries.
    void counts(double delta, std::span<std::size_t> eff, std::span<std::size_t> fut) const;
    StopProbabilities at(double delta) const;

  private:
    std::size_t draws_ = 0;
    bool has_futility_ = false;
    std::vector<std::vector<double>> eff_lo_, eff_hi_, fut_lo_, fut_hi_;
};

StopProbabilities stop_probs(const TrialDesign& design, double psi, double lambda, const MvnConfig& mvn);

/// Source of lambda(theta): a plug-in value plus, optionally, one value per
/// posterior state for uncertainty propagation.
class LambdaSource {
  public:
    virtual ~LambdaSource() = default;
    virtual double plug_in(std::span<const double> theta) const = 0;
    virtual std::size_t state_count() const { return 0; }
    virtual void states(std::span<const double> theta, std::span<double> out) const;
    /// Returns false when theta lies outside the region the source was built on.
    virtual bool covers(std::span<const double>) const { return true; }
};

class FixedLambda final : public LambdaSource {
  public:
    explicit FixedLambda(double lambda);
    double plug_in(std::span<const double>) const override { return lambda_; }

  private:
    double lambda_;
};

class FunctionLambda final : public LambdaSource {
  public:
    explicit FunctionLambda(std::function<double(std::span<const double>)> f) : f_(std::move(f)) {}
    double plug_in(std::span<const double> theta) const override { return f_(theta); }

  private:
    std::function<double(std::span<const double>)> f_;
};

/// Lambda from a BART ensemble fitted to log lambda-hat (or lambda-hat, per
/// the ensemble's response transform). The plug-in is the exponentiated
/// posterior-mean log lambda; states are thinned to at most `max_states`.
class BartLambda final : public LambdaSource {
  public:
    explicit BartLambda(std::shared_ptr<const BartPosterior> posterior, std::size_t max_states = 100,
                        double box_inflation = 0.1);
    double plug_in(std::span<const double> theta) const override;
    std::size_t state_count() const override { return selected_.size(); }
    void states(std::span<const double> theta, std::span<double> out) const override;
    bool covers(std::span<const double> theta) const override;

    const BartPosterior& posterior() const { return *posterior_; }

  private:
    double to_lambda(double y) const;

    std::shared_ptr<const BartPosterior> posterior_;
    std::vector<std::size_t> selected_;
    bool log_scale_;
    double inflation_;
};

/// Design-prior draws with psi and lambda predictions evaluated once, so that
/// many designs can be scored against the same sample.
struct PreparedPrior {
    std::vector<double> psi;
    std::vector<double> lambda;         ///< plug-in, per draw
    std::size_t states = 0;
    std::vector<double> state_lambda;   ///< draws x states, row-major
    std::size_t outside_box = 0;

    std::size_t size() const { return psi.size(); }
};

PreparedPrior prepare_prior(const ModelSpec& spec, std::span<const ParameterPoint> sample,
                            const LambdaSource& source);

struct Interval {
    double mean = 0.0, lo = 0.0, hi = 0.0;
};

/// Mean and central 95% interval of a quantity recomputed per posterior
/// state. Needs at least 50 states.
Interval power_uncertainty(std::span<const double> per_state);

struct IecBreakdown {
    double type1 = 0.0;
    double type2 = 0.0;
    double sample_size = 0.0;
    double total = 0.0;
};

struct OcReport {
    std::string source = "bart-bvm";
    TrialDesign design;
    std::vector<double> efficacy_stop_at, efficacy_cumulative, efficacy_stop_at_se, efficacy_cumulative_se;
    std::vector<double> futility_stop_at, futility_cumulative, futility_stop_at_se;
    std::vector<double> end_at;
    double no_success = 0.0;
    double iess = 0.0, iess_se = 0.0;
    std::optional<CostSpec> cost;
    IecBreakdown iec;
    double iec_se = 0.0;

    /// Intervals over BART posterior states; empty when the source has none.
    std::vector<Interval> efficacy_cumulative_interval;
    std::optional<Interval> iess_interval, iec_interval;

    std::size_t prior_draws = 0;
    std::size_t mvn_draws = 0;
    std::size_t lambda_states = 0;
    std::size_t extrapolated = 0;
    std::vector<std::string> warnings;
    nlohmann::json reference_check;  ///< null when the design carries no reference

    nlohmann::json to_json() const;
    /// Tidy rows: source, design, analysis, n, quantity, value, se, lo, hi.
    void write_csv(std::ostream& os, bool header = true) const;
};

/// Operating characteristics of a design averaged over a prepared prior sample.
OcReport evaluate_design(const TrialDesign& design, const PreparedPrior& prior, const MvnConfig& mvn,
                         const std::optional<CostSpec>& cost = std::nullopt);

OcReport assurance(const TrialDesign& design, std::span<const ParameterPoint> prior_sample,
                   const ModelSpec& spec, const LambdaSource& source, const MvnConfig& mvn,
                   const std::optional<CostSpec>& cost = std::nullopt);

/// sum_t P(end at t) n_t. The probabilities must sum to 1.
double iess(const TrialDesign& design, std::span<const double> end_at);
double iess(const TrialDesign& design, const StopProbabilities& probs);

IecBreakdown iec(const TrialDesign& design, const CostSpec& cost, std::span<const ParameterPoint> prior_sample,
                 const ModelSpec& spec, const LambdaSource& source, const MvnConfig& mvn);

struct CurvePoint {
    double psi = 0.0;
    std::vector<double> efficacy_cumulative, efficacy_se;
    std::vector<double> futility_cumulative;
};

/// Stopping probabilities integrated over the nuisance parameters, with the
/// psi coordinate of every nuisance draw set to each grid value in turn.
std::vector<CurvePoint> integrated_power_curve(std::span<const double> psi_grid, const TrialDesign& design,
                                               std::span<const ParameterPoint> nuisance_sample,
                                               const ModelSpec& spec, const LambdaSource& source,
                                               const MvnConfig& mvn);

/// 41 points over the design-prior mean of psi +/- 3 sd.
std::vector<double> default_psi_grid(const ModelSpec& spec, const DesignPrior& prior, std::size_t points = 41);

void write_curve_csv(std::ostream& os, const TrialDesign& design, const std::vector<CurvePoint>& curve);
nlohmann::json curve_to_json(const TrialDesign& design, const std::vector<CurvePoint>& curve);

enum class Objective { min_iec, min_iess };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct RankedDesign {
    std::size_t rank = 0;
    std::string name;
    double score = 0.0;
    double final_assurance = 0.0;
    double iess = 0.0;
    double iec = 0.0;
    std::size_t max_n = 0;
    std::size_t analyses = 0;
};

struct OptimizationResult {
    std::vector<RankedDesign> ranking;
    std::string diagnostic;

    void write_csv(std::ostream& os) const;
    nlohmann::json to_json() const;
};

/// Exhaustive scoring of candidates on common random numbers. `min_iess`
/// keeps only candidates with final cumulative assurance >= target.
OptimizationResult optimize_design(std::span<const TrialDesign> candidates, Objective objective,
                                   const CostSpec& cost, double target, const PreparedPrior& prior,
                                   const MvnConfig& mvn);

}  // namespace bvmdesign

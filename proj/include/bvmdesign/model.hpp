#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bvmdesign/random.hpp"

namespace bvmdesign {

/// A point theta in a model's parameter space, in model-specific units.
struct ParameterPoint {
    std::vector<double> values;
    std::vector<std::string> names;

    ParameterPoint() = default;
    ParameterPoint(std::vector<double> v, std::vector<std::string> n);

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double at(std::string_view name) const;
    std::span<const double> span() const { return values; }
};

/// Tabular data produced by a model. Rows are records, columns are named
/// fields, stored row-major. Which columns exist depends on the model:
/// logistic (y, A, x), survival (s, delta, A).
class Dataset {
  public:
    Dataset(std::string model_id, std::vector<std::string> columns);

    const std::string& model_id() const { return model_id_; }
    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t rows() const { return columns_.empty() ? 0 : values_.size() / columns_.size(); }
    std::size_t cols() const { return columns_.size(); }
    std::size_t column_index(std::string_view name) const;

    double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }
    std::span<const double> row(std::size_t r) const {
        return {values_.data() + r * cols(), cols()};
    }
    void append(std::span<const double> record);
    void reserve(std::size_t n) { values_.reserve(n * cols()); }

    /// The first n records, in order.
    Dataset prefix(std::size_t n) const;

    void write_csv(std::ostream& os) const;
    bool operator==(const Dataset& other) const = default;

  private:
    std::string model_id_;
    std::vector<std::string> columns_;
    std::vector<double> values_;
};

/// Independent normal priors on the unconstrained analysis parameters.
struct AnalysisPrior {
    std::vector<double> means;
    std::vector<double> sds;

    void validate(std::size_t dimension) const;
    double log_density(std::span<const double> x) const;
};

/// Log-likelihood on the unconstrained analysis scale, closed over the
/// sufficient statistics of one dataset.
using LogDensityFn = std::function<double(std::span<const double>)>;

/// The generative data model f(y | theta) together with its interest
/// functional and the Bayesian analysis model used at decision time.
/// Implementations are immutable and thread-safe.
class Model {
  public:
    virtual ~Model() = default;

    virtual std::string id() const = 0;
    virtual const std::vector<std::string>& parameter_names() const = 0;
    std::size_t dimension() const { return parameter_names().size(); }

    /// Throws InvalidParameter when theta is not a valid point for this model.
    virtual void validate(const ParameterPoint& theta) const;

    virtual double psi(const ParameterPoint& theta) const = 0;
    /// Coordinate of theta that carries psi (overridden when tracing curves).
    virtual std::size_t psi_coordinate() const = 0;
    /// Value to store in psi_coordinate() so that psi(theta) == psi_value.
    virtual double coordinate_for_psi(double psi_value) const { return psi_value; }

    virtual Dataset simulate(const ParameterPoint& theta, std::size_t n, std::uint64_t seed) const = 0;
    virtual double log_likelihood(const ParameterPoint& theta, const Dataset& data) const = 0;

    // Analysis model.
    virtual const std::vector<std::string>& analysis_names() const = 0;
    virtual std::size_t analysis_psi_index() const = 0;
    virtual AnalysisPrior default_analysis_prior() const = 0;
    virtual LogDensityFn analysis_log_likelihood(const Dataset& data) const = 0;

    ParameterPoint make_point(std::vector<double> values) const;

  protected:
    void check_dimension(const ParameterPoint& theta) const;
};

/// Binary outcome with a binary treatment A and a binary subgroup covariate x:
/// logit P(y=1) = beta0 + beta1 x + (psi0 + psi1 x) A.  psi = psi0.
class LogisticSubgroupModel final : public Model {
  public:
    std::string id() const override { return "logistic-subgroup"; }
    const std::vector<std::string>& parameter_names() const override;
    double psi(const ParameterPoint& theta) const override;
    std::size_t psi_coordinate() const override { return 2; }
    Dataset simulate(const ParameterPoint& theta, std::size_t n, std::uint64_t seed) const override;
    double log_likelihood(const ParameterPoint& theta, const Dataset& data) const override;

    const std::vector<std::string>& analysis_names() const override;
    std::size_t analysis_psi_index() const override { return 2; }
    AnalysisPrior default_analysis_prior() const override;
    LogDensityFn analysis_log_likelihood(const Dataset& data) const override;
};

/// Time to an event with a piecewise-constant baseline hazard on weekly
/// intervals over a 28-day follow-up, proportional treatment effect exp(beta A),
/// visit-based dropout with probability kappa at each weekly visit and
/// administrative censoring at day 28. theta = (h1, h2, h3, h4, beta, kappa),
/// psi = beta (log rate ratio).
class PiecewiseExpSurvivalModel final : public Model {
  public:
    static constexpr int kIntervals = 4;
    static constexpr double kIntervalLength = 7.0;
    static constexpr double kFollowUp = 28.0;

    std::string id() const override { return "piecewise-exp-survival"; }
    const std::vector<std::string>& parameter_names() const override;
    void validate(const ParameterPoint& theta) const override;
    double psi(const ParameterPoint& theta) const override;
    std::size_t psi_coordinate() const override { return 4; }
    Dataset simulate(const ParameterPoint& theta, std::size_t n, std::uint64_t seed) const override;
    double log_likelihood(const ParameterPoint& theta, const Dataset& data) const override;

    const std::vector<std::string>& analysis_names() const override;
    std::size_t analysis_psi_index() const override { return 4; }
    AnalysisPrior default_analysis_prior() const override;
    LogDensityFn analysis_log_likelihood(const Dataset& data) const override;

    /// Index (0-based) of the hazard interval containing time s.
    static int interval_of(double s);
    /// Closed-form cumulative hazard at s for the given per-interval rates.
    static double cumulative_hazard(std::span<const double> rates, double s);
};

/// Built-in models by id. Throws ConfigError for unknown ids.
std::shared_ptr<const Model> make_model(std::string_view id);

/// One-sided hypothesis H_A: psi > psi0.
struct HypothesisSpec {
    double psi0 = 0.0;
};

struct ModelSpec {
    std::shared_ptr<const Model> model;
    HypothesisSpec hypothesis;

    const Model& operator*() const { return *model; }
    const Model* operator->() const { return model.get(); }
    double psi0() const { return hypothesis.psi0; }
};

double psi(const ModelSpec& spec, const ParameterPoint& theta);
Dataset simulate_dataset(const ModelSpec& spec, const ParameterPoint& theta, std::size_t n,
                         std::uint64_t seed);
double log_likelihood(const ModelSpec& spec, const ParameterPoint& theta, const Dataset& data);

enum class MarginalKind { normal, lognormal, uniform };

/// One independent component of a design prior. For `lognormal` the two
/// parameters are the mean and sd of the log.
class MarginalPrior {
  public:
    MarginalPrior(std::string name, MarginalKind kind, double a, double b);

    const std::string& name() const { return name_; }
    MarginalKind kind() const { return kind_; }
    double a() const { return a_; }
    double b() const { return b_; }

    double sample(Rng& rng) const;
    double mean() const;
    double sd() const;

  private:
    std::string name_;
    MarginalKind kind_;
    double a_, b_;
};

class DesignPrior {
  public:
    DesignPrior() = default;
    explicit DesignPrior(std::vector<MarginalPrior> components);

    const std::vector<MarginalPrior>& components() const { return components_; }
    std::size_t dimension() const { return components_.size(); }
    std::vector<std::string> names() const;
    std::vector<double> means() const;

    /// Point-mass prior represented by tiny-sd normals.
    static DesignPrior point_mass(const ParameterPoint& theta, double sd = 1e-12);

  private:
    std::vector<MarginalPrior> components_;
};

/// k independent draws, deterministic given seed.
std::vector<ParameterPoint> sample_design_prior(const DesignPrior& prior, std::size_t k,
                                                std::uint64_t seed);

/// Closed per-parameter box [lo_i, hi_i].
class DesignBox {
  public:
    DesignBox() = default;
    DesignBox(std::vector<std::string> names, std::vector<double> lo, std::vector<double> hi);

    std::size_t dimension() const { return lo_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<double>& lo() const { return lo_; }
    const std::vector<double>& hi() const { return hi_; }

    /// True when every coordinate lies in the box widened by `inflate` times
    /// its width on each side.
    bool contains(std::span<const double> x, double inflate = 0.0) const;

  private:
    std::vector<std::string> names_;
    std::vector<double> lo_, hi_;
};

/// A model/prior document: {"model", "psi0", "design_prior": [...]} plus
/// optional "design_box" and free-form sections used by the tools.
struct StudyConfig {
    ModelSpec spec;
    DesignPrior design_prior;
    std::optional<DesignBox> design_box;
    nlohmann::json document;
};

StudyConfig parse_study_config(const nlohmann::json& doc);
StudyConfig load_study_config(const std::string& path);

DesignPrior parse_design_prior(const nlohmann::json& arr);
nlohmann::json design_prior_to_json(const DesignPrior& prior);
DesignBox parse_design_box(const nlohmann::json& arr);

}  // namespace bvmdesign

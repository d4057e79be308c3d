#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace bvmdesign {

/// Row-major so that each predictor point is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BartConfig {
    std::size_t m = 50;             ///< number of trees
    double alpha = 0.95;            ///< split probability alpha (1 + depth)^-beta
    double beta = 2.0;
    double k = 2.0;                 ///< leaf shrinkage: sigma_mu = range / (2 k sqrt(m))
    double nu = 3.0;                ///< error variance prior degrees of freedom
    double q = 0.90;                ///< P(sigma < sd(y)) under the prior
    std::size_t n_iterations = 2500;
    std::size_t n_burnin = 500;
    std::size_t thin = 20;
    std::size_t n_cutpoints = 100;  ///< per predictor, equally spaced inside the range
    std::uint64_t seed = 1;

    void validate() const;
    static BartConfig from_json(const nlohmann::json& j);
    static BartConfig from_json(const nlohmann::json& j, BartConfig base);
    nlohmann::json to_json() const;
};

/// A fitted regression tree stored as a flat node array rooted at index 0.
/// Internal nodes send x to `left` when x[var] <= cut.
struct TreeNode {
    int var = -1;
    double cut = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;

    bool is_leaf() const { return var < 0; }
    bool operator==(const TreeNode&) const = default;
};

class Tree {
  public:
    Tree() : nodes_(1) {}
    explicit Tree(std::vector<TreeNode> nodes);

    double predict(std::span<const double> x) const {
        int i = 0;
        while (!nodes_[i].is_leaf()) i = x[nodes_[i].var] <= nodes_[i].cut ? nodes_[i].left : nodes_[i].right;
        return nodes_[i].value;
    }
    const std::vector<TreeNode>& nodes() const { return nodes_; }
    std::size_t leaf_count() const;
    std::size_t depth() const;

    /// Nested arrays: [var, cut, left, right] for internal nodes, [value] for leaves.
    nlohmann::json to_json() const;
    static Tree from_json(const nlohmann::json& j);

    bool operator==(const Tree&) const = default;

  private:
    std::vector<TreeNode> nodes_;
};

struct BartState {
    std::vector<Tree> trees;
    double sigma = 1.0;  ///< on the original response scale
    bool operator==(const BartState&) const = default;
};

/// Retained posterior states of a sum-of-trees model. Trees produce
/// predictions on the normalized scale; `denormalize` maps back.
class BartPosterior {
  public:
    std::size_t dimension() const { return dimension_; }
    const std::vector<BartState>& states() const { return states_; }
    std::size_t state_count() const { return states_.size(); }

    double shift() const { return shift_; }
    double scale() const { return scale_; }
    double normalize(double y) const { return (y - shift_) / scale_; }
    double denormalize(double z) const { return z * scale_ + shift_; }

    /// Prediction of one state at x, on the original response scale.
    double predict_state(std::size_t state, std::span<const double> x) const;
    /// Mean over states, on the original response scale.
    double predict_mean(std::span<const double> x) const;

    const std::vector<std::size_t>& inclusion_counts() const { return inclusion_; }
    std::vector<double> inclusion_proportions() const;
    /// Mean depth of all stored trees.
    double mean_tree_depth() const;

    const std::vector<std::string>& predictor_names() const { return names_; }
    const std::vector<double>& training_lo() const { return lo_; }
    const std::vector<double>& training_hi() const { return hi_; }
    const std::string& response_transform() const { return transform_; }

    void set_predictor_names(std::vector<std::string> names);
    void set_response_transform(std::string t) { transform_ = std::move(t); }

    nlohmann::json to_json() const;
    static BartPosterior from_json(const nlohmann::json& j);

    bool operator==(const BartPosterior&) const = default;

  private:
    friend BartPosterior bart_fit(const Matrix&, std::span<const double>, const BartConfig&);

    std::size_t dimension_ = 0;
    double shift_ = 0.0, scale_ = 1.0;
    std::vector<BartState> states_;
    std::vector<std::size_t> inclusion_;
    std::vector<std::string> names_;
    std::vector<double> lo_, hi_;
    std::string transform_ = "identity";
};

/// Backfitting MCMC for a sum of m trees with grow/prune/change moves
/// (probabilities 0.4/0.4/0.2), leaf values integrated out for the tree
/// moves, then conjugate leaf and error-variance updates.
BartPosterior bart_fit(const Matrix& X, std::span<const double> y, const BartConfig& config);

struct BartPrediction {
    Matrix draws;  ///< states x points, original response scale
    std::vector<double> mean, lo, hi;  ///< central 95% interval
};

BartPrediction bart_predict(const BartPosterior& posterior, const Matrix& Xstar);

struct LoocvResult {
    std::vector<double> mean, lo, hi;
};

/// Refit without point i and predict at x_i, for every i.
LoocvResult loocv(const Matrix& X, std::span<const double> y, const BartConfig& config);

/// Partial dependence of the posterior-mean prediction on predictor `var`:
/// for each grid value, the average over rows of X with column `var` replaced.
std::vector<double> partial_dependence(const BartPosterior& posterior, const Matrix& X,
                                       std::size_t var, std::span<const double> grid);

}  // namespace bvmdesign

#include "bvmdesign/bart.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bvmdesign/error.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/random.hpp"
#include "bvmdesign/stats.hpp"

namespace bvmdesign {

void BartConfig::validate() const {
    if (m == 0) throw InvalidParameter("bart: m must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("bart: alpha must lie in (0, 1)");
    if (!(beta >= 0.0)) throw InvalidParameter("bart: beta must be non-negative");
    if (!(k > 0.0)) throw InvalidParameter("bart: k must be positive");
    if (!(nu > 0.0)) throw InvalidParameter("bart: nu must be positive");
    if (!(q > 0.0 && q < 1.0)) throw InvalidParameter("bart: q must lie in (0, 1)");
    if (thin == 0) throw InvalidParameter("bart: thin must be at least 1");
    if (n_cutpoints == 0) throw InvalidParameter("bart: n_cutpoints must be at least 1");
    if (n_burnin >= n_iterations || (n_iterations - n_burnin) < thin) {
        throw ConfigError("bart: no posterior states retained with these iteration settings");
    }
}

BartConfig BartConfig::from_json(const nlohmann::json& j) { return from_json(j, BartConfig{}); }

BartConfig BartConfig::from_json(const nlohmann::json& j, BartConfig base) {
    try {
        base.m = j.value("m", base.m);
        base.alpha = j.value("alpha", base.alpha);
        base.beta = j.value("beta", base.beta);
        base.k = j.value("k", base.k);
        base.nu = j.value("nu", base.nu);
        base.q = j.value("q", base.q);
        base.n_iterations = j.value("n_iterations", base.n_iterations);
        base.n_burnin = j.value("n_burnin", base.n_burnin);
        base.thin = j.value("thin", base.thin);
        base.n_cutpoints = j.value("n_cutpoints", base.n_cutpoints);
        base.seed = j.value("seed", base.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bart config: ") + e.what());
    }
    base.validate();
    return base;
}

nlohmann::json BartConfig::to_json() const {
    return {{"m", m},           {"alpha", alpha},
            {"beta", beta},     {"k", k},
            {"nu", nu},         {"q", q},
            {"n_iterations", n_iterations}, {"n_burnin", n_burnin},
            {"thin", thin},     {"n_cutpoints", n_cutpoints},
            {"seed", seed}};
}

// ---------------------------------------------------------------- Tree

Tree::Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw ConfigError("tree: no nodes");
    const int n = static_cast<int>(nodes_.size());
    for (const auto& node : nodes_) {
        if (node.is_leaf()) continue;
        if (node.left <= 0 || node.right <= 0 || node.left >= n || node.right >= n) {
            throw ConfigError("tree: child index out of range");
        }
    }
}

std::size_t Tree::leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& t) { return t.is_leaf(); }));
}

std::size_t Tree::depth() const {
    std::size_t best = 0;
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        best = std::max(best, d);
        if (!nodes_[i].is_leaf()) {
            stack.emplace_back(nodes_[i].left, d + 1);
            stack.emplace_back(nodes_[i].right, d + 1);
        }
    }
    return best;
}

namespace {

nlohmann::json node_json(const std::vector<TreeNode>& nodes, int i) {
    const auto& node = nodes[i];
    if (node.is_leaf()) return nlohmann::json::array({node.value});
    return nlohmann::json::array(
        {node.var, node.cut, node_json(nodes, node.left), node_json(nodes, node.right)});
}

int node_from_json(const nlohmann::json& j, std::vector<TreeNode>& out) {
    if (!j.is_array() || (j.size() != 1 && j.size() != 4)) {
        throw ConfigError("tree: node must be [value] or [var, cut, left, right]");
    }
    const int idx = static_cast<int>(out.size());
    out.emplace_back();
    if (j.size() == 1) {
        out[idx].value = j[0].get<double>();
        return idx;
    }
    const int var = j[0].get<int>();
    if (var < 0) throw ConfigError("tree: negative split variable");
    out[idx].var = var;
    out[idx].cut = j[1].get<double>();
    const int l = node_from_json(j[2], out);
    const int r = node_from_json(j[3], out);
    out[idx].left = l;
    out[idx].right = r;
    return idx;
}

}  // namespace

nlohmann::json Tree::to_json() const { return node_json(nodes_, 0); }

Tree Tree::from_json(const nlohmann::json& j) {
    std::vector<TreeNode> nodes;
    try {
        node_from_json(j, nodes);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("tree: ") + e.what());
    }
    return Tree(std::move(nodes));
}

// ---------------------------------------------------------- BartPosterior

double BartPosterior::predict_state(std::size_t state, std::span<const double> x) const {
    double z = 0.0;
    for (const auto& t : states_[state].trees) z += t.predict(x);
    return denormalize(z);
}

double BartPosterior::predict_mean(std::span<const double> x) const {
    if (x.size() != dimension_) throw InvalidSize("bart: predictor dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < states_.size(); ++i) s += predict_state(i, x);
    return s / static_cast<double>(states_.size());
}

std::vector<double> BartPosterior::inclusion_proportions() const {
    double total = 0.0;
    for (auto c : inclusion_) total += static_cast<double>(c);
    std::vector<double> out(inclusion_.size(), 0.0);
    if (total > 0.0) {
        for (std::size_t v = 0; v < out.size(); ++v) out[v] = static_cast<double>(inclusion_[v]) / total;
    }
    return out;
}

double BartPosterior::mean_tree_depth() const {
    double s = 0.0;
    std::size_t count = 0;
    for (const auto& st : states_) {
        for (const auto& t : st.trees) {
            s += static_cast<double>(t.depth());
            ++count;
        }
    }
    return count ? s / static_cast<double>(count) : 0.0;
}

void BartPosterior::set_predictor_names(std::vector<std::string> names) {
    if (names.size() != dimension_) throw InvalidSize("bart: predictor name count mismatch");
    names_ = std::move(names);
}

nlohmann::json BartPosterior::to_json() const {
    nlohmann::json sigma = nlohmann::json::array();
    nlohmann::json states = nlohmann::json::array();
    for (const auto& st : states_) {
        sigma.push_back(st.sigma);
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& t : st.trees) trees.push_back(t.to_json());
        states.push_back(std::move(trees));
    }
    return {{"version", 1},
            {"dimension", dimension_},
            {"predictors", names_},
            {"response_transform", transform_},
            {"shift", shift_},
            {"scale", scale_},
            {"training_lo", lo_},
            {"training_hi", hi_},
            {"inclusion_counts", inclusion_},
            {"sigma", std::move(sigma)},
            {"states", std::move(states)}};
}

BartPosterior BartPosterior::from_json(const nlohmann::json& j) {
    BartPosterior p;
    try {
        if (j.at("version").get<int>() != 1) throw ConfigError("bart: unsupported ensemble version");
        p.dimension_ = j.at("dimension").get<std::size_t>();
        p.names_ = j.at("predictors").get<std::vector<std::string>>();
        p.transform_ = j.value("response_transform", std::string("identity"));
        p.shift_ = j.at("shift").get<double>();
        p.scale_ = j.at("scale").get<double>();
        p.lo_ = j.at("training_lo").get<std::vector<double>>();
        p.hi_ = j.at("training_hi").get<std::vector<double>>();
        p.inclusion_ = j.at("inclusion_counts").get<std::vector<std::size_t>>();
        const auto sigma = j.at("sigma").get<std::vector<double>>();
        const auto& states = j.at("states");
        if (sigma.size() != states.size()) throw ConfigError("bart: sigma and state counts differ");
        for (std::size_t s = 0; s < states.size(); ++s) {
            BartState st;
            st.sigma = sigma[s];
            for (const auto& t : states[s]) st.trees.push_back(Tree::from_json(t));
            p.states_.push_back(std::move(st));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bart ensemble: ") + e.what());
    }
    if (p.states_.empty()) throw ConfigError("bart ensemble: no posterior states");
    if (p.lo_.size() != p.dimension_ || p.hi_.size() != p.dimension_ ||
        (!p.names_.empty() && p.names_.size() != p.dimension_)) {
        throw ConfigError("bart ensemble: dimension mismatch");
    }
    if (p.inclusion_.size() != p.dimension_) p.inclusion_.assign(p.dimension_, 0);
    for (const auto& st : p.states_) {
        for (const auto& t : st.trees) {
            for (const auto& node : t.nodes()) {
                if (!node.is_leaf() && static_cast<std::size_t>(node.var) >= p.dimension_) {
                    throw ConfigError("bart ensemble: split variable out of range");
                }
            }
        }
    }
    return p;
}

// ---------------------------------------------------------------- Fitting

namespace {

struct FitNode {
    int var = -1;
    int cut = -1;  // index into the cutpoint grid of var
    int left = -1, right = -1, parent = -1;
    int depth = 0;
    double mu = 0.0;
    bool alive = true;
    bool leaf() const { return var < 0; }
};

struct Sampler {
    const Matrix& X;
    std::vector<double> z;  // normalized response
    const BartConfig& cfg;
    std::size_t n, p;
    std::vector<std::vector<double>> cuts;
    double tau2, sigma2, nu_lambda;
    Rng rng;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif;

    // Per tree: nodes, observation -> leaf, and the tree's fitted values.
    std::vector<std::vector<FitNode>> trees;
    std::vector<std::vector<int>> leaf_of;
    std::vector<double> fit;    // sum of all trees
    std::vector<double> resid;  // partial residual for the current tree

    Sampler(const Matrix& x, std::vector<double> zz, const BartConfig& c, std::uint64_t seed)
        : X(x), z(std::move(zz)), cfg(c), n(static_cast<std::size_t>(x.rows())),
          p(static_cast<std::size_t>(x.cols())), rng(seed) {}

    double prior_split(int depth) const {
        return cfg.alpha * std::pow(1.0 + depth, -cfg.beta);
    }

    // Number of cutpoint indices available to `node` for each predictor,
    // given the restrictions imposed by its ancestors.
    void region(const std::vector<FitNode>& t, int node, std::vector<int>& lo, std::vector<int>& hi) const {
        lo.assign(p, 0);
        hi.resize(p);
        for (std::size_t v = 0; v < p; ++v) hi[v] = static_cast<int>(cuts[v].size());
        int child = node;
        int a = t[node].parent;
        while (a >= 0) {
            const int v = t[a].var;
            if (t[a].left == child) {
                hi[v] = std::min(hi[v], t[a].cut);
            } else {
                lo[v] = std::max(lo[v], t[a].cut + 1);
            }
            child = a;
            a = t[a].parent;
        }
    }

    bool has_split(const std::vector<FitNode>& t, int node) const {
        std::vector<int> lo, hi;
        region(t, node, lo, hi);
        for (std::size_t v = 0; v < p; ++v) {
            if (hi[v] > lo[v]) return true;
        }
        return false;
    }

    // Prior probability that `node` is internal.
    double p_split(const std::vector<FitNode>& t, int node) const {
        return has_split(t, node) ? prior_split(t[node].depth) : 0.0;
    }

    double leaf_loglik(std::size_t count, double sum) const {
        const double nt = static_cast<double>(count) * tau2;
        return 0.5 * std::log(sigma2 / (sigma2 + nt)) + tau2 * sum * sum / (2.0 * sigma2 * (sigma2 + nt));
    }

    double draw_mu(std::size_t count, double sum) {
        const double denom = sigma2 + static_cast<double>(count) * tau2;
        const double mean = tau2 * sum / denom;
        const double sd = std::sqrt(sigma2 * tau2 / denom);
        return mean + sd * normal(rng);
    }

    int alloc(std::vector<FitNode>& t) {
        for (std::size_t i = 1; i < t.size(); ++i) {
            if (!t[i].alive) {
                t[i] = FitNode{};
                return static_cast<int>(i);
            }
        }
        t.emplace_back();
        return static_cast<int>(t.size() - 1);
    }

    // Sufficient statistics of residuals in the leaves of a split of `node` on (v, c).
    void split_stats(std::size_t j, int node, int v, int c, std::size_t& nl, double& sl,
                     std::size_t& nr, double& sr, const std::vector<int>* members) const {
        nl = nr = 0;
        sl = sr = 0.0;
        const double cut = cuts[v][c];
        for (std::size_t i = 0; i < n; ++i) {
            const int leaf = leaf_of[j][i];
            const bool in = members ? std::find(members->begin(), members->end(), leaf) != members->end()
                                    : leaf == node;
            if (!in) continue;
            if (X(static_cast<Eigen::Index>(i), v) <= cut) {
                ++nl;
                sl += resid[i];
            } else {
                ++nr;
                sr += resid[i];
            }
        }
    }

    void leaf_stats(std::size_t j, int node, std::size_t& cnt, double& sum) const {
        cnt = 0;
        sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (leaf_of[j][i] == node) {
                ++cnt;
                sum += resid[i];
            }
        }
    }

    bool choose_rule(const std::vector<FitNode>& t, int node, int& var, int& cut) {
        std::vector<int> lo, hi;
        region(t, node, lo, hi);
        std::vector<int> vars;
        for (std::size_t v = 0; v < p; ++v) {
            if (hi[v] > lo[v]) vars.push_back(static_cast<int>(v));
        }
        if (vars.empty()) return false;
        var = vars[std::uniform_int_distribution<std::size_t>(0, vars.size() - 1)(rng)];
        cut = std::uniform_int_distribution<int>(lo[var], hi[var] - 1)(rng);
        return true;
    }

    static std::vector<int> leaves(const std::vector<FitNode>& t) {
        std::vector<int> out;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i].alive && t[i].leaf()) out.push_back(static_cast<int>(i));
        }
        return out;
    }

    static std::vector<int> prunable(const std::vector<FitNode>& t) {
        std::vector<int> out;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i].alive && !t[i].leaf() && t[t[i].left].leaf() && t[t[i].right].leaf()) {
                out.push_back(static_cast<int>(i));
            }
        }
        return out;
    }

    void grow(std::size_t j) {
        auto& t = trees[j];
        const auto lv = leaves(t);
        const int node = lv[std::uniform_int_distribution<std::size_t>(0, lv.size() - 1)(rng)];
        int v = 0, c = 0;
        if (!choose_rule(t, node, v, c)) return;
        std::size_t nl, nr, np;
        double sl, sr, sp;
        split_stats(j, node, v, c, nl, sl, nr, sr, nullptr);
        if (nl == 0 || nr == 0) return;
        np = nl + nr;
        sp = sl + sr;

        // Tentatively apply to evaluate child split probabilities and w*.
        const int l = alloc(t);
        const int r = alloc(t);
        t[l].parent = t[r].parent = node;
        t[l].depth = t[r].depth = t[node].depth + 1;
        t[node].var = v;
        t[node].cut = c;
        t[node].left = l;
        t[node].right = r;

        const double ps = prior_split(t[node].depth);
        const double pl = p_split(t, l), pr = p_split(t, r);
        const double w_new = static_cast<double>(prunable(t).size());
        const double log_ratio = std::log(static_cast<double>(lv.size()) / w_new) +
                                 leaf_loglik(nl, sl) + leaf_loglik(nr, sr) - leaf_loglik(np, sp) +
                                 std::log(ps) + std::log1p(-pl) + std::log1p(-pr) - std::log1p(-ps);
        if (std::log(unif(rng)) < log_ratio) {
            const double cut = cuts[v][c];
            for (std::size_t i = 0; i < n; ++i) {
                if (leaf_of[j][i] == node) leaf_of[j][i] = X(static_cast<Eigen::Index>(i), v) <= cut ? l : r;
            }
        } else {
            t[l].alive = t[r].alive = false;
            t[node].var = t[node].cut = t[node].left = t[node].right = -1;
        }
    }

    void prune(std::size_t j) {
        auto& t = trees[j];
        const auto w = prunable(t);
        if (w.empty()) return;
        const int node = w[std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng)];
        const int l = t[node].left, r = t[node].right;
        std::size_t nl, nr;
        double sl, sr;
        leaf_stats(j, l, nl, sl);
        leaf_stats(j, r, nr, sr);
        const double b_new = static_cast<double>(leaves(t).size() - 1);
        const double ps = prior_split(t[node].depth);
        const double pl = p_split(t, l), pr = p_split(t, r);
        const double log_ratio = std::log(static_cast<double>(w.size()) / b_new) +
                                 leaf_loglik(nl + nr, sl + sr) - leaf_loglik(nl, sl) - leaf_loglik(nr, sr) +
                                 std::log1p(-ps) - std::log(ps) - std::log1p(-pl) - std::log1p(-pr);
        if (std::log(unif(rng)) < log_ratio) {
            t[l].alive = t[r].alive = false;
            t[node].var = t[node].cut = t[node].left = t[node].right = -1;
            for (std::size_t i = 0; i < n; ++i) {
                if (leaf_of[j][i] == l || leaf_of[j][i] == r) leaf_of[j][i] = node;
            }
        }
    }

    void change(std::size_t j) {
        auto& t = trees[j];
        const auto w = prunable(t);
        if (w.empty()) return;
        const int node = w[std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng)];
        const int l = t[node].left, r = t[node].right;
        const int old_v = t[node].var, old_c = t[node].cut;
        int v = 0, c = 0;
        if (!choose_rule(t, node, v, c)) return;
        const std::vector<int> members{l, r};
        std::size_t nl, nr, ol, orr;
        double sl, sr, osl, osr;
        split_stats(j, node, v, c, nl, sl, nr, sr, &members);
        if (nl == 0 || nr == 0) return;
        leaf_stats(j, l, ol, osl);
        leaf_stats(j, r, orr, osr);

        const double old_prior = std::log1p(-p_split(t, l)) + std::log1p(-p_split(t, r));
        t[node].var = v;
        t[node].cut = c;
        const double new_prior = std::log1p(-p_split(t, l)) + std::log1p(-p_split(t, r));
        const double log_ratio = leaf_loglik(nl, sl) + leaf_loglik(nr, sr) - leaf_loglik(ol, osl) -
                                 leaf_loglik(orr, osr) + new_prior - old_prior;
        if (std::log(unif(rng)) < log_ratio) {
            const double cut = cuts[v][c];
            for (std::size_t i = 0; i < n; ++i) {
                if (leaf_of[j][i] == l || leaf_of[j][i] == r) {
                    leaf_of[j][i] = X(static_cast<Eigen::Index>(i), v) <= cut ? l : r;
                }
            }
        } else {
            t[node].var = old_v;
            t[node].cut = old_c;
        }
    }

    void update_leaves(std::size_t j) {
        auto& t = trees[j];
        std::vector<std::size_t> cnt(t.size(), 0);
        std::vector<double> sum(t.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[leaf_of[j][i]];
            sum[leaf_of[j][i]] += resid[i];
        }
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (t[k].alive && t[k].leaf()) t[k].mu = draw_mu(cnt[k], sum[k]);
        }
    }

    Tree export_tree(std::size_t j) const {
        const auto& t = trees[j];
        std::vector<TreeNode> out;
        auto rec = [&](auto&& self, int i) -> int {
            const int idx = static_cast<int>(out.size());
            out.emplace_back();
            if (t[i].leaf()) {
                out[idx].value = t[i].mu;
                return idx;
            }
            out[idx].var = t[i].var;
            out[idx].cut = cuts[t[i].var][t[i].cut];
            const int l = self(self, t[i].left);
            const int r = self(self, t[i].right);
            out[idx].left = l;
            out[idx].right = r;
            return idx;
        };
        rec(rec, 0);
        return Tree(std::move(out));
    }
};

}  // namespace

BartPosterior bart_fit(const Matrix& X, std::span<const double> y, const BartConfig& config) {
    config.validate();
    const std::size_t n = static_cast<std::size_t>(X.rows());
    const std::size_t p = static_cast<std::size_t>(X.cols());
    if (y.size() != n) throw InvalidSize("bart_fit: X and y have different numbers of rows");
    if (n < 10) throw InvalidSize("bart_fit: need at least 10 training points");
    if (p == 0) throw InvalidSize("bart_fit: no predictors");
    if (!X.allFinite()) throw InvalidParameter("bart_fit: non-finite predictor value");
    for (double v : y) {
        if (!std::isfinite(v)) throw InvalidParameter("bart_fit: non-finite response value");
    }

    BartPosterior post;
    post.dimension_ = p;
    post.lo_.resize(p);
    post.hi_.resize(p);
    for (std::size_t v = 0; v < p; ++v) {
        post.lo_[v] = X.col(static_cast<Eigen::Index>(v)).minCoeff();
        post.hi_[v] = X.col(static_cast<Eigen::Index>(v)).maxCoeff();
    }
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    post.shift_ = 0.5 * (*ymin + *ymax);
    post.scale_ = *ymax - *ymin > 0.0 ? *ymax - *ymin : 1.0;

    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = post.normalize(y[i]);

    Sampler s(X, z, config, derive_seed(config.seed, 0x42415254ULL));
    s.cuts.resize(p);
    for (std::size_t v = 0; v < p; ++v) {
        const double lo = post.lo_[v], hi = post.hi_[v];
        if (!(hi > lo)) continue;
        const double C = static_cast<double>(config.n_cutpoints);
        for (std::size_t c = 0; c < config.n_cutpoints; ++c) {
            s.cuts[v].push_back(lo + (static_cast<double>(c) + 1.0) * (hi - lo) / (C + 1.0));
        }
    }

    const double mtrees = static_cast<double>(config.m);
    const double tau = 1.0 / (2.0 * config.k * std::sqrt(mtrees));
    s.tau2 = tau * tau;
    const double sigma_hat = std::max(sample_sd(z), 1e-3);
    s.nu_lambda = sigma_hat * sigma_hat * chi_squared_quantile(config.nu, 1.0 - config.q);
    s.sigma2 = sigma_hat * sigma_hat;

    const double start = mean(z) / mtrees;
    s.trees.assign(config.m, std::vector<FitNode>(1));
    for (auto& t : s.trees) t[0].mu = start;
    s.leaf_of.assign(config.m, std::vector<int>(n, 0));
    s.fit.assign(n, start * mtrees);
    s.resid.assign(n, 0.0);

    std::vector<std::size_t> inclusion(p, 0);
    std::vector<double> tree_fit(n);
    for (std::size_t it = 0; it < config.n_iterations; ++it) {
        for (std::size_t j = 0; j < config.m; ++j) {
            auto& t = s.trees[j];
            for (std::size_t i = 0; i < n; ++i) {
                tree_fit[i] = t[s.leaf_of[j][i]].mu;
                s.resid[i] = z[i] - (s.fit[i] - tree_fit[i]);
            }
            const double u = s.unif(s.rng);
            if (u < 0.4) {
                s.grow(j);
            } else if (u < 0.8) {
                s.prune(j);
            } else {
                s.change(j);
            }
            s.update_leaves(j);
            for (std::size_t i = 0; i < n; ++i) {
                s.fit[i] += t[s.leaf_of[j][i]].mu - tree_fit[i];
            }
        }
        double ssr = 0.0;
        for (std::size_t i = 0; i < n; ++i) ssr += (z[i] - s.fit[i]) * (z[i] - s.fit[i]);
        std::gamma_distribution<double> chi((config.nu + static_cast<double>(n)) / 2.0, 2.0);
        s.sigma2 = (s.nu_lambda + ssr) / chi(s.rng);

        if (it >= config.n_burnin && (it - config.n_burnin) % config.thin == config.thin - 1) {
            BartState st;
            st.sigma = std::sqrt(s.sigma2) * post.scale_;
            for (std::size_t j = 0; j < config.m; ++j) {
                st.trees.push_back(s.export_tree(j));
                for (const auto& node : s.trees[j]) {
                    if (node.alive && !node.leaf()) ++inclusion[node.var];
                }
            }
            post.states_.push_back(std::move(st));
        }
    }
    post.inclusion_ = std::move(inclusion);
    post.names_.clear();
    return post;
}

BartPrediction bart_predict(const BartPosterior& posterior, const Matrix& Xstar) {
    BartPrediction out;
    const std::size_t S = posterior.state_count();
    const std::size_t q = static_cast<std::size_t>(Xstar.rows());
    out.draws.resize(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(q));
    if (q == 0) return out;
    if (static_cast<std::size_t>(Xstar.cols()) != posterior.dimension()) {
        throw InvalidSize("bart_predict: predictor dimension mismatch");
    }
    out.mean.resize(q);
    out.lo.resize(q);
    out.hi.resize(q);
    std::vector<double> col(S);
    for (std::size_t k = 0; k < q; ++k) {
        std::span<const double> x(Xstar.row(static_cast<Eigen::Index>(k)).data(), posterior.dimension());
        for (std::size_t s = 0; s < S; ++s) {
            col[s] = posterior.predict_state(s, x);
            out.draws(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = col[s];
        }
        out.mean[k] = mean(col);
        std::sort(col.begin(), col.end());
        out.lo[k] = quantile_sorted(col, 0.025);
        out.hi[k] = quantile_sorted(col, 0.975);
    }
    return out;
}

LoocvResult loocv(const Matrix& X, std::span<const double> y, const BartConfig& config) {
    const std::size_t n = static_cast<std::size_t>(X.rows());
    if (y.size() != n) throw InvalidSize("loocv: X and y have different numbers of rows");
    if (n < 11) throw InvalidSize("loocv: need at least 11 training points");
    LoocvResult out;
    out.mean.resize(n);
    out.lo.resize(n);
    out.hi.resize(n);
    parallel_for(n, [&](std::size_t i) {
        Matrix Xi(static_cast<Eigen::Index>(n - 1), X.cols());
        std::vector<double> yi;
        yi.reserve(n - 1);
        for (std::size_t r = 0, w = 0; r < n; ++r) {
            if (r == i) continue;
            Xi.row(static_cast<Eigen::Index>(w++)) = X.row(static_cast<Eigen::Index>(r));
            yi.push_back(y[r]);
        }
        BartConfig cfg = config;
        cfg.seed = derive_seed(config.seed, 0x4c4f4fULL, i);
        const BartPosterior post = bart_fit(Xi, yi, cfg);
        const auto pred = bart_predict(post, X.row(static_cast<Eigen::Index>(i)));
        out.mean[i] = pred.mean[0];
        out.lo[i] = pred.lo[0];
        out.hi[i] = pred.hi[0];
    });
    return out;
}

std::vector<double> partial_dependence(const BartPosterior& posterior, const Matrix& X,
                                       std::size_t var, std::span<const double> grid) {
    if (var >= posterior.dimension()) throw InvalidParameter("partial_dependence: variable out of range");
    if (static_cast<std::size_t>(X.cols()) != posterior.dimension()) {
        throw InvalidSize("partial_dependence: predictor dimension mismatch");
    }
    if (X.rows() == 0) throw InvalidSize("partial_dependence: no reference rows");
    std::vector<double> out;
    out.reserve(grid.size());
    std::vector<double> x(posterior.dimension());
    for (double g : grid) {
        double s = 0.0;
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            for (std::size_t c = 0; c < x.size(); ++c) x[c] = X(r, static_cast<Eigen::Index>(c));
            x[var] = g;
            s += posterior.predict_mean(x);
        }
        out.push_back(s / static_cast<double>(X.rows()));
    }
    return out;
}

}  // namespace bvmdesign

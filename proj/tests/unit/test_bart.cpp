#include <doctest.h>

#include <cmath>
#include <random>

#include "bvmdesign/bart.hpp"
#include "bvmdesign/error.hpp"

using namespace bvmdesign;

namespace {

Matrix grid_1d(std::size_t n, double lo, double hi) {
    Matrix X(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) X(static_cast<Eigen::Index>(i), 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return X;
}

BartConfig quick(std::uint64_t seed = 1) {
    BartConfig c;
    c.n_iterations = 1200;
    c.n_burnin = 200;
    c.thin = 10;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("constant response") {
    const double c = 3.5;
    Matrix X(30, 2);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u;
    for (Eigen::Index i = 0; i < 30; ++i) X.row(i) << u(rng), u(rng);
    const std::vector<double> y(30, c);
    const auto post = bart_fit(X, y, quick());
    const auto pred = bart_predict(post, X.topRows(5));
    for (double m : pred.mean) CHECK(std::abs(m - c) <= 0.01 * std::abs(c));
    for (const auto& s : post.states()) CHECK(s.sigma < 0.05 * (1.0 + std::abs(c)));
    const auto cv = loocv(X.topRows(12), std::vector<double>(12, c), quick());
    for (double m : cv.mean) CHECK(std::abs(m - c) <= 0.01 * std::abs(c));
}

TEST_CASE("noiseless linear response") {
    const Matrix X = grid_1d(50, 0.0, 1.0);
    std::vector<double> y(50);
    for (std::size_t i = 0; i < 50; ++i) y[i] = 2.0 * X(static_cast<Eigen::Index>(i), 0);
    const auto post = bart_fit(X, y, BartConfig{});
    Matrix mid(49, 1);
    for (Eigen::Index i = 0; i < 49; ++i) mid(i, 0) = 0.5 * (X(i, 0) + X(i + 1, 0));
    const auto pred = bart_predict(post, mid);
    double sse = 0.0;
    std::size_t covered = 0;
    for (Eigen::Index i = 0; i < 49; ++i) {
        const double truth = 2.0 * mid(i, 0);
        sse += (pred.mean[i] - truth) * (pred.mean[i] - truth);
        covered += pred.lo[i] <= truth && truth <= pred.hi[i] ? 1 : 0;
    }
    CHECK(std::sqrt(sse / 49.0) < 0.1 * 2.0);
    CHECK(static_cast<double>(covered) / 49.0 >= 0.8);
}

TEST_CASE("active predictors are used more than noise predictors") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> z;
    Matrix X(100, 6);
    std::vector<double> y(100);
    for (Eigen::Index i = 0; i < 100; ++i) {
        for (Eigen::Index j = 0; j < 6; ++j) X(i, j) = u(rng);
        y[i] = 10.0 * std::sin(M_PI * X(i, 0) * X(i, 1)) + z(rng);
    }
    const auto post = bart_fit(X, y, BartConfig{});
    const auto prop = post.inclusion_proportions();
    const double active = 0.5 * (prop[0] + prop[1]);
    const double noise = 0.25 * (prop[2] + prop[3] + prop[4] + prop[5]);
    CHECK(active > noise);
}

TEST_CASE("ensemble json round trip is lossless") {
    const Matrix X = grid_1d(20, -1.0, 1.0);
    std::vector<double> y(20);
    for (std::size_t i = 0; i < 20; ++i) y[i] = std::exp(X(static_cast<Eigen::Index>(i), 0));
    auto post = bart_fit(X, y, quick());
    post.set_predictor_names({"x"});
    post.set_response_transform("log");
    const auto text = post.to_json().dump();
    const auto back = BartPosterior::from_json(nlohmann::json::parse(text));
    CHECK(back == post);
    const auto p1 = bart_predict(post, X), p2 = bart_predict(back, X);
    CHECK(p1.draws == p2.draws);
}

TEST_CASE("fits are bit-exact given the seed and predictions are pure") {
    const Matrix X = grid_1d(15, 0.0, 1.0);
    std::vector<double> y(15);
    for (std::size_t i = 0; i < 15; ++i) y[i] = std::sin(6.0 * X(static_cast<Eigen::Index>(i), 0));
    const auto a = bart_fit(X, y, quick(3));
    const auto b = bart_fit(X, y, quick(3));
    const auto c = bart_fit(X, y, quick(4));
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(bart_predict(a, X).draws == bart_predict(a, X).draws);
}

TEST_CASE("tree structure invariants") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u;
    Matrix X(40, 3);
    std::vector<double> y(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
        X.row(i) << u(rng), u(rng), 5.0;  // third column constant
        y[static_cast<std::size_t>(i)] = X(i, 0) > 0.5 ? 1.0 : 0.0;
    }
    const auto post = bart_fit(X, y, quick());
    CHECK(post.inclusion_counts()[2] == 0);
    for (const auto& st : post.states()) {
        CHECK(st.sigma > 0.0);
        for (const auto& t : st.trees) {
            std::vector<std::size_t> hits(t.nodes().size(), 0);
            for (Eigen::Index i = 0; i < 40; ++i) {
                int k = 0;
                while (!t.nodes()[k].is_leaf()) {
                    const auto& n = t.nodes()[k];
                    CHECK(n.cut > post.training_lo()[n.var]);
                    CHECK(n.cut < post.training_hi()[n.var]);
                    k = X(i, n.var) <= n.cut ? n.left : n.right;
                }
                ++hits[k];
            }
            for (std::size_t k = 0; k < hits.size(); ++k) {
                if (t.nodes()[k].is_leaf()) CHECK(hits[k] > 0);
            }
        }
    }
}

TEST_CASE("prior depth control on pure noise") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    Matrix X = grid_1d(60, 0.0, 1.0);
    std::vector<double> y(60);
    for (auto& v : y) v = z(rng);
    CHECK(bart_fit(X, y, quick()).mean_tree_depth() <= 3.0);
}

TEST_CASE("small problem mixes across seeds") {
    const Matrix X = grid_1d(12, 0.0, 1.0);
    std::vector<double> y(12);
    for (std::size_t i = 0; i < 12; ++i) y[i] = X(static_cast<Eigen::Index>(i), 0) * X(static_cast<Eigen::Index>(i), 0);
    const std::vector<double> x{0.4};
    const double a = bart_fit(X, y, quick(1)).predict_mean(x);
    const double b = bart_fit(X, y, quick(2)).predict_mean(x);
    CHECK(std::abs(a - b) < 0.05 * 1.0);
}

TEST_CASE("normalization round trips") {
    const Matrix X = grid_1d(10, 0.0, 1.0);
    const std::vector<double> y{1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0, 6.0, 9.0, 0.5};
    const auto post = bart_fit(X, y, quick());
    for (double v : y) CHECK(post.denormalize(post.normalize(v)) == doctest::Approx(v).epsilon(1e-15));
}

TEST_CASE("holdout error on a small linear fixture stays near in-sample error") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    const Matrix X = grid_1d(12, 0.0, 1.0);
    std::vector<double> y(12);
    for (std::size_t i = 0; i < 12; ++i) y[i] = 3.0 * X(static_cast<Eigen::Index>(i), 0) + 0.1 * z(rng);
    const auto post = bart_fit(X, y, quick());
    const auto in = bart_predict(post, X);
    const auto cv = loocv(X, y, quick());
    double sse_in = 0.0, sse_cv = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
        sse_in += (in.mean[i] - y[i]) * (in.mean[i] - y[i]);
        sse_cv += (cv.mean[i] - y[i]) * (cv.mean[i] - y[i]);
    }
    CHECK(std::sqrt(sse_cv) < 3.0 * std::sqrt(sse_in));
}

TEST_CASE("bart input errors") {
    const Matrix X = grid_1d(9, 0.0, 1.0);
    CHECK_THROWS_AS(bart_fit(X, std::vector<double>(9, 1.0), quick()), InvalidSize);
    const Matrix X2 = grid_1d(12, 0.0, 1.0);
    std::vector<double> y(12, 1.0);
    y[3] = NAN;
    CHECK_THROWS_AS(bart_fit(X2, y, quick()), InvalidParameter);
    y[3] = 1.0;
    const auto post = bart_fit(X2, y, quick());
    CHECK(bart_predict(post, Matrix(0, 1)).mean.empty());
    CHECK_THROWS_AS(bart_predict(post, Matrix::Zero(2, 3)), InvalidSize);
    BartConfig bad;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidParameter);
    CHECK_THROWS_AS(BartPosterior::from_json(nlohmann::json{{"version", 2}}), ConfigError);
}

TEST_CASE("partial dependence follows the active predictor") {
    Matrix X(40, 2);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u;
    std::vector<double> y(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
        X.row(i) << u(rng), u(rng);
        y[static_cast<std::size_t>(i)] = 2.0 * X(i, 0);
    }
    const auto post = bart_fit(X, y, BartConfig{});
    const std::vector<double> grid{0.1, 0.5, 0.9};
    const auto pd0 = partial_dependence(post, X, 0, grid);
    const auto pd1 = partial_dependence(post, X, 1, grid);
    CHECK(pd0[2] - pd0[0] > 1.0);
    CHECK(std::abs(pd1[2] - pd1[0]) < 0.3);
    CHECK_THROWS_AS(partial_dependence(post, X, 5, grid), InvalidParameter);
}

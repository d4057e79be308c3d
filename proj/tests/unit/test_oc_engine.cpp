#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "bvmdesign/error.hpp"
#include "bvmdesign/oc_engine.hpp"
#include "bvmdesign/stats.hpp"
#include "harness_models.hpp"

using namespace bvmdesign;

namespace {

TrialDesign three_stage() {
    TrialDesign d;
    d.name = "three";
    d.schedule = {350, 500, 700};
    d.efficacy = {0.995, 0.99, 0.975};
    return d;
}

MvnConfig small_mvn(std::uint64_t seed = 1) {
    MvnConfig m;
    m.draws = 20000;
    m.seed = seed;
    return m;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("fixed-design power") {
    CHECK(power_fixed(0.0, 0.0, 100, 0.975, 1.0) == doctest::Approx(0.025).epsilon(1e-14));
    // 1 - Phi(1.959963984540054 - 2.8), evaluated with mpmath.
    CHECK(std::abs(power_fixed(0.28, 0.0, 100, 0.975, 1.0) - 0.7995559) < 1e-6);
    CHECK(power_fixed(0.3, 0.0, 100000000, 0.975, 1.0) >= 1.0 - 1e-9);
    for (double lambda : {0.3, 1.0, 7.5}) CHECK(power_fixed(1.2, 1.2, 40, 0.9, lambda) == doctest::Approx(0.1));
    for (double c : {0.01, 3.0, 250.0}) {
        CHECK(power_fixed(c * 0.1, c * 0.02, 200, 0.95, c * 1.3) ==
              doctest::Approx(power_fixed(0.1, 0.02, 200, 0.95, 1.3)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(power_fixed(0.1, 0.0, 100, 0.975, 0.0), InvalidParameter);
    CHECK_THROWS_AS(power_fixed(0.1, 0.0, 100, 1.0, 1.0), InvalidParameter);
}

TEST_CASE("joint decision statistic") {
    const auto g = gamma_joint(0.0, 0.0, three_stage(), 2.0);
    CHECK(g.mean.norm() == 0.0);
    CHECK(g.correlation(0, 1) == doctest::Approx(0.836660).epsilon(1e-6));
    CHECK(g.correlation(0, 2) == doctest::Approx(0.707107).epsilon(1e-6));
    CHECK(g.correlation(1, 2) == doctest::Approx(0.845154).epsilon(1e-6));
    CHECK((g.cholesky * g.cholesky.transpose() - g.correlation).norm() < 1e-12);
    const auto g1 = gamma_joint(0.2, 0.0, fixed_design(100, 0.975), 1.0);
    CHECK(g1.correlation.rows() == 1);
    CHECK(g1.correlation(0, 0) == 1.0);
    CHECK(g1.mean(0) == doctest::Approx(2.0));
    auto bad = three_stage();
    bad.schedule = {350, 350, 700};
    CHECK_THROWS_AS(gamma_joint(0.0, 0.0, bad, 1.0), DesignError);
}

TEST_CASE("stopping probabilities partition the draws") {
    auto d = three_stage();
    d.futility = {0.2, 0.3};
    for (double psi : {-0.3, 0.0, 0.05, 0.12, 0.5}) {
        const auto p = stop_probs(d, psi, 2.0, small_mvn());
        CHECK(sum(p.efficacy) + sum(p.futility) + p.no_success - p.futility.back() ==
              doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p.futility.back() == 0.0);
        const auto cum = p.cumulative_efficacy();
        for (std::size_t t = 1; t < cum.size(); ++t) CHECK(cum[t] >= cum[t - 1]);
        CHECK(sum(p.end_at()) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Exact integer partition from the kernel.
    const StoppingKernel kernel(d, small_mvn());
    std::vector<std::size_t> eff(3), fut(3);
    kernel.counts(0.07, eff, fut);
    const auto total = std::accumulate(eff.begin(), eff.end(), std::size_t{0}) +
                       std::accumulate(fut.begin(), fut.end(), std::size_t{0});
    CHECK(total <= kernel.draws());
}

TEST_CASE("single analysis reduces to the fixed design") {
    for (double psi : {0.0, 0.1, 0.2}) {
        const auto p = stop_probs(fixed_design(300, 0.975), psi, 2.0, small_mvn(5));
        const double exact = power_fixed(psi, 0.0, 300, 0.975, 2.0);
        CHECK(std::abs(p.efficacy[0] - exact) <= 3.0 * p.efficacy_se[0] + 1e-12);
    }
}

TEST_CASE("interim thresholds near one recover the final fixed design") {
    auto d = three_stage();
    d.efficacy = {1.0 - 1e-12, 1.0 - 1e-12, 0.975};
    const auto p = stop_probs(d, 0.15, 2.0, small_mvn(2));
    const double exact = power_fixed(0.15, 0.0, 700, 0.975, 2.0);
    const auto cum = p.cumulative_efficacy();
    CHECK(cum[0] < 1e-3);
    CHECK(std::abs(cum[2] - exact) <= 3.0 * std::sqrt(exact * (1.0 - exact) / 20000.0));
}

TEST_CASE("common random numbers make evaluation bit-identical") {
    const auto a = stop_probs(three_stage(), 0.1, 2.0, small_mvn(9));
    const auto b = stop_probs(three_stage(), 0.1, 2.0, small_mvn(9));
    const auto c = stop_probs(three_stage(), 0.1, 2.0, small_mvn(10));
    CHECK(a.efficacy == b.efficacy);
    CHECK(a.efficacy != c.efficacy);
}

TEST_CASE("point-mass prior equals stop_probs at that theta") {
    const auto spec = harness::normal_spec(2.0);
    const std::vector<ParameterPoint> sample(50, spec->make_point({0.12}));
    const FixedLambda lambda(2.0);
    const auto report = assurance(three_stage(), sample, spec, lambda, small_mvn(3));
    const auto p = stop_probs(three_stage(), 0.12, 2.0, small_mvn(3));
    const auto cum = p.cumulative_efficacy();
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(report.efficacy_cumulative[t] == doctest::Approx(cum[t]).epsilon(1e-12));
    }
    CHECK(report.iess == doctest::Approx(iess(three_stage(), p)).epsilon(1e-12));
    CHECK(report.source == "bart-bvm");
}

TEST_CASE("iess arithmetic") {
    TrialDesign d;
    d.schedule = {100, 200};
    d.efficacy = {0.99, 0.975};
    const std::vector<double> half{0.5, 0.5}, final_only{0.0, 1.0}, bad{0.5, 0.2};
    CHECK(iess(d, half) == 150.0);
    CHECK(iess(d, final_only) == 200.0);
    CHECK_THROWS_AS(iess(d, bad), InvalidParameter);
}

TEST_CASE("integrated expected cost limits") {
    const auto spec = harness::normal_spec(2.0);
    const DesignPrior strong({MarginalPrior("mu", MarginalKind::normal, 5.0, 0.01)});
    const auto sample = sample_design_prior(strong, 200, 1);
    const FixedLambda lambda(2.0);
    const auto d = three_stage();
    const auto br = iec(d, CostSpec{1000.0, 10.0, 1.0}, sample, spec, lambda, small_mvn());
    CHECK(br.type1 == 0.0);
    CHECK(br.type2 < 1e-9);
    CHECK(br.total == doctest::Approx(350.0).epsilon(1e-9));

    const DesignPrior wide({MarginalPrior("mu", MarginalKind::normal, 0.05, 0.1)});
    const auto ws = sample_design_prior(wide, 300, 2);
    const auto rep = assurance(d, ws, spec, lambda, small_mvn(), CostSpec{0.0, 0.0, 1.0});
    CHECK(rep.iec.total == rep.iess);
    CHECK(rep.iec.type1 == 0.0);
}

TEST_CASE("integrated power curve") {
    const auto spec = harness::normal_spec(2.0);
    const DesignPrior prior({MarginalPrior("mu", MarginalKind::normal, 0.1, 0.05)});
    const auto sample = sample_design_prior(prior, 100, 4);
    const FunctionLambda lambda([](std::span<const double> th) { return 1.5 + std::abs(th[0]); });
    const std::vector<double> grid{-0.1, 0.0, 0.05, 0.1, 0.15, 0.3};
    const auto curve = integrated_power_curve(grid, fixed_design(200, 0.975), sample, spec, lambda, small_mvn());
    REQUIRE(curve.size() == grid.size());
    CHECK(std::abs(curve[1].efficacy_cumulative[0] - 0.025) <= 3.0 * curve[1].efficacy_se[0]);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        CHECK(curve[i].efficacy_cumulative[0] >= curve[i - 1].efficacy_cumulative[0] -
                                                     3.0 * (curve[i].efficacy_se[0] + curve[i - 1].efficacy_se[0]));
    }
    const auto grid41 = default_psi_grid(spec, prior);
    CHECK(grid41.size() == 41);
    CHECK(grid41.front() == doctest::Approx(0.1 - 0.15));
    CHECK(grid41.back() == doctest::Approx(0.1 + 0.15));
    CHECK_THROWS_AS(integrated_power_curve(std::span<const double>{}, fixed_design(200, 0.975), sample, spec, lambda,
                                           small_mvn()),
                    InvalidSize);
    std::ostringstream os;
    write_curve_csv(os, fixed_design(200, 0.975), curve);
    CHECK(os.str().find("psi") != std::string::npos);
}

TEST_CASE("design validation reports every offending field") {
    TrialDesign d;
    d.schedule = {500, 300};
    d.efficacy = {0.99, 1.5, 0.9};
    d.futility = {0.1, 0.2};
    const auto errs = d.validation_errors();
    auto has = [&](const std::string& f) {
        return std::any_of(errs.begin(), errs.end(), [&](const auto& e) { return e.first == f; });
    };
    CHECK(has("schedule"));
    CHECK(has("efficacy"));
    CHECK(has("futility"));
    try {
        d.validate();
        FAIL("expected DesignError");
    } catch (const DesignError& e) {
        CHECK(e.fields().size() == errs.size());
    }
    const auto j = three_stage().to_json();
    const auto back = TrialDesign::from_json(j);
    CHECK(back.schedule == three_stage().schedule);
    CHECK(back.efficacy == three_stage().efficacy);
    CHECK_THROWS_AS(TrialDesign::from_json(nlohmann::json{{"schedule", "x"}}), ConfigError);
}

TEST_CASE("design optimization") {
    const auto spec = harness::normal_spec(2.0);
    const DesignPrior prior({MarginalPrior("mu", MarginalKind::normal, 0.2, 0.05)});
    const auto sample = sample_design_prior(prior, 200, 6);
    const FixedLambda lambda(2.0);
    const auto prepared = prepare_prior(spec, sample, lambda);
    const CostSpec cost{1000.0, 10.0, 1.0};

    const std::vector<TrialDesign> one{three_stage()};
    const auto r1 = optimize_design(one, Objective::min_iec, cost, 0.8, prepared, small_mvn());
    REQUIRE(r1.ranking.size() == 1);
    CHECK(r1.ranking[0].rank == 1);

    // All prior mass far below psi0: every score is exactly zero, so ties resolve
    // by smaller n_T and then fewer analyses.
    const DesignPrior null_prior({MarginalPrior("mu", MarginalKind::normal, -50.0, 0.01)});
    const auto null_sample = sample_design_prior(null_prior, 50, 7);
    const auto null_prepared = prepare_prior(spec, null_sample, lambda);
    auto a = fixed_design(100, 0.975);
    a.name = "a";
    auto b = fixed_design(80, 0.975);
    b.name = "b";
    TrialDesign c;
    c.name = "c";
    c.schedule = {40, 80};
    c.efficacy = {0.99, 0.975};
    const std::vector<TrialDesign> tied{a, c, b};
    const auto r2 = optimize_design(tied, Objective::min_iec, CostSpec{1.0, 1.0, 0.0}, 0.8, null_prepared, small_mvn());
    REQUIRE(r2.ranking.size() == 3);
    CHECK(r2.ranking[0].score == 0.0);
    CHECK(r2.ranking[0].name == "b");
    CHECK(r2.ranking[1].name == "c");
    CHECK(r2.ranking[2].name == "a");

    const auto r3 = optimize_design(one, Objective::min_iess, cost, 0.9999999, prepared, small_mvn());
    CHECK(r3.ranking.empty());
    CHECK_FALSE(r3.diagnostic.empty());

    CHECK(parse_objective("min-iec") == Objective::min_iec);
    CHECK(parse_objective("min-iess") == Objective::min_iess);
    CHECK_THROWS_AS(parse_objective("max-fun"), ConfigError);
}

TEST_CASE("uncertainty intervals") {
    const std::vector<double> same(60, 0.4);
    const auto iv = power_uncertainty(same);
    CHECK(iv.lo == 0.4);
    CHECK(iv.hi == 0.4);
    CHECK_THROWS_AS(power_uncertainty(std::vector<double>(49, 0.4)), InvalidSize);
}

TEST_CASE("report serialization") {
    const auto spec = harness::normal_spec(2.0);
    const std::vector<ParameterPoint> sample(10, spec->make_point({0.1}));
    const FixedLambda lambda(2.0);
    auto d = three_stage();
    d.reference = {{"cumulative_efficacy", {0.1, 0.2, 0.3}}, {"iess", 365}};
    const auto rep = assurance(d, sample, spec, lambda, small_mvn(), CostSpec{1000.0, 10.0, 1.0});
    const auto j = rep.to_json();
    CHECK(j["source"] == "bart-bvm");
    CHECK(j.contains("reference_check"));
    std::ostringstream os;
    rep.write_csv(os);
    CHECK(os.str().rfind("source,design,analysis,n,quantity,value,se,lo,hi\n", 0) == 0);
}

#include <doctest.h>

#include <cmath>

#include "bvmdesign/error.hpp"
#include "bvmdesign/mc_oracle.hpp"
#include "harness_models.hpp"

using namespace bvmdesign;

namespace {

OracleConfig quick_oracle(std::size_t nsim, std::uint64_t seed) {
    OracleConfig o;
    o.nsim = nsim;
    o.seed = seed;
    o.mcmc.n_iterations = 1200;
    o.mcmc.n_burnin = 300;
    return o;
}

}  // namespace

TEST_CASE("oracle is calibrated at the null") {
    SUBCASE("normal mean") {
        const auto spec = harness::normal_spec(2.0);
        const auto est = mc_power_fixed(spec, spec->default_analysis_prior(), spec->make_point({0.0}), 80, 0.9,
                                        quick_oracle(400, 3));
        CHECK(est.failures == 0);
        CHECK(std::abs(est.p - 0.1) <= 3.0 * std::sqrt(0.1 * 0.9 / 400.0));
    }
    SUBCASE("bernoulli") {
        const auto spec = harness::bernoulli_spec(0.5);
        const auto est = mc_power_fixed(spec, spec->default_analysis_prior(), spec->make_point({0.5}), 200, 0.9,
                                        quick_oracle(400, 4));
        // Discrete data: allow the lattice of attainable tau values one extra SE.
        CHECK(std::abs(est.p - 0.1) <= 4.0 * std::sqrt(0.1 * 0.9 / 400.0));
    }
}

TEST_CASE("oracle power agrees with the closed form on the normal model") {
    const auto spec = harness::normal_spec(2.0);
    const auto est = mc_power_fixed(spec, spec->default_analysis_prior(), spec->make_point({0.4}), 100, 0.975,
                                    quick_oracle(300, 5));
    const double exact = power_fixed(0.4, 0.0, 100, 0.975, 2.0);
    CHECK(est.se > 0.0);
    CHECK(std::abs(est.p - exact) <= 3.0 * est.se + 0.02);
}

TEST_CASE("single-analysis sequential oracle reuses the fixed-design stream") {
    const auto spec = harness::bernoulli_spec(0.5);
    const auto theta = spec->make_point({0.6});
    const auto cfg = quick_oracle(120, 8);
    const auto fixed = mc_power_fixed(spec, spec->default_analysis_prior(), theta, 60, 0.95, cfg);
    const auto gsd = mc_gsd(spec, spec->default_analysis_prior(), theta, fixed_design(60, 0.95, 0.5), cfg);
    CHECK(gsd.source == "mc-oracle");
    CHECK(gsd.efficacy_cumulative[0] == fixed.p);
    CHECK(gsd.iess == 60.0);
}

TEST_CASE("sequential oracle partitions replicates") {
    const auto spec = harness::normal_spec(2.0);
    TrialDesign d;
    d.schedule = {30, 60, 90};
    d.efficacy = {0.99, 0.98, 0.975};
    d.futility = {0.2, 0.3};
    const auto rep =
        mc_gsd(spec, spec->default_analysis_prior(), spec->make_point({0.3}), d, quick_oracle(150, 2), CostSpec{0, 0, 1});
    double total = rep.no_success;
    for (std::size_t t = 0; t < 3; ++t) total += rep.efficacy_stop_at[t] + rep.futility_stop_at[t];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.iec.total == rep.iess);
    for (std::size_t t = 1; t < 3; ++t) CHECK(rep.efficacy_cumulative[t] >= rep.efficacy_cumulative[t - 1]);
}

TEST_CASE("oracle determinism and configuration errors") {
    const auto spec = harness::normal_spec(2.0);
    const auto theta = spec->make_point({0.2});
    const auto a = mc_power_fixed(spec, spec->default_analysis_prior(), theta, 40, 0.9, quick_oracle(100, 1));
    const auto b = mc_power_fixed(spec, spec->default_analysis_prior(), theta, 40, 0.9, quick_oracle(100, 1));
    CHECK(a.p == b.p);
    CHECK_THROWS_AS(mc_power_fixed(spec, spec->default_analysis_prior(), theta, 40, 0.9, quick_oracle(99, 1)),
                    InvalidParameter);
    CHECK_THROWS_AS(OracleConfig::from_json(nlohmann::json{{"nsim", "many"}}), ConfigError);
}

TEST_CASE("design-prior oracle averages over resampled theta") {
    const auto spec = harness::normal_spec(2.0);
    const DesignPrior prior({MarginalPrior("mu", MarginalKind::normal, 0.3, 0.1)});
    auto cfg = quick_oracle(200, 12);
    cfg.resample = true;
    const auto est = mc_power_fixed(spec, spec->default_analysis_prior(), prior, 80, 0.975, cfg);
    const auto sample = sample_design_prior(prior, 4000, 3);
    double exact = 0.0;
    for (const auto& th : sample) exact += power_fixed(th[0], 0.0, 80, 0.975, 2.0);
    exact /= 4000.0;
    CHECK(std::abs(est.p - exact) <= 3.0 * est.se + 0.02);
}

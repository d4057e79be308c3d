#include <doctest.h>

#include <vector>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"
#include "bvmdesign/random.hpp"
#include "bvmdesign/stats.hpp"

using namespace bvmdesign;

TEST_CASE("normal distribution functions match high-precision values") {
    CHECK(normal_cdf(0.5) == doctest::Approx(0.691462461274013103637704610608).epsilon(1e-14));
    CHECK(normal_cdf(-3.0) == doctest::Approx(0.0013498980316300945266518147676).epsilon(1e-13));
    CHECK(normal_sf(8.0) == doctest::Approx(6.22096057427178387435730610422e-16).epsilon(1e-12));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-13));
    CHECK_THROWS_AS(normal_quantile(0.0), InvalidParameter);
    CHECK_THROWS_AS(normal_quantile(1.0), InvalidParameter);
}

TEST_CASE("chi-squared quantile") {
    CHECK(chi_squared_quantile(3.0, 0.1) == doctest::Approx(0.5843743741551835).epsilon(1e-12));
    CHECK_THROWS_AS(chi_squared_quantile(0.0, 0.5), InvalidParameter);
}

TEST_CASE("sample moments and type-7 quantiles") {
    const std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(mean(x) == doctest::Approx(31.0 / 8.0));
    CHECK(sample_variance(std::vector<double>{1.0, 2.0, 3.0, 4.0}) == doctest::Approx(5.0 / 3.0));
    CHECK(sample_sd(std::vector<double>{7.0}) == 0.0);
    const std::vector<double> probs{0.1, 0.5, 0.9};
    const auto q = quantiles(x, probs);
    CHECK(q[0] == doctest::Approx(1.0));
    CHECK(q[1] == doctest::Approx(3.5));
    CHECK(q[2] == doctest::Approx(6.9));
    CHECK_THROWS_AS(quantile_sorted(std::vector<double>{}, 0.5), InvalidSize);
}

TEST_CASE("seed derivation is deterministic and separates streams") {
    CHECK(derive_seed(7, 1, 2) == derive_seed(7, 1, 2));
    CHECK(derive_seed(7, 1, 2) != derive_seed(7, 2, 1));
    CHECK(derive_seed(7, 0) != derive_seed(8, 0));
}

TEST_CASE("doubles format for exact round trip") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0}) {
        CHECK(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("csv parsing") {
    const auto t = parse_csv("a,b\n1,2\n3,4\n");
    CHECK(t.rows.size() == 2);
    CHECK(t.column("b") == 1);
    CHECK(t.number(1, 0) == 3.0);
    CHECK_THROWS_AS(t.column("c"), ConfigError);
    CHECK_THROWS_AS(read_csv_file("/nonexistent/file.csv"), ConfigError);
}

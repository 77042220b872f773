#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "rtsub/dist.hpp"
#include "rtsub/random.hpp"
#include "support/oracles.hpp"

using namespace rtsub;
using Catch::Approx;

TEST_CASE("normal cdf matches the series oracle") {
    for (double x = -8.0; x <= 8.0; x += 0.0625) {
        const double oracle = static_cast<double>(oracle::normal_cdf_series(x));
        REQUIRE(std::fabs(std_normal_cdf(x) - oracle) < 1e-15);
    }
}

TEST_CASE("normal upper tail keeps relative accuracy") {
    for (double x = 3.0; x <= 37.0; x += 0.5) {
        const double oracle = static_cast<double>(oracle::normal_sf_continued_fraction(x));
        REQUIRE(std::fabs(std_normal_sf(x) / oracle - 1.0) < 1e-12);
    }
    REQUIRE(std_normal_sf(0.0) == Approx(0.5).epsilon(1e-15));
}

TEST_CASE("normal quantile inverts the cdf") {
    for (double p : {1e-300, 1e-100, 1e-20, 1e-10, 1e-5, 0.001, 0.025, 0.3, 0.5, 0.7, 0.975, 0.999, 1 - 1e-10}) {
        const double z = std_normal_quantile(p);
        if (p < 0.5) {
            REQUIRE(std_normal_cdf(z) == Approx(p).epsilon(1e-12));
        } else {
            REQUIRE(std_normal_sf(z) == Approx(1 - p).epsilon(1e-6));
        }
    }
    REQUIRE(std_normal_quantile(0.975) == Approx(1.959963984540054).epsilon(1e-14));
    REQUIRE(std_normal_quantile(0.5) == 0.0);
    REQUIRE_THROWS_AS(std_normal_quantile(0.0), std::domain_error);
    REQUIRE_THROWS_AS(std_normal_quantile(1.0), std::domain_error);
    REQUIRE_THROWS_AS(std_normal_quantile(1.5), std::invalid_argument);
    REQUIRE_THROWS_AS(std_normal_quantile(std::nan("")), std::invalid_argument);
}

TEST_CASE("normal quantile is antisymmetric") {
    for (double p = 0.001; p < 0.5; p += 0.0137) {
        REQUIRE(std_normal_quantile(p) == Approx(-std_normal_quantile(1 - p)).margin(1e-13));
    }
}

TEST_CASE("empirical cdf and upper quantile") {
    const EmpiricalCDF F({3.0, 1.0, 2.0, 2.0, 5.0});
    REQUIRE(F(0.5) == 0.0);
    REQUIRE(F(1.0) == Approx(0.2));
    REQUIRE(F(2.0) == Approx(0.6));
    REQUIRE(F(4.9) == Approx(0.8));
    REQUIRE(F(5.0) == 1.0);
    REQUIRE(F.upper_quantile(0.05) == 5.0);
    REQUIRE(F.upper_quantile(0.2) == 3.0);
    REQUIRE(F.upper_quantile(0.5) == 2.0);
    REQUIRE(F.upper_quantile(0.95) == 1.0);
    REQUIRE_THROWS(EmpiricalCDF(std::vector<double>{}).upper_quantile(0.05));
}

TEST_CASE("empirical quantile is the generalized inverse") {
    Stream rng(11);
    std::vector<double> v(137);
    for (auto& x : v) x = std::floor(rng.uniform() * 40.0);
    const EmpiricalCDF F(v);
    for (double alpha = 0.001; alpha < 1.0; alpha += 0.013) {
        const double q = F.upper_quantile(alpha);
        REQUIRE(F(q) >= 1 - alpha - 1e-12);
        for (double s : F.sorted_values()) {
            if (s < q) REQUIRE(F(s) < 1 - alpha);
        }
    }
}

TEST_CASE("midranks average tied positions") {
    const std::vector<double> v{2.0, 1.0, 2.0, 3.0, 2.0};
    const auto r = midranks(v);
    REQUIRE(r == std::vector<double>{3.0, 1.0, 3.0, 5.0, 3.0});
}

TEST_CASE("rank transform produces the exact score grid") {
    Stream rng(3);
    for (NullMarginal F0 : {NullMarginal::StdNormal, NullMarginal::Uniform01}) {
        StatMatrix H(17, 6);
        for (auto& v : H.values()) v = rng.uniform() * 10 - 3;
        const StatMatrix Ht = rank_transform(H, F0);
        const std::size_t N = H.size();
        std::vector<double> grid(N);
        for (std::size_t r = 0; r < N; ++r) grid[r] = null_quantile(F0, (static_cast<double>(r) + 0.5) / N);
        std::vector<double> got(Ht.values().begin(), Ht.values().end());
        std::sort(got.begin(), got.end());
        REQUIRE(got == grid);
        // Order preserving.
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j)
                if (H.values()[i] < H.values()[j]) REQUIRE(Ht.values()[i] < Ht.values()[j]);
    }
}

TEST_CASE("rank transform is invariant to monotone maps and rejects non-finite input") {
    Stream rng(4);
    StatMatrix H(9, 4);
    for (auto& v : H.values()) v = rng.uniform();
    StatMatrix G = H;
    for (auto& v : G.values()) v = std::exp(5 * v) - 7;
    const auto a = rank_transform(H, NullMarginal::StdNormal);
    const auto b = rank_transform(G, NullMarginal::StdNormal);
    REQUIRE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    H(2, 1) = std::nan("");
    REQUIRE_THROWS_AS(rank_transform(H, NullMarginal::StdNormal), std::invalid_argument);
}

TEST_CASE("tied entries share a midrank score") {
    StatMatrix H(2, 2);
    H(0, 0) = 1;
    H(0, 1) = 1;
    H(1, 0) = 0;
    H(1, 1) = 2;
    const auto Ht = rank_transform(H, NullMarginal::Uniform01);
    REQUIRE(Ht(0, 0) == Ht(0, 1));
    REQUIRE(Ht(0, 0) == Approx(0.5));
    REQUIRE(Ht(1, 0) == Approx(0.125));
    REQUIRE(Ht(1, 1) == Approx(0.875));
}

TEST_CASE("sample moments and covariance") {
    const std::vector<double> x{1, 2, 3, 4};
    const auto mom = sample_moments(x);
    REQUIRE(mom.mean == 2.5);
    REQUIRE(mom.variance == Approx(5.0 / 3.0));
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 2, 4, 3, 6, 4, 8;
    const auto S = sample_covariance_matrix(X);
    REQUIRE(S(0, 0) == Approx(5.0 / 3.0));
    REQUIRE(S(0, 1) == Approx(10.0 / 3.0));
    REQUIRE(S(1, 1) == Approx(20.0 / 3.0));
    REQUIRE_THROWS(sample_moments(std::vector<double>{1.0}));
}

TEST_CASE("streams are pure functions of seed and path") {
    Stream a = make_stream(9, {1, 2});
    Stream b = make_stream(9, {1, 2});
    Stream c = make_stream(9, {2, 1});
    bool differ = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        REQUIRE(x == b());
        differ |= x != c();
    }
    REQUIRE(differ);
    Stream u(1);
    for (int i = 0; i < 100000; ++i) {
        const double v = u.uniform();
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("uniform draws pass a KS test") {
    Stream rng(77);
    std::vector<double> v(20000);
    for (auto& x : v) x = rng.uniform();
    REQUIRE(oracle::ks_pvalue(v, [](double x) { return x; }) > 0.001);
}

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "rtsub/dist.hpp"
#include "rtsub/merge.hpp"
#include "support/oracles.hpp"

using namespace rtsub;
using namespace rtsub::merge;
using Catch::Approx;

TEST_CASE("merging rules on known vectors") {
    const std::vector<double> p{0.01, 0.04, 0.2, 0.5};
    REQUIRE(arithmetic(p) == Approx(2 * 0.1875));
    const double gm = std::pow(0.01 * 0.04 * 0.2 * 0.5, 0.25);
    REQUIRE(geometric(p) == Approx(std::numbers::e * gm));
    REQUIRE(bonferroni(p) == Approx(0.04));
    REQUIRE(bonf_geom(p) == Approx(2 * std::min(0.04, std::numbers::e * gm)));
    const std::vector<double> big{0.9, 0.95};
    REQUIRE(arithmetic(big) == 1.0);
    REQUIRE(geometric(big) == 1.0);
    REQUIRE(bonferroni(big) == 1.0);
    const std::vector<double> zero{0.0, 0.3};
    REQUIRE(geometric(zero) == 0.0);
    REQUIRE_THROWS(arithmetic(std::vector<double>{}));
    REQUIRE_THROWS(bonferroni(std::vector<double>{1.2}));
}

TEST_CASE("merged p-values are never below the smallest input") {
    Stream rng(2);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> p(5);
        for (auto& v : p) v = rng.uniform();
        const double mn = *std::min_element(p.begin(), p.end());
        REQUIRE(arithmetic(p) >= mn);
        REQUIRE(geometric(p) >= mn);
        REQUIRE(bonferroni(p) >= mn);
        REQUIRE(bonf_geom(p) >= mn);
    }
}

TEST_CASE("gauss power is exact at mu = 0") {
    for (double alpha : {0.01, 0.05, 0.1}) {
        for (double rho : {0.0, 0.05, 0.3, 0.9}) {
            for (std::size_t L : {1, 2, 200}) {
                REQUIRE(std::fabs(gauss_power({0.0, rho, L, alpha}) - alpha) < 1e-12);
            }
        }
    }
}

TEST_CASE("gauss power closed form") {
    // L = 1: Phi(mu - z).
    REQUIRE(gauss_power({1.0, 0.3, 1, 0.05}) == Approx(std_normal_cdf(1.0 - 1.6448536269514722)).epsilon(1e-13));
    // Power grows with L for rho < 1.
    REQUIRE(gauss_power({1.0, 0.3, 200, 0.05}) > gauss_power({1.0, 0.3, 1, 0.05}));
    // Conservative rule is less powerful.
    REQUIRE(gauss_conservative_power({1.0, 0.3, 200, 0.05}) < gauss_power({1.0, 0.3, 200, 0.05}));
}

TEST_CASE("gauss non-replication matches simulation") {
    Stream rng(14);
    for (double mu : {0.5, 2.0}) {
        for (double rho : {0.05, 0.3}) {
            for (std::size_t L : {1, 200}) {
                const GaussLocationModel model{mu, rho, L, 0.05};
                const double sd = std::sqrt(1.0 / L + rho * (L - 1.0) / L);
                const double thr = sd * std_normal_quantile(0.95);
                const double within = std::sqrt((1 - rho) / L);
                constexpr int draws = 40000;
                int disagree = 0;
                for (int i = 0; i < draws; ++i) {
                    const double shared = mu + std::sqrt(rho) * std_normal_quantile(rng.uniform());
                    const bool a = shared + within * std_normal_quantile(rng.uniform()) > thr;
                    const bool b = shared + within * std_normal_quantile(rng.uniform()) > thr;
                    disagree += a != b;
                }
                const double exact = gauss_nonreplication(model);
                const double se = oracle::binomial_se(exact, draws);
                REQUIRE(std::fabs(disagree / double(draws) - exact) <= 4 * se + 1e-9);
            }
        }
    }
}

TEST_CASE("aggregation lowers non-replication") {
    for (double mu : {0.5, 1.0, 2.0, 3.0}) {
        for (double rho : {0.05, 0.3}) {
            REQUIRE(gauss_nonreplication({mu, rho, 200, 0.05}) <= gauss_nonreplication({mu, rho, 1, 0.05}));
        }
    }
}

TEST_CASE("gauss model input validation") {
    REQUIRE_THROWS(gauss_power({0.0, 1.0, 2, 0.05}));
    REQUIRE_THROWS(gauss_power({0.0, 0.1, 0, 0.05}));
    REQUIRE_THROWS(gauss_nonreplication({0.0, 0.1, 2, 0.0}));
}

TEST_CASE("exchangeable gaussians have the requested moments") {
    Stream rng(3);
    constexpr int draws = 50000;
    double s0 = 0, s00 = 0, s01 = 0;
    for (int i = 0; i < draws; ++i) {
        const auto t = gen_exchangeable_gaussians(0.5, 0.3, 3, rng);
        s0 += t[0];
        s00 += (t[0] - 0.5) * (t[0] - 0.5);
        s01 += (t[0] - 0.5) * (t[2] - 0.5);
    }
    REQUIRE(s0 / draws == Approx(0.5).margin(0.02));
    REQUIRE(s00 / draws == Approx(1.0).margin(0.03));
    REQUIRE(s01 / draws == Approx(0.3).margin(0.03));
}

TEST_CASE("adversarial pair construction") {
    const double alpha = 0.05;
    const double z = std_normal_quantile(1 - alpha);
    // Deterministic map from u1.
    for (double u1 = 0.0005; u1 < 1.0; u1 += 0.001) {
        const auto [a, b] = adversarial_pair_from_uniform(alpha, u1);
        REQUIRE(a == Approx(std_normal_quantile(u1)));
        if (u1 > 1 - 2 * alpha) {
            REQUIRE((a + b) / 2 >= z - 1e-12);
            REQUIRE(std_normal_cdf(a) + std_normal_cdf(b) == Approx(2 - 2 * alpha));
        } else {
            REQUIRE(a == b);
            REQUIRE((a + b) / 2 <= z);
        }
    }
    Stream rng(6);
    constexpr int draws = 20000;
    int exceed = 0;
    int half = 0;
    for (int i = 0; i < draws; ++i) {
        const auto [a, b] = adversarial_pair(alpha, rng);
        exceed += (a + b) / 2 > z;
        const std::vector<double> T{a, b};
        half += z_half_average_test(T, alpha);
    }
    REQUIRE(exceed / double(draws) == Approx(2 * alpha).margin(4 * oracle::binomial_se(0.1, draws)));
    REQUIRE(half / double(draws) <= alpha);
    REQUIRE_THROWS(z_half_average_test(std::vector<double>{1.0}, 0.2));
}

TEST_CASE("convex-order tail bound") {
    REQUIRE_THROWS(tail_bound_cx(1.0));
    for (double s = 1.2; s < 6; s += 0.2) {
        // Dominates the N(0,1) tail itself.
        REQUIRE(tail_bound_cx(s) >= std_normal_sf(s));
    }
}

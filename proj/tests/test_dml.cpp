#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rtsub/dist.hpp"
#include "rtsub/dml.hpp"

using namespace rtsub;
using namespace rtsub::dml;
using Catch::Approx;

namespace {

// Brute-force k-NN: full sort by (distance, index).
double knn_brute(const std::vector<double>& x, const std::vector<double>& y, std::size_t k, double q) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double da = std::fabs(x[a] - q), db = std::fabs(x[b] - q);
        return da != db ? da < db : a < b;
    });
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += y[idx[j]];
    return s / k;
}

}  // namespace

TEST_CASE("folds are balanced random partitions") {
    Stream rng(1);
    const auto f = make_folds(103, 4, rng);
    std::vector<int> count(4, 0);
    for (auto v : f) ++count[v];
    REQUIRE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()) <= 1);
    Stream a(2), b(2);
    REQUIRE(make_folds(50, 2, a) == make_folds(50, 2, b));
    REQUIRE_THROWS(make_folds(3, 2, rng));
}

TEST_CASE("k-NN matches brute force including ties") {
    Stream rng(3);
    std::vector<double> x(60), y(60);
    for (std::size_t i = 0; i < 60; ++i) {
        x[i] = std::floor(rng.uniform() * 10);  // many ties
        y[i] = rng.uniform();
    }
    for (std::size_t k : {1, 3, 7, 60}) {
        const auto pred = knn_regressor(k).fit(x, y);
        for (double q = -1; q < 11; q += 0.25) REQUIRE(pred(q) == Approx(knn_brute(x, y, k, q)).epsilon(1e-14));
    }
    REQUIRE(default_knn_k(1000) == 50);
    REQUIRE(default_knn_k(250) == 20);
    REQUIRE_THROWS(knn_regressor(0));
    const auto pred = knn_regressor().fit(x, y);
    REQUIRE(pred(4.5) == Approx(knn_brute(x, y, default_knn_k(60), 4.5)));
}

TEST_CASE("cross-fitting with known nuisances reduces to residual regression") {
    Stream rng(4);
    PLMData data = gen_plm_data(201, 1.0, rng);
    const std::size_t L = 2;
    FoldAssignment folds(201);
    for (std::size_t i = 0; i < 201; ++i) folds[i] = i < 100 ? 0 : 1;
    NuisanceLearner learner{[](std::span<const double> x, std::span<const double> y) -> Predictor {
        // Distinguish targets by checking which regression fits the data.
        double err_d = 0.0, err_y = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            err_d += std::fabs(y[i] - m0(x[i]));
            err_y += std::fabs(y[i] - m0(x[i]) - g0(x[i]));
        }
        if (err_d < err_y) return [](double v) { return m0(v); };
        return [](double v) { return m0(v) + g0(v); };
    }};
    const auto fit = cross_fit(data, folds, L, learner);
    for (std::size_t l = 0; l < L; ++l) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < 201; ++i) {
            if (folds[i] != l) continue;
            const double rd = data.D[i] - m0(data.X[i]);
            const double ry = data.Y[i] - m0(data.X[i]) - g0(data.X[i]);
            num += ry * rd;
            den += rd * rd;
        }
        REQUIRE(fit.theta[l] == Approx(num / den).epsilon(1e-12));
    }
    // Plug-in sigma from the score formula.
    const double theta = dml_point(fit.theta);
    double s2 = 0, sa = 0;
    for (std::size_t i = 0; i < 201; ++i) {
        const double rd = data.D[i] - m0(data.X[i]);
        const double ry = data.Y[i] - m0(data.X[i]) - g0(data.X[i]);
        s2 += std::pow((ry - theta * rd) * rd, 2) / 201;
        sa += rd * rd / 201;
    }
    REQUIRE(sigma_plugin(fit, theta) == Approx(std::sqrt(s2) / sa).epsilon(1e-12));
}

TEST_CASE("no treatment variation is an error") {
    PLMData data;
    for (int i = 0; i < 20; ++i) {
        data.X.push_back(i);
        data.D.push_back(1.0);
        data.Y.push_back(i);
    }
    FoldAssignment f(20);
    for (int i = 0; i < 20; ++i) f[i] = i % 2;
    REQUIRE_THROWS_AS(cross_fit(data, f, 2, knn_regressor(3)), std::domain_error);
}

TEST_CASE("DGP regression functions") {
    Stream rng(5);
    const auto d = gen_plm_data(200000, 0.5, rng);
    double rd = 0, ry = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        rd += d.D[i] - m0(d.X[i]);
        ry += d.Y[i] - 0.5 * d.D[i] - g0(d.X[i]);
    }
    REQUIRE(rd / d.size() == Approx(0.0).margin(0.03));
    REQUIRE(ry / d.size() == Approx(0.0).margin(0.03));
    REQUIRE(m0(0.0) == Approx(1.5));
    REQUIRE(g0(0.0) == 0.0);
}

TEST_CASE("sigma_ls recovers the scale of Gaussian estimates") {
    Stream rng(6);
    const double s = 0.7;
    StatMatrix theta(2000, 2);
    for (auto& v : theta.values()) v = 3.0 + s * std_normal_quantile(rng.uniform());
    const std::size_t m = 50;
    const double est = sigma_ls(theta, 0.1, m);
    REQUIRE(est == Approx(std::sqrt(m / 2.0) * s).epsilon(0.05));
    REQUIRE_THROWS(sigma_ls(theta, 0.0, m));
    StatMatrix tiny(3, 2);
    tiny(0, 0) = 1;
    REQUIRE_THROWS(sigma_ls(tiny, 0.1, m));
}

TEST_CASE("rank CI endpoints") {
    std::vector<double> g(100);
    for (int i = 0; i < 100; ++i) g[i] = (i - 49.5) / 25.0;
    const EmpiricalCDF G(g);
    const auto [lo, hi] = rank_ci(2.0, 1.5, G, 0.1, 400, 2);
    const double scale = std::sqrt(2.0 / 400.0) * 1.5;
    REQUIRE(lo == Approx(2.0 - scale * G.upper_quantile(0.05)));
    REQUIRE(hi == Approx(2.0 - scale * G.upper_quantile(0.95)));
    REQUIRE(lo < 2.0);
    REQUIRE(hi > 2.0);
    REQUIRE_THROWS(rank_ci(2.0, 0.0, G, 0.1, 400, 2));
}

TEST_CASE("pooled fold correlation") {
    Stream rng(7);
    StatMatrix theta(20000, 3);
    for (std::size_t b = 0; b < theta.rows(); ++b) {
        const double shared = std_normal_quantile(rng.uniform());
        for (std::size_t l = 0; l < 3; ++l)
            theta(b, l) = std::sqrt(0.4) * shared + std::sqrt(0.6) * std_normal_quantile(rng.uniform());
    }
    REQUIRE(fold_correlation_diag(theta) == Approx(0.4).margin(0.02));
    REQUIRE_THROWS(fold_correlation_diag(StatMatrix(5, 1)));
}

TEST_CASE("full DML pipeline is reproducible and thread invariant") {
    Stream rng(8);
    const auto data = gen_plm_data(400, 1.0, rng);
    DMLOptions opt;
    opt.J = 10;
    opt.seed = 5;
    const auto r1 = dml_rank_ci(data, knn_regressor(), opt);
    opt.threads = 3;
    const auto r3 = dml_rank_ci(data, knn_regressor(), opt);
    REQUIRE(r1.ci_lower == r3.ci_lower);
    REQUIRE(r1.ci_upper == r3.ci_upper);
    REQUIRE(r1.theta_dml == r3.theta_dml);
    REQUIRE(r1.m == 66);
    REQUIRE(r1.B == 60);
    REQUIRE(r1.ci_lower < r1.ci_upper);
    REQUIRE(r1.plugin_lower < r1.theta_dml);
    REQUIRE(r1.sigma_ls > 0);
    REQUIRE(std::fabs(r1.theta_dml - 1.0) < 1.0);
}

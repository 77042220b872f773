#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>

#include "rtsub/engine.hpp"
#include "rtsub/parallel.hpp"
#include "support/oracles.hpp"

using namespace rtsub;
using Catch::Approx;

namespace {

// Sum over a random half of the rows, scaled to a N(0,1) null marginal when
// the data are i.i.d. N(mu, 1).
RandomizedStatistic half_sum_statistic(std::shared_ptr<const std::vector<double>> x) {
    return {[x](std::span<const std::size_t> rows, Stream& rng) {
                std::vector<std::size_t> r(rows.begin(), rows.end());
                std::shuffle(r.begin(), r.end(), rng);
                const std::size_t h = r.size() / 2;
                double s = 0.0;
                for (std::size_t i = 0; i < h; ++i) s += (*x)[r[i]];
                return s / std::sqrt(static_cast<double>(h));
            },
            NullMarginal::StdNormal};
}

std::shared_ptr<const std::vector<double>> normal_data(std::size_t n, double mu, std::uint64_t seed) {
    Stream rng(seed);
    auto x = std::make_shared<std::vector<double>>(n);
    for (auto& v : *x) v = mu + std_normal_quantile(rng.uniform());
    return x;
}

SubsampleCalibration calibration_from(const StatMatrix& Ht) {
    SubsampleCalibration cal;
    cal.n = 100;
    cal.m = 10;
    cal.raw = Ht;
    cal.transformed = Ht;
    return cal;
}

}  // namespace

TEST_CASE("default subsample size") {
    REQUIRE(default_subsample_size(300) == 52);
    REQUIRE(default_subsample_size(500) == 80);
    REQUIRE(default_subsample_size(1000) == 144);
    REQUIRE_THROWS(default_subsample_size(5));
}

TEST_CASE("tuples are disjoint within each block") {
    Stream rng(1);
    const auto T = generate_tuples(103, 10, 7, rng);
    REQUIRE(T.per_block() == 10);
    REQUIRE(T.size() == 70);
    for (std::size_t j = 0; j < 7; ++j) {
        std::set<std::size_t> seen;
        for (std::size_t t = 0; t < T.per_block(); ++t) {
            for (std::size_t i : T.tuple(j * T.per_block() + t)) {
                REQUIRE(i < 103);
                REQUIRE(seen.insert(i).second);
            }
        }
        REQUIRE(seen.size() == 100);
    }
    REQUIRE_THROWS(generate_tuples(10, 10, 1, rng));
    REQUIRE_THROWS(generate_tuples(10, 3, 0, rng));
}

TEST_CASE("aggregators") {
    const std::vector<double> t{1.0, -2.0, 4.0};
    REQUIRE(mean_aggregator().apply(t) == Approx(1.0));
    REQUIRE(max_aggregator().apply(t) == 4.0);
    REQUIRE(min_aggregator().apply(t) == -2.0);
    REQUIRE(aggregator_by_name("avg").name == "mean");
    REQUIRE_THROWS(aggregator_by_name("median"));
}

TEST_CASE("aggregators are symmetric and 1-Lipschitz in the sup norm") {
    Stream rng(5);
    for (const auto& agg : {mean_aggregator(), max_aggregator(), min_aggregator()}) {
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> a(8), b(8);
            double sup = 0.0;
            for (std::size_t i = 0; i < 8; ++i) {
                a[i] = rng.uniform() * 4 - 2;
                b[i] = a[i] + (rng.uniform() - 0.5);
                sup = std::max(sup, std::fabs(a[i] - b[i]));
            }
            REQUIRE(std::fabs(agg.apply(a) - agg.apply(b)) <= sup + 1e-12);
            std::vector<double> c = a;
            std::shuffle(c.begin(), c.end(), rng);
            REQUIRE(agg.apply(c) == Approx(agg.apply(a)).margin(1e-12));
        }
    }
}

TEST_CASE("H matrix entries use per-entry streams independent of threads") {
    auto x = normal_data(120, 0.0, 2);
    const auto stat = half_sum_statistic(x);
    Stream rng(8);
    const auto T = generate_tuples(120, 20, 5, rng);
    const auto H1 = build_h_matrix(stat, T, 6, 42, 1);
    const auto H4 = build_h_matrix(stat, T, 6, 42, 4);
    REQUIRE(std::equal(H1.values().begin(), H1.values().end(), H4.values().begin()));
    for (std::size_t b = 0; b < T.size(); ++b) {
        for (std::size_t l = 0; l < 6; ++l) {
            Stream s = make_stream(42, {stream_tag::entry, b, l});
            REQUIRE(H1(b, l) == stat.evaluate(T.tuple(b), s));
        }
    }
}

TEST_CASE("statistic failures carry the entry coordinates") {
    RandomizedStatistic bad{[](std::span<const std::size_t> rows, Stream&) -> double {
                                if (rows[0] % 7 == 3) throw std::domain_error("boom");
                                return 0.0;
                            },
                            NullMarginal::StdNormal};
    Stream rng(1);
    const auto T = generate_tuples(50, 5, 2, rng);
    try {
        build_h_matrix(bad, T, 3, 0, 3);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        REQUIRE(what.find("subsample entry (") != std::string::npos);
        REQUIRE(what.find("boom") != std::string::npos);
    }
}

TEST_CASE("parallel_for reports the lowest failing index") {
    for (std::size_t threads : {1, 2, 5}) {
        std::vector<int> done(40, 0);
        try {
            parallel_for(40, threads, [&](std::size_t i) {
                done[i] = 1;
                if (i == 11 || i == 29) throw std::runtime_error(std::to_string(i));
            });
            FAIL("expected an exception");
        } catch (const std::runtime_error& e) {
            REQUIRE(std::string(e.what()) == "11");
        }
        REQUIRE(done[11] == 1);
    }
}

TEST_CASE("aggregate decision against a hand-built calibration") {
    // Rows of H-tilde with means 0, 1, ..., 19.
    StatMatrix Ht(20, 2);
    for (std::size_t b = 0; b < 20; ++b) {
        Ht(b, 0) = static_cast<double>(b) - 1.0;
        Ht(b, 1) = static_cast<double>(b) + 1.0;
    }
    const auto cal = calibration_from(Ht);
    const auto agg = mean_aggregator();
    {
        const std::vector<double> full{19.5, 19.5};
        const auto r = aggregate_decision(cal, full, agg, 0.1);
        // upper 0.1 quantile = inf{x: G(x) >= 0.9} = 18th smallest = 17
        REQUIRE(r.critical_value == 17.0);
        REQUIRE(r.statistic == 19.5);
        REQUIRE(r.p_value == Approx(0.0));
        REQUIRE(r.reject);
    }
    {
        const std::vector<double> full{16.5, 17.5};
        const auto r = aggregate_decision(cal, full, agg, 0.1);
        REQUIRE(r.statistic == 17.0);
        REQUIRE_FALSE(r.reject);
        REQUIRE(r.p_value == Approx(0.1));
    }
    {
        const std::vector<double> full{-3.0, -3.0};
        const auto r = aggregate_decision(cal, full, agg, 0.1);
        REQUIRE(r.p_value == 1.0);
        REQUIRE_FALSE(r.reject);
    }
}

TEST_CASE("degenerate calibration never rejects") {
    StatMatrix Ht(10, 3, 0.25);
    const auto cal = calibration_from(Ht);
    const std::vector<double> full{5.0, 5.0, 5.0};
    const auto r = aggregate_decision(cal, full, mean_aggregator(), 0.05);
    REQUIRE(r.degenerate);
    REQUIRE_FALSE(r.reject);
    REQUIRE(r.p_value == 1.0);
    const std::vector<Aggregator> menu{mean_aggregator(), max_aggregator()};
    const auto a = adaptive_decision(cal, full, menu, 0.05);
    REQUIRE(a.degenerate);
    REQUIRE_FALSE(a.reject);
}

TEST_CASE("adaptive test with one aggregator reproduces the aggregate p-value") {
    Stream rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        StatMatrix Ht(40, 5);
        for (auto& v : Ht.values()) v = std::floor(rng.uniform() * 6);  // ties on purpose
        const auto cal = calibration_from(Ht);
        std::vector<double> full(5);
        for (auto& v : full) v = std::floor(rng.uniform() * 7) - 0.5;
        for (double alpha : {0.05, 0.1, 0.2}) {
            const auto agg = aggregate_decision(cal, full, mean_aggregator(), alpha);
            const std::vector<Aggregator> menu{mean_aggregator()};
            const auto ada = adaptive_decision(cal, full, menu, alpha);
            REQUIRE(ada.p_value == Approx(agg.p_value).margin(1e-15));
            // Decisions can only differ when S_n exceeds the critical value but no
            // calibration draw lies in between, so G(S_n) equals G(crit).
            const auto rows = aggregate_rows(Ht, mean_aggregator());
            const auto count_le = [&](double x) {
                return std::count_if(rows.begin(), rows.end(), [&](double s) { return s <= x; });
            };
            const bool boundary =
                agg.statistic > agg.critical_value && count_le(agg.statistic) == count_le(agg.critical_value);
            if (boundary) {
                REQUIRE(agg.reject);
                REQUIRE_FALSE(ada.reject);
            } else {
                REQUIRE(ada.reject == agg.reject);
            }
        }
    }
}

TEST_CASE("rank-transformed calibration is invariant to monotone maps of the statistic") {
    auto x = normal_data(150, 0.3, 5);
    const auto base = half_sum_statistic(x);
    RandomizedStatistic warped{[base](std::span<const std::size_t> rows, Stream& rng) {
                                   return std::atan(base.evaluate(rows, rng)) * 3 + 1;
                               },
                               NullMarginal::StdNormal};
    EngineOptions opt;
    opt.L = 5;
    opt.J = 4;
    opt.seed = 17;
    const auto a = calibrate(base, 150, opt);
    const auto b = calibrate(warped, 150, opt);
    REQUIRE(std::equal(a.transformed.values().begin(), a.transformed.values().end(),
                       b.transformed.values().begin()));
}

TEST_CASE("reports are reproducible and thread invariant") {
    auto x = normal_data(200, 0.5, 9);
    const auto stat = half_sum_statistic(x);
    EngineOptions opt;
    opt.L = 8;
    opt.J = 6;
    opt.seed = 3;
    const auto r1 = aggregate_test(stat, 200, mean_aggregator(), opt);
    opt.threads = 3;
    const auto r3 = aggregate_test(stat, 200, mean_aggregator(), opt);
    REQUIRE(r1.p_value == r3.p_value);
    REQUIRE(r1.statistic == r3.statistic);
    REQUIRE(r1.full_statistics == r3.full_statistics);
    REQUIRE(r1.B == 6 * (200 / 37));
    REQUIRE(r1.m == 37);
}

TEST_CASE("aggregate and adaptive tests hold their level on null data") {
    constexpr int reps = 300;
    int rej_agg = 0, rej_ada = 0, rej_single = 0;
    for (int rep = 0; rep < reps; ++rep) {
        auto x = normal_data(200, 0.0, 1000 + rep);
        const auto stat = half_sum_statistic(x);
        EngineOptions opt;
        opt.L = 10;
        opt.J = 10;
        opt.seed = rep;
        const auto cal = calibrate(stat, 200, opt);
        const auto full = full_statistics(stat, 200, opt.L, opt.seed);
        rej_agg += aggregate_decision(cal, full, mean_aggregator(), 0.05).reject;
        const std::vector<Aggregator> menu{mean_aggregator(), max_aggregator()};
        rej_ada += adaptive_decision(cal, full, menu, 0.05).reject;
        rej_single += full[0] > std_normal_quantile(0.95);
    }
    const double se = oracle::binomial_se(0.05, reps);
    CHECK(rej_agg / double(reps) <= 0.05 + 3 * se);
    CHECK(rej_ada / double(reps) <= 0.05 + 3 * se);
    CHECK(rej_single / double(reps) <= 0.05 + 3 * se);
}

TEST_CASE("aggregation gains power under the alternative") {
    int rej = 0;
    for (int rep = 0; rep < 40; ++rep) {
        auto x = normal_data(200, 0.3, 5000 + rep);
        EngineOptions opt;
        opt.L = 10;
        opt.J = 10;
        opt.seed = rep;
        rej += aggregate_test(half_sum_statistic(x), 200, mean_aggregator(), opt).reject;
    }
    REQUIRE(rej >= 30);
}

TEST_CASE("invalid engine inputs") {
    auto x = normal_data(50, 0.0, 1);
    const auto stat = half_sum_statistic(x);
    EngineOptions opt;
    opt.alpha = 1.5;
    REQUIRE_THROWS_AS(aggregate_test(stat, 50, mean_aggregator(), opt), std::invalid_argument);
    opt.alpha = 0.05;
    REQUIRE_THROWS_AS(adaptive_test(stat, 50, {}, opt), std::invalid_argument);
}

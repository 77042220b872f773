#include "rtsub/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rtsub/parallel.hpp"

namespace rtsub {

std::size_t default_subsample_size(std::size_t n) {
    if (n < 8) {
        throw std::invalid_argument("sample too small for subsampling");
    }
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) / std::log(static_cast<double>(n))));
}

IndexTupleSet::IndexTupleSet(std::size_t n, std::size_t m, std::size_t blocks,
                             std::vector<std::size_t> indices)
    : n_(n), m_(m), blocks_(blocks), indices_(std::move(indices)) {
    if (indices_.size() != blocks_ * (n_ / m_) * m_) {
        throw std::invalid_argument("IndexTupleSet: index count does not match layout");
    }
}

IndexTupleSet generate_tuples(std::size_t n, std::size_t m, std::size_t blocks, Stream& rng) {
    if (m <= 1 || m >= n) {
        throw std::invalid_argument("generate_tuples: need 1 < m < n");
    }
    if (blocks == 0) {
        throw std::invalid_argument("generate_tuples: need J >= 1");
    }
    const std::size_t per_block = n / m;
    std::vector<std::size_t> indices;
    indices.reserve(blocks * per_block * m);
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < blocks; ++j) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        indices.insert(indices.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(per_block * m));
    }
    return IndexTupleSet(n, m, blocks, std::move(indices));
}

Aggregator mean_aggregator() {
    return {"mean", [](std::span<const double> t) {
                return std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
            }};
}

Aggregator max_aggregator() {
    return {"max", [](std::span<const double> t) { return *std::max_element(t.begin(), t.end()); }};
}

Aggregator min_aggregator() {
    return {"min", [](std::span<const double> t) { return *std::min_element(t.begin(), t.end()); }};
}

Aggregator aggregator_by_name(const std::string& name) {
    if (name == "mean" || name == "avg") return mean_aggregator();
    if (name == "max") return max_aggregator();
    if (name == "min") return min_aggregator();
    throw std::invalid_argument("unknown aggregator: " + name);
}

StatMatrix build_h_matrix(const RandomizedStatistic& statistic, const IndexTupleSet& tuples,
                          std::size_t L, std::uint64_t seed, std::size_t threads) {
    if (L == 0) {
        throw std::invalid_argument("build_h_matrix: L must be positive");
    }
    StatMatrix H(tuples.size(), L);
    parallel_for(tuples.size(), threads, [&](std::size_t b) {
        const auto rows = tuples.tuple(b);
        for (std::size_t l = 0; l < L; ++l) {
            Stream rng = make_stream(seed, {stream_tag::entry, b, l});
            try {
                H(b, l) = statistic.evaluate(rows, rng);
            } catch (const std::exception& e) {
                throw std::runtime_error("statistic failed on subsample entry (" + std::to_string(b) +
                                         ", " + std::to_string(l) + "): " + e.what());
            }
        }
    });
    return H;
}

std::vector<double> full_statistics(const RandomizedStatistic& statistic, std::size_t n,
                                    std::size_t L, std::uint64_t seed) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<double> out(L);
    for (std::size_t l = 0; l < L; ++l) {
        Stream rng = make_stream(seed, {stream_tag::full, l});
        out[l] = statistic.evaluate(all, rng);
    }
    return out;
}

SubsampleCalibration calibrate(const RandomizedStatistic& statistic, std::size_t n,
                               const EngineOptions& options) {
    const std::size_t m = options.m.value_or(default_subsample_size(n));
    Stream tuple_rng = make_stream(options.seed, {stream_tag::tuples});
    const IndexTupleSet tuples = generate_tuples(n, m, options.J, tuple_rng);

    SubsampleCalibration cal;
    cal.n = n;
    cal.m = m;
    cal.raw = build_h_matrix(statistic, tuples, options.L, options.seed, options.threads);
    cal.transformed = options.calibration == Calibration::RankTransformed
                          ? rank_transform(cal.raw, statistic.null_marginal)
                          : cal.raw;
    return cal;
}

std::vector<double> aggregate_rows(const StatMatrix& H, const Aggregator& aggregator) {
    std::vector<double> out(H.rows());
    for (std::size_t b = 0; b < H.rows(); ++b) {
        out[b] = aggregator.apply(H.row(b));
    }
    return out;
}

namespace {

bool all_equal(std::span<const double> v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

void fill_layout(TestReport& report, const SubsampleCalibration& cal, double alpha) {
    report.n = cal.n;
    report.m = cal.m;
    report.B = cal.transformed.rows();
    report.L = cal.transformed.cols();
    report.J = cal.m > 0 && cal.n >= cal.m ? report.B / (cal.n / cal.m) : 0;
    report.alpha = alpha;
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("alpha must lie in (0,1)");
    }
}

}  // namespace

TestReport aggregate_decision(const SubsampleCalibration& cal, std::span<const double> full,
                              const Aggregator& aggregator, double alpha) {
    check_alpha(alpha);
    TestReport report;
    fill_layout(report, cal, alpha);
    report.full_statistics.assign(full.begin(), full.end());

    const std::vector<double> s_tilde = aggregate_rows(cal.transformed, aggregator);
    const EmpiricalCDF G(s_tilde);
    report.statistic = aggregator.apply(full);
    report.critical_value = G.upper_quantile(alpha);
    if (all_equal(s_tilde)) {
        report.degenerate = true;
        report.p_value = 1.0;
        report.reject = false;
    } else {
        report.p_value = 1.0 - G(report.statistic);
        report.reject = report.statistic > report.critical_value;
    }
    report.per_aggregator.push_back({aggregator.name, report.statistic, report.p_value});
    return report;
}

TestReport adaptive_decision(const SubsampleCalibration& cal, std::span<const double> full,
                             std::span<const Aggregator> aggregators, double alpha) {
    check_alpha(alpha);
    if (aggregators.empty()) {
        throw std::invalid_argument("adaptive_test: need at least one aggregator");
    }
    TestReport report;
    fill_layout(report, cal, alpha);
    report.full_statistics.assign(full.begin(), full.end());

    const std::size_t B = cal.transformed.rows();
    std::vector<double> r_tilde(B, -1.0);
    double r_n = -1.0;
    for (const Aggregator& agg : aggregators) {
        const EmpiricalCDF G(aggregate_rows(cal.transformed, agg));
        for (std::size_t b = 0; b < B; ++b) {
            r_tilde[b] = std::max(r_tilde[b], G(agg.apply(cal.transformed.row(b))));
        }
        const double s_n = agg.apply(full);
        const double g = G(s_n);
        r_n = std::max(r_n, g);
        report.per_aggregator.push_back({agg.name, s_n, 1.0 - g});
    }

    const EmpiricalCDF Q(r_tilde);
    report.statistic = r_n;
    report.critical_value = Q.upper_quantile(alpha);
    if (all_equal(r_tilde)) {
        report.degenerate = true;
        report.p_value = 1.0;
        report.reject = false;
    } else {
        report.p_value = 1.0 - Q(r_n);
        report.reject = r_n > report.critical_value;
    }
    return report;
}

TestReport aggregate_test(const RandomizedStatistic& statistic, std::size_t n,
                          const Aggregator& aggregator, const EngineOptions& options) {
    check_alpha(options.alpha);
    const SubsampleCalibration cal = calibrate(statistic, n, options);
    const std::vector<double> full = full_statistics(statistic, n, options.L, options.seed);
    TestReport report = aggregate_decision(cal, full, aggregator, options.alpha);
    report.J = options.J;
    report.seed = options.seed;
    return report;
}

TestReport adaptive_test(const RandomizedStatistic& statistic, std::size_t n,
                         std::span<const Aggregator> aggregators, const EngineOptions& options) {
    check_alpha(options.alpha);
    if (aggregators.empty()) {
        throw std::invalid_argument("adaptive_test: need at least one aggregator");
    }
    const SubsampleCalibration cal = calibrate(statistic, n, options);
    const std::vector<double> full = full_statistics(statistic, n, options.L, options.seed);
    TestReport report = adaptive_decision(cal, full, aggregators, options.alpha);
    report.J = options.J;
    report.seed = options.seed;
    return report;
}

}  // namespace rtsub

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rtsub/dist.hpp"
#include "rtsub/random.hpp"

namespace rtsub {

// m = floor(n / ln n); requires n >= 8.
std::size_t default_subsample_size(std::size_t n);

// J blocks, each a fresh permutation of [0, n) sliced into floor(n/m)
// consecutive disjoint tuples of length m. Tuples are stored block by block.
class IndexTupleSet {
public:
    IndexTupleSet(std::size_t n, std::size_t m, std::size_t blocks, std::vector<std::size_t> indices);

    std::size_t n() const { return n_; }
    std::size_t m() const { return m_; }
    std::size_t blocks() const { return blocks_; }
    std::size_t per_block() const { return n_ / m_; }
    std::size_t size() const { return blocks_ * per_block(); }

    std::span<const std::size_t> tuple(std::size_t b) const { return {indices_.data() + b * m_, m_}; }

private:
    std::size_t n_;
    std::size_t m_;
    std::size_t blocks_;
    std::vector<std::size_t> indices_;
};

IndexTupleSet generate_tuples(std::size_t n, std::size_t m, std::size_t blocks, Stream& rng);

// A randomised test statistic T(data; omega) bound to its dataset. `evaluate`
// receives the row indices of the (sub)sample it is computed on and the
// randomness stream for this evaluation. Large values are evidence against
// the null; p-value statistics should be wrapped as 1 - p.
struct RandomizedStatistic {
    std::function<double(std::span<const std::size_t> rows, Stream& rng)> evaluate;
    NullMarginal null_marginal = NullMarginal::StdNormal;
};

// Symmetric aggregation function that is 1-Lipschitz in the sup-norm.
struct Aggregator {
    std::string name;
    std::function<double(std::span<const double>)> apply;
};

Aggregator mean_aggregator();
Aggregator max_aggregator();
Aggregator min_aggregator();

// Looks up "mean"/"avg", "max" or "min"; throws std::invalid_argument otherwise.
Aggregator aggregator_by_name(const std::string& name);

// Critical values from the rank-transformed subsampling distribution (the
// method) or from the raw subsampling distribution (ablation only).
enum class Calibration { RankTransformed, Raw };

struct EngineOptions {
    std::size_t L = 50;
    double alpha = 0.05;
    std::size_t J = 100;
    std::optional<std::size_t> m;  // defaults to default_subsample_size(n)
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    Calibration calibration = Calibration::RankTransformed;
};

struct AggregatorResult {
    std::string name;
    double statistic;  // S_n^w
    double p_value;    // 1 - G^w(S_n^w)
};

struct TestReport {
    double statistic = 0.0;       // S_n, or R_n for the adaptive test
    double critical_value = 0.0;  // upper alpha quantile of the calibrating ECDF
    double p_value = 1.0;
    bool reject = false;
    bool degenerate = false;  // calibrating distribution collapsed to a point
    std::size_t n = 0, m = 0, B = 0, L = 0, J = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> full_statistics;  // T_n^(1..L)
    std::vector<AggregatorResult> per_aggregator;
};

// Entry (b, l) = statistic on the rows of tuple b with the stream derived
// from (seed, b, l). Rows are evaluated on `threads` workers and assembled by
// index. Failures are rethrown with the (b, l) coordinates attached.
StatMatrix build_h_matrix(const RandomizedStatistic& statistic, const IndexTupleSet& tuples,
                          std::size_t L, std::uint64_t seed, std::size_t threads = 1);

// T_n^(1..L) on the full sample with streams disjoint from the subsample ones.
std::vector<double> full_statistics(const RandomizedStatistic& statistic, std::size_t n,
                                    std::size_t L, std::uint64_t seed);

// Calibration pieces shared by the single and adaptive tests.
struct SubsampleCalibration {
    std::size_t n = 0, m = 0;
    StatMatrix raw;          // H-hat
    StatMatrix transformed;  // H-tilde (equals raw under Calibration::Raw)
};

SubsampleCalibration calibrate(const RandomizedStatistic& statistic, std::size_t n,
                               const EngineOptions& options);

// Aggregated multiple-split test with a single aggregation function.
TestReport aggregate_test(const RandomizedStatistic& statistic, std::size_t n,
                          const Aggregator& aggregator, const EngineOptions& options);

// Multiple-split test adapting to the best of several aggregation functions.
TestReport adaptive_test(const RandomizedStatistic& statistic, std::size_t n,
                         std::span<const Aggregator> aggregators, const EngineOptions& options);

// Decision and p-value given precomputed calibration and full-data statistics.
TestReport aggregate_decision(const SubsampleCalibration& cal, std::span<const double> full,
                              const Aggregator& aggregator, double alpha);
TestReport adaptive_decision(const SubsampleCalibration& cal, std::span<const double> full,
                             std::span<const Aggregator> aggregators, double alpha);

// Row aggregates S(H_{b,1..L}).
std::vector<double> aggregate_rows(const StatMatrix& H, const Aggregator& aggregator);

}  // namespace rtsub

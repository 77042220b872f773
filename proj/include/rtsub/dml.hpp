#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rtsub/dist.hpp"
#include "rtsub/engine.hpp"
#include "rtsub/random.hpp"

namespace rtsub::dml {

struct PLMData {
    std::vector<double> Y;
    std::vector<double> D;
    std::vector<double> X;

    std::size_t size() const { return Y.size(); }
    void validate() const;
    PLMData subset(std::span<const std::size_t> rows) const;
};

// Fold label in [0, L) for each row.
using FoldAssignment = std::vector<std::size_t>;

// Random partition into L folds whose sizes differ by at most one.
FoldAssignment make_folds(std::size_t n, std::size_t L, Stream& rng);

using Predictor = std::function<double(double)>;

struct NuisanceLearner {
    std::function<Predictor(std::span<const double> x, std::span<const double> y)> fit;
};

// Mean target of the k nearest training points (absolute distance, ties to the
// lower training index). Without k, uses ceil(n_train^{2/3} / 2).
NuisanceLearner knn_regressor(std::optional<std::size_t> k = std::nullopt);
std::size_t default_knn_k(std::size_t n_train);

struct CrossFit {
    std::vector<double> theta;  // per fold
    std::vector<double> y_residual;  // Y - l(X) with out-of-fold l
    std::vector<double> d_residual;  // D - m(X) with out-of-fold m
};

CrossFit cross_fit(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                   const NuisanceLearner& learner);

std::vector<double> cross_fit_theta(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                                    const NuisanceLearner& learner);

double dml_point(std::span<const double> theta_per_fold);

// sqrt(mean psi^2) / |mean psi^a| with the Robinson score evaluated at theta.
double sigma_plugin(const CrossFit& fit, double theta);
double sigma_plugin(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                    const NuisanceLearner& learner, double theta);

// Per-subsample fold estimates; subsample b uses folds drawn from (seed, b).
StatMatrix subsample_theta_matrix(const PLMData& data, const NuisanceLearner& learner, std::size_t L,
                                  const IndexTupleSet& tuples, std::uint64_t seed, std::size_t threads = 1);

// sqrt(m / L) / slope of the normal scores of the estimates regressed on the
// estimates, using entries whose pooled ECDF value lies in (eps/2, 1 - eps/2).
double sigma_ls(const StatMatrix& theta_matrix, double epsilon, std::size_t m);

// ECDF of row means of the normal-score matrix.
EmpiricalCDF rank_aggregate_cdf(const StatMatrix& theta_matrix);

std::pair<double, double> rank_ci(double theta_dml, double sigma_ls, const EmpiricalCDF& G, double alpha,
                                  std::size_t n, std::size_t L);

// Pooled between-fold correlation of the entries of theta_matrix.
double fold_correlation_diag(const StatMatrix& theta_matrix);

PLMData gen_plm_data(std::size_t n, double theta0, Stream& rng);
double m0(double x);
double g0(double x);

struct DMLOptions {
    std::size_t L = 2;
    std::size_t J = 20;
    double alpha = 0.05;
    double epsilon = 0.1;
    std::optional<std::size_t> m;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

struct DMLResult {
    std::vector<double> theta_per_fold;
    double theta_dml = 0.0;
    double sigma_plugin = 0.0;
    double sigma_ls = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double plugin_lower = 0.0;
    double plugin_upper = 0.0;
    double fold_correlation_diag = 0.0;
    std::size_t m = 0;
    std::size_t B = 0;
};

// Cross-fitted estimate with both the plug-in and the rank-transformed
// subsampling intervals.
DMLResult dml_rank_ci(const PLMData& data, const NuisanceLearner& learner, const DMLOptions& options);

}  // namespace rtsub::dml

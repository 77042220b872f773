#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtsub/engine.hpp"
#include "rtsub/random.hpp"

namespace rtsub::plugins {

struct TrialDataset {
    std::vector<int> A1;
    std::vector<double> L;
    std::vector<int> A2;
    std::vector<double> Y;

    std::size_t size() const { return Y.size(); }
    // Throws unless columns agree in length, binaries are 0/1 and reals finite.
    void validate() const;
    TrialDataset subset(std::span<const std::size_t> rows) const;
};

struct TrialVariant {
    enum class Kind { Location, ScaleT };
    Kind kind = Kind::Location;
    double nu = std::numeric_limits<double>::infinity();  // degrees of freedom for ScaleT

    static TrialVariant location() { return {}; }
    static TrialVariant scale_t(double nu) { return {Kind::ScaleT, nu}; }
};

TrialDataset gen_trial_data(std::size_t n, double tau, const TrialVariant& variant, Stream& rng);

// P(A2 = 1 | A1, L) under the generating model.
double true_propensity(int a1, double l);
std::vector<double> true_propensities(const TrialDataset& data);

struct LogisticFit {
    Eigen::VectorXd coef;
    int iterations = 0;
    bool converged = false;  // false at the iteration cap or under perfect separation
};

// Newton-Raphson with a 1e-8 ridge on the Hessian. Stops when the gradient
// norm drops below 1e-8 or after 50 iterations; throws on a rank-deficient
// design.
LogisticFit fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels);

// Logistic fit of A2 on (1, A1, L); returns fitted P(A2 = 1 | A1, L).
std::vector<double> fitted_propensities(const TrialDataset& data);

struct RejectionPlan {
    std::vector<double> weights;  // q(A2_i) / p(A2_i | A1_i, L_i)
    double C = 1.0;
    double q1 = 0.5;  // target marginal P_Q(A2 = 1)
};

// Chooses q1 to minimise the bound C over the rows of the sample. Throws if a
// propensity lies outside (1e-6, 1 - 1e-6).
RejectionPlan verma_rejection_plan(const TrialDataset& data, std::span<const double> propensity);

// Row i is kept when U_i < weights[i] / C, where U_i is drawn from a stream
// keyed by (key, row_ids[i]) so each decision depends on that row alone.
std::vector<std::size_t> rejection_sample(std::span<const double> weights, double C,
                                          std::span<const std::size_t> row_ids, std::uint64_t key);
std::vector<std::size_t> rejection_sample(std::span<const double> weights, double C, Stream& rng);

// (1 + #{permuted >= observed}) / (1 + n_perm) for |cov(A, Y)|.
double permutation_pvalue_cov(std::span<const int> A, std::span<const double> Y, std::size_t n_perm,
                              Stream& rng);

// Biased Gaussian-kernel MMD^2 with kernel exp(-d^2 / (2 h^2)).
double mmd_sq(std::span<const double> Y0, std::span<const double> Y1, double bandwidth);
// Median pairwise absolute difference; 1 when that median is 0.
double median_heuristic(std::span<const double> pooled);

// Permutation test of the MMD between Y | A = 0 and Y | A = 1 with the
// bandwidth fixed from the observed pooled sample.
double permutation_pvalue_mmd(std::span<const int> A, std::span<const double> Y, std::size_t n_perm,
                              Stream& rng);

// sum Z / sqrt(sum Z^2) with Z_i = Y_i (A1_i - mean A1) / p(A2_i | A1_i, L_i).
double ipw_statistic(const TrialDataset& data, std::span<const double> propensity);

enum class VermaStatistic { Cov, Mmd };
enum class PropensitySource { True, Fitted };

VermaStatistic verma_statistic_from_string(const std::string& name);
PropensitySource propensity_source_from_string(const std::string& name);

// Rejection-samples the listed rows with a fixed plan whose weights are indexed
// by row of `data`, then tests A1 vs Y on the accepted rows. Fewer than two
// accepted rows or a single accepted group gives p = 1.
double post_sampling_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, const RejectionPlan& plan,
                            VermaStatistic kind, std::size_t n_perm, Stream& rng);

// As above with the plan estimated from the listed rows alone.
double verma_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, VermaStatistic kind,
                    PropensitySource source, std::size_t n_perm, Stream& rng);
double verma_pvalue(const TrialDataset& data, VermaStatistic kind, PropensitySource source,
                    std::size_t n_perm, Stream& rng);

// Engine binding: statistic 1 - p with a Uniform01 null marginal. The
// propensities and the plan are estimated once from the full data, so every
// subsample is thinned by the same acceptance rule as the full sample.
RandomizedStatistic verma_test(std::shared_ptr<const TrialDataset> data, VermaStatistic kind,
                               PropensitySource source, std::size_t n_perm);

// Two-sided IPW p-value 2 (1 - Phi(|chi|)) on the given rows.
double ipw_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, PropensitySource source);

}  // namespace rtsub::plugins

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rtsub/random.hpp"

namespace rtsub::merge {

// Deterministic merging rules valid under arbitrary dependence. Inputs must
// lie in [0,1]; results are capped at 1.
double arithmetic(std::span<const double> p);     // 2 * mean
double geometric(std::span<const double> p);      // e * geometric mean
double bonferroni(std::span<const double> p);     // L * min
double bonf_geom(std::span<const double> p);      // 2 * min(L * min, e * geomean)

// Rejects when mean(T) / 2 > z_alpha. Valid for exchangeable N(0,1)
// statistics when 0 < alpha <= 1 - Phi(1); throws std::invalid_argument
// outside that range.
bool z_half_average_test(std::span<const double> T, double alpha);

struct GaussLocationModel {
    double mu = 0.0;
    double rho = 0.0;  // pairwise correlation in [0,1)
    std::size_t L = 1;
    double alpha = 0.05;
};

// Power of the mean-of-L test calibrated with the exact null distribution.
double gauss_power(const GaussLocationModel& model);

// Probability that two independent runs of the mean-of-L test disagree.
// Throws std::runtime_error if the quadrature misses its tolerance.
double gauss_nonreplication(const GaussLocationModel& model);

// Power of the conservative rule mean(T) > 2 z_alpha.
double gauss_conservative_power(const GaussLocationModel& model);

// L exchangeable N(mu, 1) draws with pairwise correlation rho.
std::vector<double> gen_exchangeable_gaussians(double mu, double rho, std::size_t L, Stream& rng);

// Exchangeable pair with N(0,1) margins whose average exceeds z_alpha with
// probability 2 alpha.
std::pair<double, double> adversarial_pair(double alpha, Stream& rng);

// The pair obtained from a given first uniform u1.
std::pair<double, double> adversarial_pair_from_uniform(double alpha, double u1);

// Upper bound (1 - Phi(s - 1/s)) / (1 - 1/s^2) on P(Z > s) for any Z dominated
// by N(0,1) in convex order; s > 1.
double tail_bound_cx(double s);

}  // namespace rtsub::merge

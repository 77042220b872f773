#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

// Standard normal CDF from the series Phi(x) = 1/2 + phi(x) sum x^{2k+1}/(2k+1)!!
// evaluated in long double; accurate to ~1e-17 for |x| <= 8.
long double normal_cdf_series(long double x);

// Upper tail 1 - Phi(x) for x >= 0 via the Laplace continued fraction,
// long double; accurate for x >= 3.
long double normal_sf_continued_fraction(long double x);

// Dip of a sample of distinct values by linear programming: for every
// candidate mode at a sample point, minimise the sup distance between the
// empirical CDF and a piecewise-linear unimodal CDF with knots at the sample
// points (an atom allowed at the mode). Dense two-phase simplex in long double.
double dip_lp(std::span<const double> sample);

// max_{A x <= b, x >= 0} c.x; returns -inf when infeasible, +inf when unbounded.
long double simplex_max(const std::vector<std::vector<long double>>& A, const std::vector<long double>& b,
                        const std::vector<long double>& c, std::vector<long double>* solution = nullptr);

// One-sample Kolmogorov-Smirnov p-value (asymptotic Kolmogorov law with the
// Stephens small-sample correction).
double ks_pvalue(std::vector<double> sample, const std::function<double(double)>& cdf);

// Standard error of a proportion estimated from `n` Bernoulli(p) draws.
double binomial_se(double p, std::size_t n);

}  // namespace oracle

#pragma once

#include <cstddef>

#include <Eigen/Dense>

#include "rtsub/random.hpp"

namespace rtsub::sim {

// Sigma_ij = 2^{-|i-j|}
Eigen::MatrixXd ar_covariance(std::size_t p);

// Normalised principal eigenvector of Sigma by power iteration (tolerance
// 1e-12), sign fixed so the first entry is positive.
Eigen::VectorXd principal_eigenvector(const Eigen::MatrixXd& sigma);

// Normalised eigenvector for the second largest eigenvalue; requires p >= 2.
Eigen::VectorXd second_eigenvector(const Eigen::MatrixXd& sigma);

// n draws of N(tau n^{-1/2} v1, Sigma) with Sigma = ar_covariance(p).
Eigen::MatrixXd gen_mean_test_data(std::size_t n, std::size_t p, double tau, Stream& rng);

// Equal mixture of uniform distributions on the unit ball centred at 0 and at
// x0 = (2 tau / sqrt(2 + p)) e1.
Eigen::MatrixXd gen_ball_mixture(std::size_t n, std::size_t p, double tau, Stream& rng);

// Equal mixture of multivariate t_4(0, Sigma) and t_4(x0, Sigma) with
// x0 = tau sqrt(p) v2; requires p >= 2.
Eigen::MatrixXd gen_t_mixture(std::size_t n, std::size_t p, double tau, Stream& rng);

}  // namespace rtsub::sim

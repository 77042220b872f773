#pragma once

#include <cstddef>
#include <memory>
#include <span>

#include <Eigen/Dense>

#include "rtsub/engine.hpp"
#include "rtsub/random.hpp"

namespace rtsub::plugins {

struct SplitMeanConfig {
    double split_fraction = 0.5;  // q; the hunting part has floor(q n) rows
};

// sqrt(n2) mu1' mu2 / sqrt(mu1' Sigma2 mu1) for a given split. Throws
// std::domain_error("degenerate hunting direction") when the quadratic form
// vanishes and std::invalid_argument when part 2 has fewer than p + 2 rows.
double split_mean_value(const Eigen::MatrixXd& part1, const Eigen::MatrixXd& part2);

// Draws the split from `rng` among `rows` of X and evaluates the statistic.
double split_mean_statistic(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                            const SplitMeanConfig& config, Stream& rng);
double split_mean_statistic(const Eigen::MatrixXd& X, const SplitMeanConfig& config, Stream& rng);

// Engine binding with a standard normal null marginal.
RandomizedStatistic split_mean_test(std::shared_ptr<const Eigen::MatrixXd> X, SplitMeanConfig config = {});

// Copies the given rows of X into a new matrix.
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> rows);

}  // namespace rtsub::plugins

#include "rtsub/plugins/split_mean.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rtsub/dist.hpp"

namespace rtsub::plugins {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

double split_mean_value(const Eigen::MatrixXd& part1, const Eigen::MatrixXd& part2) {
    const auto p = part2.cols();
    if (part1.rows() < 1 || part2.rows() < p + 2) {
        throw std::invalid_argument("split_mean: second part needs at least p + 2 rows");
    }
    const Eigen::VectorXd mu1 = part1.colwise().mean().transpose();
    const Eigen::VectorXd mu2 = part2.colwise().mean().transpose();
    const Eigen::MatrixXd sigma2 = sample_covariance_matrix(part2);
    const double quad = mu1.dot(sigma2 * mu1);
    if (!(quad > 0.0) || mu1.isZero(0.0)) {
        throw std::domain_error("degenerate hunting direction");
    }
    return std::sqrt(static_cast<double>(part2.rows())) * mu1.dot(mu2) / std::sqrt(quad);
}

double split_mean_statistic(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                            const SplitMeanConfig& config, Stream& rng) {
    if (!(config.split_fraction > 0.0 && config.split_fraction < 1.0)) {
        throw std::invalid_argument("split_mean: split fraction must lie in (0,1)");
    }
    std::vector<std::size_t> order(rows.begin(), rows.end());
    std::shuffle(order.begin(), order.end(), rng);
    const auto n1 = static_cast<std::size_t>(std::floor(config.split_fraction * static_cast<double>(order.size())));
    const std::span<const std::size_t> all(order);
    return split_mean_value(gather_rows(X, all.first(n1)), gather_rows(X, all.subspan(n1)));
}

double split_mean_statistic(const Eigen::MatrixXd& X, const SplitMeanConfig& config, Stream& rng) {
    std::vector<std::size_t> rows(static_cast<std::size_t>(X.rows()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return split_mean_statistic(X, rows, config, rng);
}

RandomizedStatistic split_mean_test(std::shared_ptr<const Eigen::MatrixXd> X, SplitMeanConfig config) {
    return {[X = std::move(X), config](std::span<const std::size_t> rows, Stream& rng) {
                return split_mean_statistic(*X, rows, config, rng);
            },
            NullMarginal::StdNormal};
}

}  // namespace rtsub::plugins

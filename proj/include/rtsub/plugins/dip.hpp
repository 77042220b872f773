#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rtsub/engine.hpp"
#include "rtsub/random.hpp"

namespace rtsub::plugins {

// Hartigan's dip: sup distance from the empirical CDF to the closest unimodal
// CDF. Result lies in [1/(2n), 1/4]. Requires at least two values.
double dip_statistic(std::span<const double> sample);

// Unit vector joining the two centres found by Lloyd's algorithm from a
// k-means++ seeding. Throws when all rows coincide.
Eigen::VectorXd two_means_direction(const Eigen::MatrixXd& X, Stream& rng);

// Reference dips of unif(0,1) samples, generated once per sample size from a
// fixed seed and cached. Safe to share across threads.
class DipCalibrator {
public:
    explicit DipCalibrator(std::size_t reps = 199, std::uint64_t seed = 0x6469702d63616cULL);

    // Sorted reference dips for samples of size k.
    std::shared_ptr<const std::vector<double>> reference(std::size_t k);

    // (1 + #{reference >= dip}) / (1 + reps)
    double p_value(double dip, std::size_t k);

    std::size_t reps() const { return reps_; }

private:
    std::size_t reps_;
    std::uint64_t seed_;
    std::mutex mutex_;
    std::map<std::size_t, std::shared_ptr<const std::vector<double>>> cache_;
};

std::vector<double> uniform_reference_dips(std::size_t k, std::size_t reps, Stream& rng);
double reference_pvalue(std::span<const double> sorted_reference, double dip);

struct DipHuntConfig {
    double split_fraction = 0.5;
    std::size_t calibration_reps = 199;
};

// Direction from the first floor(q k) shuffled rows, dip of the remaining
// rows projected on it, p-value against unif(0,1) reference dips.
double dip_hunt_pvalue(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                       const DipHuntConfig& config, DipCalibrator& calibrator, Stream& rng);

// Same, with a fresh reference sample drawn from `rng`.
double dip_hunt_pvalue(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                       const DipHuntConfig& config, Stream& rng);

// Engine binding: statistic 1 - p with a Uniform01 null marginal.
RandomizedStatistic dip_hunt_test(std::shared_ptr<const Eigen::MatrixXd> X, DipHuntConfig config,
                                  std::shared_ptr<DipCalibrator> calibrator);

}  // namespace rtsub::plugins

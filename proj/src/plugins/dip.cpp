#include "rtsub/plugins/dip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "rtsub/plugins/split_mean.hpp"

namespace rtsub::plugins {

namespace {

// Ratio (a - b) / (c - b) with a vertical chord treated as fully traversed.
double chord_fraction(double a, double b, double c) {
    return c == b ? 1.0 : (a - b) / (c - b);
}

// Vertices of the greatest convex minorant: prev[j] is the vertex preceding j
// on the minorant of points 1..j. 1-based, point j is (x[j], j).
std::vector<std::size_t> minorant_links(const std::vector<double>& x, std::size_t n) {
    std::vector<std::size_t> prev(n + 1);
    prev[1] = 1;
    for (std::size_t j = 2; j <= n; ++j) {
        prev[j] = j - 1;
        while (true) {
            const std::size_t a = prev[j];
            const std::size_t b = prev[a];
            if (a == 1 || (x[j] - x[a]) * static_cast<double>(a - b) <
                              (x[a] - x[b]) * static_cast<double>(j - a)) {
                break;
            }
            prev[j] = b;
        }
    }
    return prev;
}

// Mirror image: next[k] is the vertex following k on the least concave
// majorant of points k..n.
std::vector<std::size_t> majorant_links(const std::vector<double>& x, std::size_t n) {
    std::vector<std::size_t> next(n + 1);
    next[n] = n;
    for (std::size_t k = n - 1; k >= 1; --k) {
        next[k] = k + 1;
        while (true) {
            const std::size_t a = next[k];
            const std::size_t b = next[a];
            // a < b and k < a here, so both index gaps are negative.
            if (a == n || (x[k] - x[a]) * -static_cast<double>(b - a) <
                              (x[a] - x[b]) * -static_cast<double>(a - k)) {
                break;
            }
            next[k] = b;
        }
    }
    return next;
}

// Largest excess of the empirical CDF over the chords of a convex minorant
// path (descending vertex list) starting at position `from`.
double minorant_gap(const std::vector<double>& x, const std::vector<std::size_t>& gcm, std::size_t from) {
    double best = 0.0;
    for (std::size_t j = from; j + 1 < gcm.size(); ++j) {
        const std::size_t lo = gcm[j + 1];
        const std::size_t hi = gcm[j];
        double seg = 1.0;
        if (hi - lo > 1 && x[hi] != x[lo]) {
            const double slope = static_cast<double>(hi - lo) / (x[hi] - x[lo]);
            for (std::size_t i = lo; i <= hi; ++i) {
                seg = std::max(seg, static_cast<double>(i - lo + 1) - (x[i] - x[lo]) * slope);
            }
        }
        best = std::max(best, seg);
    }
    return best;
}

// Largest shortfall of the empirical CDF below the chords of a concave
// majorant path (ascending vertex list) starting at position `from`.
double majorant_gap(const std::vector<double>& x, const std::vector<std::size_t>& lcm, std::size_t from) {
    double best = 0.0;
    for (std::size_t j = from; j + 1 < lcm.size(); ++j) {
        const std::size_t lo = lcm[j];
        const std::size_t hi = lcm[j + 1];
        double seg = 1.0;
        if (hi - lo > 1 && x[hi] != x[lo]) {
            const double slope = static_cast<double>(hi - lo) / (x[hi] - x[lo]);
            for (std::size_t i = lo; i <= hi; ++i) {
                seg = std::max(seg, (x[i] - x[lo]) * slope - static_cast<double>(i - lo) + 1.0);
            }
        }
        best = std::max(best, seg);
    }
    return best;
}

}  // namespace

double dip_statistic(std::span<const double> sample) {
    const std::size_t n = sample.size();
    if (n < 2) {
        throw std::invalid_argument("dip_statistic: need at least two values");
    }
    // 1-based copy; distances below are measured in units of 1/n of the CDF,
    // doubled at the end to account for the half-step of the best fit.
    std::vector<double> x(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(sample[i])) {
            throw std::invalid_argument("dip_statistic: non-finite value");
        }
        x[i + 1] = sample[i];
    }
    std::sort(x.begin() + 1, x.end());
    if (x[n] == x[1]) {
        throw std::invalid_argument("dip_statistic: sample is constant");
    }

    const std::vector<std::size_t> prev = minorant_links(x, n);
    const std::vector<std::size_t> next = majorant_links(x, n);

    double dip = 1.0;
    std::size_t low = 1;
    std::size_t high = n;
    // gcm holds a leading placeholder so positions match the vertex count.
    std::vector<std::size_t> gcm;
    std::vector<std::size_t> lcm;
    while (true) {
        gcm.assign(1, 0);
        gcm.push_back(high);
        while (gcm.back() > low) {
            gcm.push_back(prev[gcm.back()]);
        }
        lcm.assign(1, 0);
        lcm.push_back(low);
        while (lcm.back() < high) {
            lcm.push_back(next[lcm.back()]);
        }
        const std::size_t n_gcm = gcm.size() - 1;
        const std::size_t n_lcm = lcm.size() - 1;

        // Walk both hulls from the ends of the modal interval and record the
        // widest vertical separation and where it occurs.
        std::size_t ig = n_gcm;
        std::size_t ih = n_lcm;
        double d = 1.0;
        if (n_gcm != 2 || n_lcm != 2) {
            d = 0.0;
            std::size_t ix = n_gcm - 1;
            std::size_t iv = 2;
            do {
                const std::size_t g = gcm[ix];
                const std::size_t v = lcm[iv];
                double gap;
                if (g > v) {
                    const std::size_t g1 = gcm[ix + 1];
                    gap = static_cast<double>(v - g1 + 1) -
                          chord_fraction(x[v], x[g1], x[g]) * static_cast<double>(g - g1);
                    ++iv;
                    if (gap >= d) {
                        d = gap;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    const std::size_t v1 = lcm[iv - 1];
                    gap = (x[v] == x[v1] ? 0.0 : (x[g] - x[v1]) / (x[v] - x[v1])) *
                              static_cast<double>(v - v1) -
                          (static_cast<double>(g) - static_cast<double>(v1) - 1.0);
                    --ix;
                    if (gap >= d) {
                        d = gap;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                ix = std::max<std::size_t>(ix, 1);
                iv = std::min(iv, n_lcm);
            } while (gcm[ix] != lcm[iv]);
        }
        if (d < dip) {
            break;
        }

        const double inner = std::max(minorant_gap(x, gcm, ig), majorant_gap(x, lcm, ih));
        dip = std::max(dip, inner);

        if (low == gcm[ig] && high == lcm[ih]) {
            break;
        }
        low = gcm[ig];
        high = lcm[ih];
    }
    return dip / (2.0 * static_cast<double>(n));
}

Eigen::VectorXd two_means_direction(const Eigen::MatrixXd& X, Stream& rng) {
    const Eigen::Index n = X.rows();
    if (n < 2) {
        throw std::invalid_argument("two_means_direction: need at least two rows");
    }

    // k-means++ seeding.
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    Eigen::MatrixXd centers(2, X.cols());
    centers.row(0) = X.row(pick(rng));
    std::vector<double> weight(static_cast<std::size_t>(n));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        weight[static_cast<std::size_t>(i)] = (X.row(i) - centers.row(0)).squaredNorm();
        total += weight[static_cast<std::size_t>(i)];
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("two_means_direction: all rows identical");
    }
    std::discrete_distribution<Eigen::Index> by_distance(weight.begin(), weight.end());
    centers.row(1) = X.row(by_distance(rng));

    std::vector<int> label(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < 100; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d0 = (X.row(i) - centers.row(0)).squaredNorm();
            const double d1 = (X.row(i) - centers.row(1)).squaredNorm();
            label[static_cast<std::size_t>(i)] = d1 < d0 ? 1 : 0;
        }
        Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(2, X.cols());
        Eigen::Index counts[2] = {0, 0};
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = label[static_cast<std::size_t>(i)];
            updated.row(c) += X.row(i);
            ++counts[c];
        }
        for (int c = 0; c < 2; ++c) {
            if (counts[c] > 0) {
                updated.row(c) /= static_cast<double>(counts[c]);
            } else {
                updated.row(c) = centers.row(c);
            }
        }
        const double shift = (updated - centers).rowwise().norm().maxCoeff();
        centers = updated;
        if (shift < 1e-8) {
            break;
        }
    }

    Eigen::VectorXd direction = (centers.row(0) - centers.row(1)).transpose();
    const double norm = direction.norm();
    if (!(norm > 0.0)) {
        throw std::domain_error("two_means_direction: cluster centres coincide");
    }
    return direction / norm;
}

std::vector<double> uniform_reference_dips(std::size_t k, std::size_t reps, Stream& rng) {
    std::vector<double> dips(reps);
    std::vector<double> sample(k);
    for (double& d : dips) {
        for (double& u : sample) {
            u = rng.uniform();
        }
        d = dip_statistic(sample);
    }
    std::sort(dips.begin(), dips.end());
    return dips;
}

double reference_pvalue(std::span<const double> sorted_reference, double dip) {
    const auto below = std::lower_bound(sorted_reference.begin(), sorted_reference.end(), dip);
    const auto at_least = static_cast<double>(sorted_reference.end() - below);
    return (1.0 + at_least) / (1.0 + static_cast<double>(sorted_reference.size()));
}

DipCalibrator::DipCalibrator(std::size_t reps, std::uint64_t seed) : reps_(reps), seed_(seed) {
    if (reps_ < 1) {
        throw std::invalid_argument("DipCalibrator: need at least one reference draw");
    }
}

std::shared_ptr<const std::vector<double>> DipCalibrator::reference(std::size_t k) {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        if (auto it = cache_.find(k); it != cache_.end()) {
            return it->second;
        }
    }
    // Generated outside the lock; concurrent builders produce identical values.
    Stream rng = make_stream(seed_, {stream_tag::calibrate, k});
    auto dips = std::make_shared<const std::vector<double>>(uniform_reference_dips(k, reps_, rng));
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.emplace(k, std::move(dips)).first->second;
}

double DipCalibrator::p_value(double dip, std::size_t k) {
    return reference_pvalue(*reference(k), dip);
}

namespace {

struct DipSplit {
    Eigen::MatrixXd hunt;
    std::vector<double> projected;
};

DipSplit hunt_direction(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                        const DipHuntConfig& config, Stream& rng) {
    if (!(config.split_fraction > 0.0 && config.split_fraction < 1.0)) {
        throw std::invalid_argument("dip_hunt: split fraction must lie in (0,1)");
    }
    std::vector<std::size_t> order(rows.begin(), rows.end());
    std::shuffle(order.begin(), order.end(), rng);
    const auto n1 = static_cast<std::size_t>(std::floor(config.split_fraction * static_cast<double>(order.size())));
    if (n1 == 0 || n1 == order.size()) {
        throw std::invalid_argument("dip_hunt: both split parts must be nonempty");
    }
    const std::span<const std::size_t> all(order);
    DipSplit split;
    split.hunt = gather_rows(X, all.first(n1));
    const Eigen::VectorXd a = two_means_direction(split.hunt, rng);
    for (std::size_t i : all.subspan(n1)) {
        split.projected.push_back(X.row(static_cast<Eigen::Index>(i)).dot(a));
    }
    return split;
}

}  // namespace

double dip_hunt_pvalue(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                       const DipHuntConfig& config, DipCalibrator& calibrator, Stream& rng) {
    const DipSplit split = hunt_direction(X, rows, config, rng);
    return calibrator.p_value(dip_statistic(split.projected), split.projected.size());
}

double dip_hunt_pvalue(const Eigen::MatrixXd& X, std::span<const std::size_t> rows,
                       const DipHuntConfig& config, Stream& rng) {
    if (config.calibration_reps < 199) {
        throw std::invalid_argument("dip_hunt: need at least 199 calibration draws");
    }
    const DipSplit split = hunt_direction(X, rows, config, rng);
    const double dip = dip_statistic(split.projected);
    const std::vector<double> reference =
        uniform_reference_dips(split.projected.size(), config.calibration_reps, rng);
    return reference_pvalue(reference, dip);
}

RandomizedStatistic dip_hunt_test(std::shared_ptr<const Eigen::MatrixXd> X, DipHuntConfig config,
                                  std::shared_ptr<DipCalibrator> calibrator) {
    if (config.calibration_reps < 199 || calibrator->reps() != config.calibration_reps) {
        throw std::invalid_argument("dip_hunt: calibrator must use the configured number (>= 199) of draws");
    }
    return {[X = std::move(X), config, calibrator = std::move(calibrator)](std::span<const std::size_t> rows,
                                                                          Stream& rng) {
                return 1.0 - dip_hunt_pvalue(*X, rows, config, *calibrator, rng);
            },
            NullMarginal::Uniform01};
}

}  // namespace rtsub::plugins

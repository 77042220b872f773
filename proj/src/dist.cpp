#include "rtsub/dist.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rtsub {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// Acklam's rational approximation for the lower tail, p in (0, 0.5].
double acklam_lower(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Lower-tail quantile with one Halley step against the erfc-based cdf.
double lower_quantile(double p) {
    double x = acklam_lower(p);
    const double e = 0.5 * std::erfc(-x * kInvSqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    if (std::isfinite(u)) {
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

}  // namespace

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double std_normal_sf(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

double std_normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_quantile(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("std_normal_quantile: p must lie in [0,1]");
    }
    if (p == 0.0 || p == 1.0) {
        throw std::domain_error("std_normal_quantile: infinite quantile");
    }
    if (p == 0.5) {
        return 0.0;
    }
    // 1 - p is exact for p in [0.5, 1], so the upper half keeps full accuracy.
    return p < 0.5 ? lower_quantile(p) : -lower_quantile(1.0 - p);
}

EmpiricalCDF::EmpiricalCDF(std::vector<double> values) : sorted_(std::move(values)) {
    std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCDF::operator()(double x) const {
    if (sorted_.empty()) {
        throw std::invalid_argument("empty distribution");
    }
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double EmpiricalCDF::upper_quantile(double alpha) const {
    if (sorted_.empty()) {
        throw std::invalid_argument("empty distribution");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("upper_quantile: alpha must lie in (0,1)");
    }
    // Smallest k with k/size >= 1 - alpha, evaluated with the same division
    // operator() uses so the two agree at the boundary.
    const double target = 1.0 - alpha;
    const double size = static_cast<double>(sorted_.size());
    std::size_t lo = 1;
    std::size_t hi = sorted_.size();
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (static_cast<double>(mid) / size >= target) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    // F jumps only at the last copy of a tied value; the value is the same.
    return sorted_[lo - 1];
}

double ecdf_eval(const EmpiricalCDF& F, double x) { return F(x); }

double ecdf_upper_quantile(const EmpiricalCDF& F, double alpha) { return F.upper_quantile(alpha); }

double null_cdf(NullMarginal F0, double x) {
    switch (F0) {
        case NullMarginal::Uniform01:
            return std::clamp(x, 0.0, 1.0);
        case NullMarginal::StdNormal:
            return std_normal_cdf(x);
    }
    throw std::logic_error("unknown null marginal");
}

double null_quantile(NullMarginal F0, double p) {
    switch (F0) {
        case NullMarginal::Uniform01:
            if (!(p >= 0.0 && p <= 1.0)) {
                throw std::invalid_argument("null_quantile: p must lie in [0,1]");
            }
            return p;
        case NullMarginal::StdNormal:
            return std_normal_quantile(p);
    }
    throw std::logic_error("unknown null marginal");
}

std::string to_string(NullMarginal F0) {
    return F0 == NullMarginal::Uniform01 ? "uniform" : "normal";
}

std::vector<double> midranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });

    std::vector<double> ranks(n);
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = start + 1;
        while (end < n && values[order[end]] == values[order[start]]) {
            ++end;
        }
        // positions start+1 .. end share their mean rank
        const double rank = end - start == 1
                                ? static_cast<double>(start + 1)
                                : 0.5 * static_cast<double>(start + 1 + end);
        for (std::size_t k = start; k < end; ++k) {
            ranks[order[k]] = rank;
        }
        start = end;
    }
    return ranks;
}

StatMatrix rank_transform(const StatMatrix& H, NullMarginal F0) {
    if (H.size() == 0) {
        throw std::invalid_argument("rank_transform: empty matrix");
    }
    for (double v : H.values()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("rank_transform: non-finite entry");
        }
    }
    const std::vector<double> ranks = midranks(H.values());
    const double total = static_cast<double>(H.size());

    StatMatrix out(H.rows(), H.cols());
    auto dst = out.values();
    for (std::size_t k = 0; k < ranks.size(); ++k) {
        dst[k] = null_quantile(F0, (ranks[k] - 0.5) / total);
    }
    return out;
}

Moments sample_moments(std::span<const double> x) {
    if (x.size() < 2) {
        throw std::invalid_argument("sample_moments: need at least two values");
    }
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, ss / (n - 1.0)};
}

Eigen::MatrixXd sample_covariance_matrix(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) {
        throw std::invalid_argument("sample_covariance_matrix: need at least two rows");
    }
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(X.rows() - 1);
}

}  // namespace rtsub

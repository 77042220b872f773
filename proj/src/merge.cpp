#include "rtsub/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "rtsub/dist.hpp"

namespace rtsub::merge {

namespace {

void check_pvalues(std::span<const double> p) {
    if (p.empty()) {
        throw std::invalid_argument("merge: empty p-value vector");
    }
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("merge: p-values must lie in [0,1]");
        }
    }
}

double geomean(std::span<const double> p) {
    double log_sum = 0.0;
    for (double v : p) {
        if (v == 0.0) {
            return 0.0;
        }
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(p.size()));
}

double variance_of_mean(const GaussLocationModel& model) {
    const double L = static_cast<double>(model.L);
    return 1.0 / L + model.rho * (L - 1.0) / L;
}

void check_model(const GaussLocationModel& model) {
    if (!(model.rho >= 0.0 && model.rho < 1.0)) {
        throw std::invalid_argument("GaussLocationModel: rho must lie in [0,1)");
    }
    if (!(model.alpha > 0.0 && model.alpha < 1.0)) {
        throw std::invalid_argument("GaussLocationModel: alpha must lie in (0,1)");
    }
    if (model.L == 0) {
        throw std::invalid_argument("GaussLocationModel: L must be positive");
    }
}

}  // namespace

double arithmetic(std::span<const double> p) {
    check_pvalues(p);
    const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
    return std::min(1.0, 2.0 * mean);
}

double geometric(std::span<const double> p) {
    check_pvalues(p);
    return std::min(1.0, std::numbers::e * geomean(p));
}

double bonferroni(std::span<const double> p) {
    check_pvalues(p);
    return std::min(1.0, static_cast<double>(p.size()) * *std::min_element(p.begin(), p.end()));
}

double bonf_geom(std::span<const double> p) {
    check_pvalues(p);
    const double bonf = static_cast<double>(p.size()) * *std::min_element(p.begin(), p.end());
    return std::min(1.0, 2.0 * std::min(bonf, std::numbers::e * geomean(p)));
}

bool z_half_average_test(std::span<const double> T, double alpha) {
    if (!(alpha > 0.0 && alpha <= std_normal_sf(1.0))) {
        throw std::invalid_argument("z_half_average_test: alpha outside theorem's validity range");
    }
    if (T.empty()) {
        throw std::invalid_argument("z_half_average_test: no statistics");
    }
    const double mean = std::accumulate(T.begin(), T.end(), 0.0) / static_cast<double>(T.size());
    return mean / 2.0 > std_normal_quantile(1.0 - alpha);
}

double gauss_power(const GaussLocationModel& model) {
    check_model(model);
    const double z = std_normal_quantile(1.0 - model.alpha);
    return std_normal_cdf(model.mu / std::sqrt(variance_of_mean(model)) - z);
}

double gauss_conservative_power(const GaussLocationModel& model) {
    check_model(model);
    const double z = std_normal_quantile(1.0 - model.alpha);
    return std_normal_cdf((model.mu - 2.0 * z) / std::sqrt(variance_of_mean(model)));
}

double gauss_nonreplication(const GaussLocationModel& model) {
    check_model(model);
    const double L = static_cast<double>(model.L);
    const double z = std_normal_quantile(1.0 - model.alpha);
    const double threshold = std::sqrt(variance_of_mean(model)) * z;
    const double within_sd = std::sqrt((1.0 - model.rho) / L);
    const double sqrt_rho = std::sqrt(model.rho);

    auto integrand = [&](double x) {
        const double y = (model.mu + sqrt_rho * x - threshold) / within_sd;
        const double up = std_normal_cdf(y);
        const double down = std_normal_cdf(-y);
        return (up * up + down * down) * std_normal_pdf(x);
    };

    constexpr double tolerance = 1e-8;
    double error = 0.0;
    double l1 = 0.0;
    const double agree = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        integrand, -8.0, 8.0, 20, 1e-12, &error, &l1);
    if (!(error <= tolerance) || !std::isfinite(agree)) {
        throw std::runtime_error("gauss_nonreplication: quadrature did not converge (error estimate " +
                                 std::to_string(error) + ")");
    }
    return std::clamp(1.0 - agree, 0.0, 1.0);
}

std::vector<double> gen_exchangeable_gaussians(double mu, double rho, std::size_t L, Stream& rng) {
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw std::invalid_argument("gen_exchangeable_gaussians: rho must lie in [0,1)");
    }
    std::normal_distribution<double> normal;
    const double shared = std::sqrt(rho) * normal(rng);
    const double scale = std::sqrt(1.0 - rho);
    std::vector<double> out(L);
    for (double& t : out) {
        t = mu + shared + scale * normal(rng);
    }
    return out;
}

std::pair<double, double> adversarial_pair_from_uniform(double alpha, double u1) {
    if (!(alpha > 0.0 && alpha <= 0.5)) {
        throw std::invalid_argument("adversarial_pair: alpha must lie in (0, 1/2]");
    }
    const double u2 = u1 <= 1.0 - 2.0 * alpha ? u1 : 2.0 - 2.0 * alpha - u1;
    return {std_normal_quantile(u1), std_normal_quantile(u2)};
}

std::pair<double, double> adversarial_pair(double alpha, Stream& rng) {
    return adversarial_pair_from_uniform(alpha, rng.uniform());
}

double tail_bound_cx(double s) {
    if (!(s > 1.0)) {
        throw std::invalid_argument("tail_bound_cx: requires s > 1");
    }
    return std_normal_sf(s - 1.0 / s) / (1.0 - 1.0 / (s * s));
}

}  // namespace rtsub::merge

#include "rtsub/dml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "rtsub/parallel.hpp"

namespace rtsub::dml {

void PLMData::validate() const {
    if (D.size() != Y.size() || X.size() != Y.size()) {
        throw std::invalid_argument("PLMData: column lengths differ");
    }
    for (std::size_t i = 0; i < Y.size(); ++i) {
        if (!std::isfinite(Y[i]) || !std::isfinite(D[i]) || !std::isfinite(X[i])) {
            throw std::invalid_argument("PLMData: non-finite value");
        }
    }
}

PLMData PLMData::subset(std::span<const std::size_t> rows) const {
    PLMData out;
    out.Y.reserve(rows.size());
    out.D.reserve(rows.size());
    out.X.reserve(rows.size());
    for (std::size_t i : rows) {
        out.Y.push_back(Y.at(i));
        out.D.push_back(D.at(i));
        out.X.push_back(X.at(i));
    }
    return out;
}

FoldAssignment make_folds(std::size_t n, std::size_t L, Stream& rng) {
    if (L == 0 || n < 2 * L) {
        throw std::invalid_argument("make_folds: need n >= 2L");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    FoldAssignment folds(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        folds[order[pos]] = pos % L;
    }
    return folds;
}

std::size_t default_knn_k(std::size_t n_train) {
    return static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n_train), 2.0 / 3.0) / 2.0));
}

NuisanceLearner knn_regressor(std::optional<std::size_t> k) {
    if (k && *k == 0) {
        throw std::invalid_argument("knn_regressor: k must be at least 1");
    }
    return {[k](std::span<const double> x, std::span<const double> y) -> Predictor {
        if (x.empty()) {
            throw std::invalid_argument("knn_regressor: empty training set");
        }
        if (x.size() != y.size()) {
            throw std::invalid_argument("knn_regressor: feature and target lengths differ");
        }
        const std::size_t kk = std::min(k.value_or(default_knn_k(x.size())), x.size());
        return [xs = std::vector<double>(x.begin(), x.end()), ys = std::vector<double>(y.begin(), y.end()),
                kk](double q) {
            std::vector<std::pair<double, std::size_t>> dist(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) {
                dist[i] = {std::abs(xs[i] - q), i};
            }
            std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk - 1), dist.end());
            double s = 0.0;
            for (std::size_t j = 0; j < kk; ++j) {
                s += ys[dist[j].second];
            }
            return s / static_cast<double>(kk);
        };
    }};
}

CrossFit cross_fit(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                   const NuisanceLearner& learner) {
    const std::size_t n = data.size();
    if (folds.size() != n) {
        throw std::invalid_argument("cross_fit: fold assignment length does not match data");
    }
    CrossFit fit;
    fit.theta.resize(L);
    fit.y_residual.resize(n);
    fit.d_residual.resize(n);
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> x_train;
        std::vector<double> y_train;
        std::vector<double> d_train;
        std::vector<std::size_t> held_out;
        for (std::size_t i = 0; i < n; ++i) {
            if (folds[i] == l) {
                held_out.push_back(i);
            } else {
                x_train.push_back(data.X[i]);
                y_train.push_back(data.Y[i]);
                d_train.push_back(data.D[i]);
            }
        }
        if (held_out.empty()) {
            throw std::invalid_argument("cross_fit: empty fold " + std::to_string(l));
        }
        const Predictor l_hat = learner.fit(x_train, y_train);
        const Predictor m_hat = learner.fit(x_train, d_train);
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i : held_out) {
            const double ry = data.Y[i] - l_hat(data.X[i]);
            const double rd = data.D[i] - m_hat(data.X[i]);
            fit.y_residual[i] = ry;
            fit.d_residual[i] = rd;
            num += ry * rd;
            den += rd * rd;
        }
        if (!(den > 0.0)) {
            throw std::domain_error("no treatment variation in fold");
        }
        fit.theta[l] = num / den;
    }
    return fit;
}

std::vector<double> cross_fit_theta(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                                    const NuisanceLearner& learner) {
    return cross_fit(data, folds, L, learner).theta;
}

double dml_point(std::span<const double> theta_per_fold) {
    if (theta_per_fold.empty()) {
        throw std::invalid_argument("dml_point: no fold estimates");
    }
    return std::accumulate(theta_per_fold.begin(), theta_per_fold.end(), 0.0) /
           static_cast<double>(theta_per_fold.size());
}

double sigma_plugin(const CrossFit& fit, double theta) {
    const std::size_t n = fit.d_residual.size();
    double psi_sq = 0.0;
    double psi_a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double rd = fit.d_residual[i];
        const double psi = (fit.y_residual[i] - theta * rd) * rd;
        psi_sq += psi * psi;
        psi_a -= rd * rd;
    }
    psi_sq /= static_cast<double>(n);
    psi_a /= static_cast<double>(n);
    if (psi_a == 0.0) {
        throw std::domain_error("sigma_plugin: zero mean of psi^a");
    }
    return std::sqrt(psi_sq) / std::abs(psi_a);
}

double sigma_plugin(const PLMData& data, const FoldAssignment& folds, std::size_t L,
                    const NuisanceLearner& learner, double theta) {
    return sigma_plugin(cross_fit(data, folds, L, learner), theta);
}

StatMatrix subsample_theta_matrix(const PLMData& data, const NuisanceLearner& learner, std::size_t L,
                                  const IndexTupleSet& tuples, std::uint64_t seed, std::size_t threads) {
    StatMatrix theta(tuples.size(), L);
    parallel_for(tuples.size(), threads, [&](std::size_t b) {
        const PLMData sub = data.subset(tuples.tuple(b));
        Stream rng = make_stream(seed, {stream_tag::folds, b});
        const FoldAssignment folds = make_folds(sub.size(), L, rng);
        try {
            const std::vector<double> row = cross_fit_theta(sub, folds, L, learner);
            std::copy(row.begin(), row.end(), theta.row(b).begin());
        } catch (const std::exception& e) {
            throw std::runtime_error("subsample " + std::to_string(b) + ": " + e.what());
        }
    });
    return theta;
}

double sigma_ls(const StatMatrix& theta_matrix, double epsilon, std::size_t m) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) {
        throw std::invalid_argument("sigma_ls: epsilon must lie in (0, 0.5)");
    }
    const StatMatrix scores = rank_transform(theta_matrix, NullMarginal::StdNormal);
    const EmpiricalCDF pooled(std::vector<double>(theta_matrix.values().begin(), theta_matrix.values().end()));
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t k = 0; k < theta_matrix.size(); ++k) {
        const double t = theta_matrix.values()[k];
        const double f = pooled(t);
        if (f > epsilon / 2.0 && f < 1.0 - epsilon / 2.0) {
            xs.push_back(t);
            ys.push_back(scores.values()[k]);
        }
    }
    if (xs.size() < 10) {
        throw std::invalid_argument("sigma_ls: fewer than 10 entries retained after trimming");
    }
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    if (!(slope > 0.0)) {
        throw std::domain_error("degenerate slope");
    }
    return std::sqrt(static_cast<double>(m) / static_cast<double>(theta_matrix.cols())) / slope;
}

EmpiricalCDF rank_aggregate_cdf(const StatMatrix& theta_matrix) {
    return EmpiricalCDF(aggregate_rows(rank_transform(theta_matrix, NullMarginal::StdNormal), mean_aggregator()));
}

std::pair<double, double> rank_ci(double theta_dml, double sigma_ls, const EmpiricalCDF& G, double alpha,
                                  std::size_t n, std::size_t L) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("rank_ci: alpha must lie in (0,1)");
    }
    if (!(sigma_ls > 0.0)) {
        throw std::invalid_argument("rank_ci: sigma must be positive");
    }
    const double scale = std::sqrt(static_cast<double>(L) / static_cast<double>(n)) * sigma_ls;
    // G^{-1}(1 - alpha/2) and G^{-1}(alpha/2) as upper quantiles.
    const double hi_q = G.upper_quantile(alpha / 2.0);
    const double lo_q = G.upper_quantile(1.0 - alpha / 2.0);
    if (hi_q < lo_q) {
        throw std::domain_error("rank_ci: inverted quantiles");
    }
    return {theta_dml - scale * hi_q, theta_dml - scale * lo_q};
}

double fold_correlation_diag(const StatMatrix& theta_matrix) {
    const std::size_t L = theta_matrix.cols();
    if (L < 2 || theta_matrix.rows() < 2) {
        throw std::invalid_argument("fold_correlation_diag: need at least two rows and two folds");
    }
    const auto values = theta_matrix.values();
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double var = 0.0;
    double cross = 0.0;
    std::size_t pairs = 0;
    for (std::size_t b = 0; b < theta_matrix.rows(); ++b) {
        const auto row = theta_matrix.row(b);
        for (std::size_t l = 0; l < L; ++l) {
            var += (row[l] - mean) * (row[l] - mean);
            for (std::size_t k = l + 1; k < L; ++k) {
                cross += (row[l] - mean) * (row[k] - mean);
                ++pairs;
            }
        }
    }
    var /= static_cast<double>(values.size());
    cross /= static_cast<double>(pairs);
    if (!(var > 0.0)) {
        throw std::domain_error("fold_correlation_diag: zero variance");
    }
    return cross / var;
}

double m0(double x) {
    return x + std::cos(x) + std::exp(x) / (1.0 + std::exp(x));
}

double g0(double x) {
    return (-10.0 * x + 3.0 * std::cos(4.0 * x) * x * x / (1.0 + std::exp(x / 6.0))) / 10.0;
}

PLMData gen_plm_data(std::size_t n, double theta0, Stream& rng) {
    std::normal_distribution<double> normal;
    std::gamma_distribution<double> gamma_v(0.5, 1.0);
    std::gamma_distribution<double> gamma_xi(0.3, 1.0);
    PLMData data;
    data.Y.resize(n);
    data.D.resize(n);
    data.X.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = normal(rng);
        const double s = 4.0 * std::sqrt(std::abs(x));
        const double v = s * (gamma_v(rng) - 0.5);
        const double xi = s * (gamma_xi(rng) - 0.3);
        const double d = m0(x) + v;
        data.X[i] = x;
        data.D[i] = d;
        data.Y[i] = d * theta0 + g0(x) + xi;
    }
    return data;
}

DMLResult dml_rank_ci(const PLMData& data, const NuisanceLearner& learner, const DMLOptions& options) {
    data.validate();
    const std::size_t n = data.size();
    const std::size_t m = options.m.value_or(default_subsample_size(n));

    DMLResult result;
    Stream fold_rng = make_stream(options.seed, {stream_tag::full, stream_tag::folds});
    const FoldAssignment folds = make_folds(n, options.L, fold_rng);
    const CrossFit fit = cross_fit(data, folds, options.L, learner);
    result.theta_per_fold = fit.theta;
    result.theta_dml = dml_point(fit.theta);
    result.sigma_plugin = sigma_plugin(fit, result.theta_dml);
    const double z = std_normal_quantile(1.0 - options.alpha / 2.0);
    const double half = z * result.sigma_plugin / std::sqrt(static_cast<double>(n));
    result.plugin_lower = result.theta_dml - half;
    result.plugin_upper = result.theta_dml + half;

    Stream tuple_rng = make_stream(options.seed, {stream_tag::tuples});
    const IndexTupleSet tuples = generate_tuples(n, m, options.J, tuple_rng);
    const StatMatrix theta = subsample_theta_matrix(data, learner, options.L, tuples, options.seed, options.threads);
    result.m = m;
    result.B = theta.rows();
    result.sigma_ls = sigma_ls(theta, options.epsilon, m);
    const auto [lo, hi] =
        rank_ci(result.theta_dml, result.sigma_ls, rank_aggregate_cdf(theta), options.alpha, n, options.L);
    result.ci_lower = lo;
    result.ci_upper = hi;
    result.fold_correlation_diag = fold_correlation_diag(theta);
    return result;
}

}  // namespace rtsub::dml

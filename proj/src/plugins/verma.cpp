#include "rtsub/plugins/verma.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>

#include "rtsub/dist.hpp"

namespace rtsub::plugins {

namespace {

constexpr double propensity_floor = 1e-6;

double expit(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

const Eigen::Matrix4d& latent_cholesky() {
    static const Eigen::Matrix4d factor = [] {
        Eigen::Matrix4d sigma;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                sigma(i, j) = std::pow(2.0, -std::abs(i - j));
            }
        }
        return Eigen::Matrix4d(sigma.llt().matrixL());
    }();
    return factor;
}

void check_propensities(std::span<const double> e, std::size_t n) {
    if (e.size() != n) {
        throw std::invalid_argument("propensity vector length does not match data");
    }
    for (double v : e) {
        if (!(v > propensity_floor && v < 1.0 - propensity_floor)) {
            throw std::domain_error("propensity at boundary");
        }
    }
}

bool at_least(double permuted, double observed) {
    return permuted >= observed - 1e-12 * std::abs(observed);
}

void check_permutation_inputs(std::size_t a, std::size_t y, std::size_t n_perm) {
    if (a != y) {
        throw std::invalid_argument("permutation test: length mismatch");
    }
    if (a < 2) {
        throw std::invalid_argument("permutation test: need at least two observations");
    }
    if (n_perm < 99) {
        throw std::invalid_argument("permutation test: need at least 99 permutations");
    }
}

double abs_cross(std::span<const int> A, std::span<const double> centred) {
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        if (A[i] != 0) {
            s += centred[i];
        }
    }
    return std::abs(s);
}

}  // namespace

void TrialDataset::validate() const {
    const std::size_t n = Y.size();
    if (A1.size() != n || A2.size() != n || L.size() != n) {
        throw std::invalid_argument("TrialDataset: column lengths differ");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if ((A1[i] != 0 && A1[i] != 1) || (A2[i] != 0 && A2[i] != 1)) {
            throw std::invalid_argument("TrialDataset: treatments must be 0 or 1");
        }
        if (!std::isfinite(L[i]) || !std::isfinite(Y[i])) {
            throw std::invalid_argument("TrialDataset: non-finite value");
        }
    }
}

TrialDataset TrialDataset::subset(std::span<const std::size_t> rows) const {
    TrialDataset out;
    out.A1.reserve(rows.size());
    out.L.reserve(rows.size());
    out.A2.reserve(rows.size());
    out.Y.reserve(rows.size());
    for (std::size_t i : rows) {
        out.A1.push_back(A1.at(i));
        out.L.push_back(L.at(i));
        out.A2.push_back(A2.at(i));
        out.Y.push_back(Y.at(i));
    }
    return out;
}

double true_propensity(int a1, double l) {
    return expit(2.0 * a1 - l + 2.0);
}

std::vector<double> true_propensities(const TrialDataset& data) {
    std::vector<double> e(data.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = true_propensity(data.A1[i], data.L[i]);
    }
    return e;
}

TrialDataset gen_trial_data(std::size_t n, double tau, const TrialVariant& variant, Stream& rng) {
    if (variant.kind == TrialVariant::Kind::ScaleT && !(variant.nu > 0.0)) {
        throw std::invalid_argument("gen_trial_data: degrees of freedom must be positive");
    }
    static const Eigen::Vector4d beta_ul(1.0, 1.0, -2.0, 2.0);
    static const Eigen::Vector4d beta_uy(2.0, -1.0, 3.0, -10.0);
    const Eigen::Matrix4d& chol = latent_cholesky();

    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.5);
    const bool heavy = variant.kind == TrialVariant::Kind::ScaleT && std::isfinite(variant.nu);
    std::student_t_distribution<double> student(heavy ? variant.nu : 1.0);

    TrialDataset d;
    d.A1.resize(n);
    d.L.resize(n);
    d.A2.resize(n);
    d.Y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Vector4d z;
        for (int k = 0; k < 4; ++k) {
            z(k) = normal(rng);
        }
        const Eigen::Vector4d u = chol * z;
        const int a1 = coin(rng) ? 1 : 0;
        const double l = a1 + beta_ul.dot(u) + normal(rng);
        const int a2 = rng.uniform() < true_propensity(a1, l) ? 1 : 0;
        const double eps_y = normal(rng);
        double y = -a2 + beta_uy.dot(u);
        if (variant.kind == TrialVariant::Kind::Location) {
            y += tau * a1 + eps_y;
        } else {
            const double xi = heavy ? student(rng) : normal(rng);
            y += (1 - a1) * eps_y + a1 * xi;
        }
        d.A1[i] = a1;
        d.L[i] = l;
        d.A2[i] = a2;
        d.Y[i] = y;
    }
    return d;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels) {
    const Eigen::Index n = features.rows();
    const Eigen::Index d = features.cols();
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw std::invalid_argument("fit_logistic: label count does not match rows");
    }
    if (n <= d) {
        throw std::invalid_argument("fit_logistic: need more rows than features");
    }
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(features).rank() < d) {
        throw std::invalid_argument("fit_logistic: singular design");
    }
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int v = labels[static_cast<std::size_t>(i)];
        if (v != 0 && v != 1) {
            throw std::invalid_argument("fit_logistic: labels must be 0 or 1");
        }
        y(i) = v;
    }

    auto log_likelihood = [&](const Eigen::VectorXd& eta) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // log(1 + e^x) computed stably
            const double soft = eta(i) > 0 ? eta(i) + std::log1p(std::exp(-eta(i))) : std::log1p(std::exp(eta(i)));
            ll += y(i) * eta(i) - soft;
        }
        return ll;
    };

    LogisticFit fit;
    fit.coef = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd best = fit.coef;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter <= 50; ++iter) {
        const Eigen::VectorXd eta = features * fit.coef;
        const double ll = log_likelihood(eta);
        if (ll > best_ll) {
            best_ll = ll;
            best = fit.coef;
        }
        Eigen::VectorXd p(n);
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = expit(eta(i));
            w(i) = p(i) * (1.0 - p(i));
        }
        const Eigen::VectorXd grad = features.transpose() * (y - p);
        fit.iterations = iter;
        if (grad.norm() < 1e-8) {
            // A vanishing gradient at a perfect fit means separated classes
            // with no finite maximiser.
            fit.converged = ll < -1e-6;
            return fit;
        }
        if (iter == 50) {
            break;
        }
        Eigen::MatrixXd hessian = features.transpose() * w.asDiagonal() * features;
        hessian.diagonal().array() += 1e-8;
        fit.coef += hessian.ldlt().solve(grad);
    }
    fit.coef = best;
    fit.converged = false;
    return fit;
}

std::vector<double> fitted_propensities(const TrialDataset& data) {
    const auto n = static_cast<Eigen::Index>(data.size());
    Eigen::MatrixXd design(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        design(i, 0) = 1.0;
        design(i, 1) = data.A1[static_cast<std::size_t>(i)];
        design(i, 2) = data.L[static_cast<std::size_t>(i)];
    }
    const LogisticFit fit = fit_logistic(design, data.A2);
    const Eigen::VectorXd eta = design * fit.coef;
    std::vector<double> e(data.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        e[i] = expit(eta(static_cast<Eigen::Index>(i)));
    }
    return e;
}

RejectionPlan verma_rejection_plan(const TrialDataset& data, std::span<const double> propensity) {
    check_propensities(propensity, data.size());
    // Row i has weight q1/e_i (A2 = 1) or (1 - q1)/(1 - e_i) (A2 = 0); the bound
    // is smallest when the largest weights of the two arms are equal.
    double min_treated = std::numeric_limits<double>::infinity();
    double min_control = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.A2[i] == 1) {
            min_treated = std::min(min_treated, propensity[i]);
        } else {
            min_control = std::min(min_control, 1.0 - propensity[i]);
        }
    }
    RejectionPlan plan;
    if (std::isinf(min_treated) && std::isinf(min_control)) {
        plan.q1 = 0.5;
        plan.C = 1.0;
        return plan;
    }
    if (std::isinf(min_treated)) {
        plan.q1 = 0.0;
        plan.C = 1.0 / min_control;
    } else if (std::isinf(min_control)) {
        plan.q1 = 1.0;
        plan.C = 1.0 / min_treated;
    } else {
        plan.q1 = min_treated / (min_treated + min_control);
        plan.C = 1.0 / (min_treated + min_control);
    }
    plan.weights.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        plan.weights[i] = data.A2[i] == 1 ? plan.q1 / propensity[i] : (1.0 - plan.q1) / (1.0 - propensity[i]);
        // Rounding can push the extreme rows a hair above C.
        plan.weights[i] = std::min(plan.weights[i], plan.C);
    }
    return plan;
}

std::vector<std::size_t> rejection_sample(std::span<const double> weights, double C,
                                          std::span<const std::size_t> row_ids, std::uint64_t key) {
    if (!(C > 0.0)) {
        throw std::invalid_argument("rejection_sample: C must be positive");
    }
    if (row_ids.size() != weights.size()) {
        throw std::invalid_argument("rejection_sample: row id count does not match weights");
    }
    for (double w : weights) {
        if (!(w >= 0.0 && w <= C)) {
            throw std::invalid_argument("weight bound violated");
        }
    }
    std::vector<std::size_t> accepted;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        Stream row_rng = make_stream(key, {row_ids[i]});
        if (row_rng.uniform() < weights[i] / C) {
            accepted.push_back(i);
        }
    }
    return accepted;
}

std::vector<std::size_t> rejection_sample(std::span<const double> weights, double C, Stream& rng) {
    std::vector<std::size_t> ids(weights.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return rejection_sample(weights, C, ids, rng());
}

double permutation_pvalue_cov(std::span<const int> A, std::span<const double> Y, std::size_t n_perm,
                              Stream& rng) {
    check_permutation_inputs(A.size(), Y.size(), n_perm);
    const double mean_y = std::accumulate(Y.begin(), Y.end(), 0.0) / static_cast<double>(Y.size());
    std::vector<double> centred(Y.size());
    for (std::size_t i = 0; i < Y.size(); ++i) {
        centred[i] = Y[i] - mean_y;
    }
    // sum_i (A_i - mean A)(Y_i - mean Y) = sum_i A_i (Y_i - mean Y); the common
    // 1/(n-1) factor does not affect the ordering.
    const double observed = abs_cross(A, centred);
    std::vector<int> labels(A.begin(), A.end());
    std::size_t exceed = 0;
    for (std::size_t k = 0; k < n_perm; ++k) {
        std::shuffle(labels.begin(), labels.end(), rng);
        if (at_least(abs_cross(labels, centred), observed)) {
            ++exceed;
        }
    }
    return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(n_perm));
}

double mmd_sq(std::span<const double> Y0, std::span<const double> Y1, double bandwidth) {
    if (Y0.empty() || Y1.empty()) {
        throw std::invalid_argument("mmd_sq: both samples must be nonempty");
    }
    if (!(bandwidth > 0.0)) {
        throw std::invalid_argument("mmd_sq: bandwidth must be positive");
    }
    const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
    auto mean_kernel = [scale](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (double u : a) {
            for (double v : b) {
                s += std::exp(scale * (u - v) * (u - v));
            }
        }
        return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };
    return std::max(0.0, mean_kernel(Y0, Y0) + mean_kernel(Y1, Y1) - 2.0 * mean_kernel(Y0, Y1));
}

double median_heuristic(std::span<const double> pooled) {
    if (pooled.size() < 2) {
        return 1.0;
    }
    std::vector<double> diffs;
    diffs.reserve(pooled.size() * (pooled.size() - 1) / 2);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        for (std::size_t j = i + 1; j < pooled.size(); ++j) {
            diffs.push_back(std::abs(pooled[i] - pooled[j]));
        }
    }
    std::sort(diffs.begin(), diffs.end());
    const std::size_t k = diffs.size();
    const double median = k % 2 == 1 ? diffs[k / 2] : 0.5 * (diffs[k / 2 - 1] + diffs[k / 2]);
    return median > 0.0 ? median : 1.0;
}

double permutation_pvalue_mmd(std::span<const int> A, std::span<const double> Y, std::size_t n_perm,
                              Stream& rng) {
    check_permutation_inputs(A.size(), Y.size(), n_perm);
    const std::size_t n = Y.size();
    const auto n1 = static_cast<std::size_t>(std::count(A.begin(), A.end(), 1));
    if (n1 == 0 || n1 == n) {
        throw std::invalid_argument("one group empty");
    }
    const std::size_t n0 = n - n1;
    const double h = median_heuristic(Y);
    const double scale = -1.0 / (2.0 * h * h);

    Eigen::MatrixXd K(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        K(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            K(i, j) = K(j, i) = std::exp(scale * (Y[i] - Y[j]) * (Y[i] - Y[j]));
        }
    }
    const Eigen::VectorXd row_sum = K.rowwise().sum();
    const double total = row_sum.sum();

    std::vector<std::size_t> group1;
    group1.reserve(n1);
    auto statistic = [&](std::span<const int> labels) {
        group1.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != 0) group1.push_back(i);
        }
        double within1 = 0.0;
        double rows1 = 0.0;
        for (std::size_t i : group1) {
            rows1 += row_sum(static_cast<Eigen::Index>(i));
            for (std::size_t j : group1) {
                within1 += K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
        const double cross = rows1 - within1;
        const double within0 = total - 2.0 * rows1 + within1;
        const double a = static_cast<double>(n0);
        const double b = static_cast<double>(n1);
        return within0 / (a * a) + within1 / (b * b) - 2.0 * cross / (a * b);
    };

    const double observed = statistic(A);
    std::vector<int> labels(A.begin(), A.end());
    std::size_t exceed = 0;
    for (std::size_t k = 0; k < n_perm; ++k) {
        std::shuffle(labels.begin(), labels.end(), rng);
        if (at_least(statistic(labels), observed)) {
            ++exceed;
        }
    }
    return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(n_perm));
}

double ipw_statistic(const TrialDataset& data, std::span<const double> propensity) {
    check_propensities(propensity, data.size());
    if (data.size() == 0) {
        throw std::invalid_argument("ipw_statistic: empty data");
    }
    const double mean_a1 =
        static_cast<double>(std::accumulate(data.A1.begin(), data.A1.end(), 0)) / static_cast<double>(data.size());
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double p = data.A2[i] == 1 ? propensity[i] : 1.0 - propensity[i];
        const double z = data.Y[i] * (data.A1[i] - mean_a1) / p;
        sum += z;
        sum_sq += z * z;
    }
    if (!(sum_sq > 0.0)) {
        throw std::domain_error("degenerate IPW statistic");
    }
    return sum / std::sqrt(sum_sq);
}

VermaStatistic verma_statistic_from_string(const std::string& name) {
    if (name == "cov") return VermaStatistic::Cov;
    if (name == "mmd") return VermaStatistic::Mmd;
    throw std::invalid_argument("unknown Verma statistic: " + name);
}

PropensitySource propensity_source_from_string(const std::string& name) {
    if (name == "true") return PropensitySource::True;
    if (name == "fitted") return PropensitySource::Fitted;
    throw std::invalid_argument("unknown propensity source: " + name);
}

namespace {

std::vector<double> propensities_for(const TrialDataset& data, PropensitySource source) {
    std::vector<double> e = source == PropensitySource::True ? true_propensities(data) : fitted_propensities(data);
    for (double& v : e) {
        v = std::clamp(v, 2.0 * propensity_floor, 1.0 - 2.0 * propensity_floor);
    }
    return e;
}

}  // namespace

double post_sampling_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, const RejectionPlan& plan,
                            VermaStatistic kind, std::size_t n_perm, Stream& rng) {
    if (n_perm < 99) {
        throw std::invalid_argument("verma_pvalue: need at least 99 permutations");
    }
    if (plan.weights.size() != data.size()) {
        throw std::invalid_argument("post_sampling_pvalue: plan does not match data");
    }
    std::vector<double> w(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        w[k] = plan.weights.at(rows[k]);
    }
    const std::vector<std::size_t> accepted = rejection_sample(w, plan.C, rows, rng());

    std::vector<int> a;
    std::vector<double> y;
    for (std::size_t k : accepted) {
        a.push_back(data.A1[rows[k]]);
        y.push_back(data.Y[rows[k]]);
    }
    const auto treated = std::count(a.begin(), a.end(), 1);
    if (a.size() < 2 || treated == 0 || treated == static_cast<std::ptrdiff_t>(a.size())) {
        return 1.0;
    }
    return kind == VermaStatistic::Cov ? permutation_pvalue_cov(a, y, n_perm, rng)
                                       : permutation_pvalue_mmd(a, y, n_perm, rng);
}

double verma_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, VermaStatistic kind,
                    PropensitySource source, std::size_t n_perm, Stream& rng) {
    if (n_perm < 99) {
        throw std::invalid_argument("verma_pvalue: need at least 99 permutations");
    }
    const TrialDataset sub = data.subset(rows);
    const RejectionPlan local = verma_rejection_plan(sub, propensities_for(sub, source));
    RejectionPlan plan = local;
    plan.weights.assign(data.size(), 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        plan.weights[rows[k]] = local.weights[k];
    }
    return post_sampling_pvalue(data, rows, plan, kind, n_perm, rng);
}

double verma_pvalue(const TrialDataset& data, VermaStatistic kind, PropensitySource source,
                    std::size_t n_perm, Stream& rng) {
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return verma_pvalue(data, rows, kind, source, n_perm, rng);
}

RandomizedStatistic verma_test(std::shared_ptr<const TrialDataset> data, VermaStatistic kind,
                               PropensitySource source, std::size_t n_perm) {
    data->validate();
    auto plan = std::make_shared<const RejectionPlan>(verma_rejection_plan(*data, propensities_for(*data, source)));
    return {[data = std::move(data), plan = std::move(plan), kind, n_perm](std::span<const std::size_t> rows,
                                                                          Stream& rng) {
                return 1.0 - post_sampling_pvalue(*data, rows, *plan, kind, n_perm, rng);
            },
            NullMarginal::Uniform01};
}

double ipw_pvalue(const TrialDataset& data, std::span<const std::size_t> rows, PropensitySource source) {
    const TrialDataset sub = data.subset(rows);
    const double chi = ipw_statistic(sub, propensities_for(sub, source));
    return std::min(1.0, 2.0 * std_normal_sf(std::abs(chi)));
}

}  // namespace rtsub::plugins

#include "rtsub/generators.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace rtsub::sim {

namespace {

void check_dimension(std::size_t p) {
    if (p < 1) {
        throw std::invalid_argument("dimension must be at least 1");
    }
}

Eigen::VectorXd fix_sign(Eigen::VectorXd v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-12) {
            return v(i) < 0 ? Eigen::VectorXd(-v) : v;
        }
    }
    return v;
}

Eigen::VectorXd standard_normal_vector(std::size_t p, Stream& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(static_cast<Eigen::Index>(p));
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        z(k) = normal(rng);
    }
    return z;
}

}  // namespace

Eigen::MatrixXd ar_covariance(std::size_t p) {
    check_dimension(p);
    const auto d = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd sigma(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            sigma(i, j) = std::pow(2.0, -static_cast<double>(std::abs(i - j)));
        }
    }
    return sigma;
}

Eigen::VectorXd principal_eigenvector(const Eigen::MatrixXd& sigma) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(sigma.rows()).normalized();
    for (int iter = 0; iter < 100000; ++iter) {
        Eigen::VectorXd next = (sigma * v).normalized();
        const double change = (next - v).norm();
        v = next;
        if (change < 1e-12) {
            break;
        }
    }
    return fix_sign(v);
}

Eigen::VectorXd second_eigenvector(const Eigen::MatrixXd& sigma) {
    if (sigma.rows() < 2) {
        throw std::invalid_argument("second_eigenvector: need dimension >= 2");
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    return fix_sign(eig.eigenvectors().col(sigma.rows() - 2));
}

Eigen::MatrixXd gen_mean_test_data(std::size_t n, std::size_t p, double tau, Stream& rng) {
    const Eigen::MatrixXd sigma = ar_covariance(p);
    const Eigen::MatrixXd chol = sigma.llt().matrixL();
    const Eigen::VectorXd mu = tau / std::sqrt(static_cast<double>(n)) * principal_eigenvector(sigma);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        X.row(i) = (mu + chol * standard_normal_vector(p, rng)).transpose();
    }
    return X;
}

Eigen::MatrixXd gen_ball_mixture(std::size_t n, std::size_t p, double tau, Stream& rng) {
    check_dimension(p);
    const double shift = 2.0 * tau / std::sqrt(2.0 + static_cast<double>(p));
    std::bernoulli_distribution coin(0.5);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::VectorXd direction;
        do {
            direction = standard_normal_vector(p, rng);
        } while (direction.norm() == 0.0);
        const double radius = std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
        Eigen::VectorXd x = radius * direction.normalized();
        if (coin(rng)) {
            x(0) += shift;
        }
        X.row(i) = x.transpose();
    }
    return X;
}

Eigen::MatrixXd gen_t_mixture(std::size_t n, std::size_t p, double tau, Stream& rng) {
    const Eigen::MatrixXd sigma = ar_covariance(p);
    const Eigen::VectorXd x0 = tau * std::sqrt(static_cast<double>(p)) * second_eigenvector(sigma);
    const Eigen::MatrixXd chol = sigma.llt().matrixL();
    std::chi_squared_distribution<double> chi2(4.0);
    std::bernoulli_distribution coin(0.5);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd g = chol * standard_normal_vector(p, rng);
        Eigen::VectorXd x = g * std::sqrt(4.0 / chi2(rng));
        if (coin(rng)) {
            x += x0;
        }
        X.row(i) = x.transpose();
    }
    return X;
}

}  // namespace rtsub::sim

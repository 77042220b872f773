#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rtsub {

// Standard normal distribution function, accurate to ~1e-15 absolute.
double std_normal_cdf(double x);

// Upper tail 1 - Phi(x) without cancellation for large x.
double std_normal_sf(double x);

double std_normal_pdf(double x);

// Inverse of std_normal_cdf on (0,1). Throws std::domain_error at 0 or 1
// (infinite quantile) and std::invalid_argument outside [0,1].
double std_normal_quantile(double p);

// Empirical distribution function of a finite sample. Sorted once on
// construction; evaluation is a binary search.
class EmpiricalCDF {
public:
    EmpiricalCDF() = default;
    explicit EmpiricalCDF(std::vector<double> values);

    // (#values <= x) / size
    double operator()(double x) const;

    // inf{x : F(x) >= 1 - alpha}; always one of the stored values.
    double upper_quantile(double alpha) const;

    std::size_t size() const { return sorted_.size(); }
    bool empty() const { return sorted_.empty(); }
    std::span<const double> sorted_values() const { return sorted_; }

private:
    std::vector<double> sorted_;
};

double ecdf_eval(const EmpiricalCDF& F, double x);
double ecdf_upper_quantile(const EmpiricalCDF& F, double alpha);

// Known asymptotic null marginal F0 of a single statistic.
enum class NullMarginal { Uniform01, StdNormal };

double null_cdf(NullMarginal F0, double x);
double null_quantile(NullMarginal F0, double p);
std::string to_string(NullMarginal F0);

// Row-major B x L matrix of statistics.
class StatMatrix {
public:
    StatMatrix() = default;
    StatMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t b, std::size_t l) { return data_[b * cols_ + l]; }
    double operator()(std::size_t b, std::size_t l) const { return data_[b * cols_ + l]; }

    std::span<double> row(std::size_t b) { return {data_.data() + b * cols_, cols_}; }
    std::span<const double> row(std::size_t b) const { return {data_.data() + b * cols_, cols_}; }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Midranks (1-based) of every entry of the pooled sample; ties share the
// average of the positions they occupy.
std::vector<double> midranks(std::span<const double> values);

// Replaces every entry by F0^{-1}((rank - 1/2) / (B L)), ranks taken over
// the whole matrix. Throws std::invalid_argument on non-finite entries.
StatMatrix rank_transform(const StatMatrix& H, NullMarginal F0);

struct Moments {
    double mean;
    double variance;
};

// Mean and unbiased variance; requires at least two values.
Moments sample_moments(std::span<const double> x);

// Unbiased covariance of the rows of X (n x p); requires n >= 2.
Eigen::MatrixXd sample_covariance_matrix(const Eigen::MatrixXd& X);

}  // namespace rtsub

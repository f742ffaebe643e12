#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace funreg {

using Eigen::Index;
using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// `n` evenly spaced points on [lo, hi], endpoints included.
VectorXd linspace(double lo, double hi, Index n);

/// `n` points evenly spaced in log10 between 10^lo_exp and 10^hi_exp.
std::vector<double> logspace(double lo_exp, double hi_exp, int n);

/// Trapezoidal quadrature weights for a strictly increasing grid.
/// The weights sum to grid.back() - grid.front(); a single point gets weight 1.
VectorXd trapezoid_weights(const VectorXd& grid);

/// Trapezoidal integral of `values` sampled on `grid`.
double trapezoid(const VectorXd& grid, const VectorXd& values);

/// Piecewise-linear interpolation of (grid, values) at `x`.
/// Throws DomainError when `x` falls outside [grid.front(), grid.back()].
double interpolate(const VectorXd& grid, const VectorXd& values, double x);

/// Interpolation matrix R with R * values == interpolated values at `points`.
MatrixXd interpolation_matrix(const VectorXd& grid, const VectorXd& points);

/// Type-7 (linear interpolation) empirical quantile of `values` at probability p.
double quantile_type7(std::vector<double> values, double p);

/// Sample standard deviation with denominator n - 1 (0 for n < 2).
double sample_sd(std::span<const double> values);

/// Standard normal quantile.
double normal_quantile(double p);

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
double two_sided_t_pvalue(double t, double df);

/// Upper-tail probability of a chi-square variate.
double chi_square_upper(double x, double df);

bool is_strictly_increasing(std::span<const double> values);

inline VectorXd to_vector(std::span<const double> values) {
    return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}

inline std::vector<double> to_std(const VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

}  // namespace funreg

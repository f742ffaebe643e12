#include "funreg/numerics.hpp"

#include "funreg/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace funreg {

VectorXd linspace(double lo, double hi, Index n) {
    if (n < 1) throw InvalidArgument("linspace: n must be positive");
    if (n == 1) return VectorXd::Constant(1, lo);
    VectorXd out(n);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (Index i = 0; i < n; ++i) out[i] = lo + step * static_cast<double>(i);
    out[n - 1] = hi;
    return out;
}

std::vector<double> logspace(double lo_exp, double hi_exp, int n) {
    std::vector<double> out;
    VectorXd e = linspace(lo_exp, hi_exp, n);
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < e.size(); ++i) out.push_back(std::pow(10.0, e[i]));
    return out;
}

VectorXd trapezoid_weights(const VectorXd& grid) {
    const Index n = grid.size();
    if (n == 0) throw InvalidArgument("trapezoid_weights: empty grid");
    if (n == 1) return VectorXd::Ones(1);
    VectorXd w = VectorXd::Zero(n);
    for (Index i = 0; i + 1 < n; ++i) {
        const double h = grid[i + 1] - grid[i];
        if (!(h > 0)) throw InvalidArgument("trapezoid_weights: grid must be strictly increasing");
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

double trapezoid(const VectorXd& grid, const VectorXd& values) {
    if (grid.size() != values.size()) throw InvalidArgument("trapezoid: length mismatch");
    if (grid.size() < 2) return 0.0;
    return trapezoid_weights(grid).dot(values);
}

namespace {

// Index i with grid[i] <= x <= grid[i+1].
Index bracket(const VectorXd& grid, double x) {
    const Index n = grid.size();
    const double tol = 1e-10 * std::max(1.0, std::abs(grid[n - 1] - grid[0]));
    if (x < grid[0] - tol || x > grid[n - 1] + tol) {
        std::ostringstream msg;
        msg << "interpolation point " << x << " outside grid [" << grid[0] << ", " << grid[n - 1] << "]";
        throw DomainError(msg.str());
    }
    if (n == 1) return 0;
    auto it = std::upper_bound(grid.data(), grid.data() + n, x);
    Index i = static_cast<Index>(it - grid.data()) - 1;
    return std::clamp<Index>(i, 0, n - 2);
}

}  // namespace

double interpolate(const VectorXd& grid, const VectorXd& values, double x) {
    if (grid.size() == 0 || grid.size() != values.size()) throw InvalidArgument("interpolate: bad grid");
    const Index i = bracket(grid, x);
    if (grid.size() == 1) return values[0];
    const double h = grid[i + 1] - grid[i];
    double a = std::clamp((x - grid[i]) / h, 0.0, 1.0);
    if (a == 0.0) return values[i];
    if (a == 1.0) return values[i + 1];
    return (1.0 - a) * values[i] + a * values[i + 1];
}

MatrixXd interpolation_matrix(const VectorXd& grid, const VectorXd& points) {
    MatrixXd r = MatrixXd::Zero(points.size(), grid.size());
    for (Index p = 0; p < points.size(); ++p) {
        const Index i = bracket(grid, points[p]);
        if (grid.size() == 1) {
            r(p, 0) = 1.0;
            continue;
        }
        const double h = grid[i + 1] - grid[i];
        const double a = std::clamp((points[p] - grid[i]) / h, 0.0, 1.0);
        r(p, i) += 1.0 - a;
        r(p, i + 1) += a;
    }
    return r;
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw InvalidArgument("quantile of empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile probability outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double sample_sd(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(n - 1));
}

double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double two_sided_t_pvalue(double t, double df) {
    if (std::isnan(t)) return 1.0;
    if (std::isinf(t)) return 0.0;
    if (!(df > 0)) return 1.0;
    boost::math::students_t_distribution<double> dist(df);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

double chi_square_upper(double x, double df) {
    boost::math::chi_squared_distribution<double> dist(df);
    return boost::math::cdf(boost::math::complement(dist, std::max(0.0, x)));
}

bool is_strictly_increasing(std::span<const double> values) {
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (!(values[i] > values[i - 1])) return false;
    }
    return true;
}

}  // namespace funreg

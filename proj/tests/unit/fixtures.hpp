#pragma once

#include "funreg/fpca.hpp"
#include "funreg/numerics.hpp"
#include "funreg/rng.hpp"
#include "funreg/sample.hpp"

#include <functional>
#include <random>
#include <string>

namespace fixture {

using namespace funreg;

inline FunctionalSample make_sample(const std::string& id, std::vector<double> times, std::vector<double> values,
                                    std::map<std::string, double> covariates = {}, std::string arm = "control") {
    FunctionalSample s;
    s.subject_id = id;
    s.times = std::move(times);
    s.values = std::move(values);
    s.covariates = std::move(covariates);
    s.arm = std::move(arm);
    s.stratum = "s";
    return s;
}

/// FPCA result with a single constant eigenfunction on `grid`.
inline FpcaResult constant_fpca(const VectorXd& grid, double eigenvalue, double noise) {
    FpcaResult f;
    f.grid = grid;
    f.quadrature_weights = trapezoid_weights(grid);
    f.mean = VectorXd::Zero(grid.size());
    f.eigenfunctions = VectorXd::Constant(grid.size(), 1.0 / std::sqrt(grid.size() > 1 ? grid.tail(1)[0] - grid[0] : 1.0));
    f.eigenvalues = VectorXd::Constant(1, eigenvalue);
    f.noise_variance = noise;
    f.pve = VectorXd::Ones(1);
    return f;
}

/// Subject i has covariate x = +-1 (alternating), value
/// f0(t) + x f1(t) + a_i + noise at each grid point kept with probability keep.
inline std::vector<FunctionalSample> varying_data(int n, const VectorXd& grid, const std::function<double(double)>& f0,
                                                  const std::function<double(double)>& f1, double subject_sd,
                                                  double noise_sd, double keep, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    std::vector<FunctionalSample> out;
    for (int i = 0; i < n; ++i) {
        const double x = i % 2 == 0 ? 1.0 : -1.0;
        const double a = subject_sd * z(rng);
        FunctionalSample s;
        s.subject_id = "s" + std::to_string(1000 + i);
        s.covariates["x"] = x;
        s.arm = x > 0 ? "treat" : "control";
        s.stratum = "s";
        for (Index j = 0; j < grid.size(); ++j) {
            const double e = noise_sd * z(rng);
            if (u(rng) > keep) continue;
            s.times.push_back(grid[j]);
            s.values.push_back(f0(grid[j]) + x * f1(grid[j]) + a + e);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace fixture

namespace fixture {

/// n curves xi_i sqrt(2) sin(2 pi t) + noise on 50 points in [0, 1], with
/// xi ~ N(0, 4), noise variance 0.25 and entries deleted with probability `missing`.
inline std::vector<FunctionalSample> sine_component_data(int n, double missing, std::uint64_t seed,
                                                         std::vector<std::vector<double>>* complete = nullptr) {
    const VectorXd grid = linspace(0.0, 1.0, 50);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u;
    std::vector<FunctionalSample> out(static_cast<std::size_t>(n));
    if (complete) complete->assign(static_cast<std::size_t>(n), std::vector<double>(50));
    for (int i = 0; i < n; ++i) {
        auto& s = out[static_cast<std::size_t>(i)];
        s.subject_id = std::to_string(i);
        const double xi = 2.0 * z(rng);
        for (Index j = 0; j < 50; ++j) {
            const double v = xi * std::sqrt(2.0) * std::sin(2.0 * M_PI * grid[j]) + 0.5 * z(rng);
            if (complete) (*complete)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
            if (u(rng) < missing) continue;
            s.times.push_back(grid[j]);
            s.values.push_back(v);
        }
    }
    return out;
}

struct SineCheck {
    bool pass = false;
    double orthonormality_error = 0.0;
};

/// Tolerance bands for one fit of sine_component_data, widened by `widen`.
inline SineCheck check_sine_fit(const FpcaResult& f, double widen) {
    SineCheck c;
    const MatrixXd G = f.eigenfunctions.transpose() * f.quadrature_weights.asDiagonal() * f.eigenfunctions;
    c.orthonormality_error = (G - MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
    if (f.num_components() != 1) return c;
    const VectorXd phi = (std::sqrt(2.0) * (2.0 * M_PI * f.grid.array()).sin()).matrix();
    const VectorXd d = f.eigenfunctions.col(0) - phi;
    const double err = f.quadrature_weights.dot(d.cwiseAbs2());
    c.pass = std::abs(f.eigenvalues[0] - 4.0) <= 0.6 * widen && err <= 0.05 * widen &&
             std::abs(f.noise_variance - 0.25) <= 0.05 * widen;
    return c;
}

}  // namespace fixture

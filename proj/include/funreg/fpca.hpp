#pragma once

#include "funreg/penalized.hpp"
#include "funreg/sample.hpp"

#include "json.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace funreg {

struct FpcaConfig {
    double pve_threshold = 0.95;
    int num_components = 0;   // > 0 overrides the PVE rule
    int mean_num_basis = 0;   // 0: min(|grid|, 20)
    int cov_num_basis = 0;    // 0: min(|grid|, 12)
    int degree = 3;
    int penalty_order = 2;
    LambdaSearch smoothing = LambdaSearch::defaults();
};

/// Karhunen-Loeve decomposition estimated on a grid.
struct FpcaResult {
    std::vector<std::string> subject_ids;  // row order of `scores`
    VectorXd grid;
    VectorXd quadrature_weights;  // trapezoid weights on grid
    VectorXd mean;
    MatrixXd eigenfunctions;      // |grid| x K, orthonormal under quadrature_weights
    VectorXd eigenvalues;         // non-increasing, positive
    MatrixXd scores;              // n x K
    double noise_variance = 0.0;
    VectorXd pve;                 // cumulative, length K
    bool degenerate = false;      // covariance vanished; single constant component reported

    int num_components() const { return static_cast<int>(eigenvalues.size()); }

    /// Row index of a subject in `scores`; throws InputError when absent.
    Index subject_index(const std::string& id) const;
};

/// Union of observed times rounded to integers (weeks).
VectorXd default_grid(std::span<const FunctionalSample> samples);

FpcaResult fit_fpca(std::span<const FunctionalSample> samples, const VectorXd& grid, const FpcaConfig& config = {});

/// Conditional-expectation scores for arbitrary subjects under a fitted model.
MatrixXd predict_scores(const FpcaResult& fit, std::span<const FunctionalSample> samples);

/// Fills unobserved grid points with mu + sum_k xi_k phi_k; observed values
/// pass through unchanged.
MatrixXd impute_curves(const FpcaResult& fit, std::span<const FunctionalSample> samples, const VectorXd& grid);

/// Flips phi so that its integral under weights w is positive; when the
/// integral is small relative to the integral of |phi|, the first nonzero
/// value scanning outward from the middle grid point decides.
void apply_sign_convention(VectorXd& phi, const VectorXd& w);

/// Keeps the first K components (scores are not recomputed).
FpcaResult truncate_components(const FpcaResult& fit, int K);

/// Eigenfunction k (column) evaluated at arbitrary points by linear interpolation.
MatrixXd eigenfunctions_at(const FpcaResult& fit, const VectorXd& points);

nlohmann::json to_json(const FpcaResult& fit);
void write_scores_csv(std::ostream& out, const FpcaResult& fit);

}  // namespace funreg

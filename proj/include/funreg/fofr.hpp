#pragma once

#include "funreg/basis.hpp"
#include "funreg/fosr.hpp"
#include "funreg/fpca.hpp"
#include "funreg/penalized.hpp"
#include "funreg/sample.hpp"

#include "json.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace funreg {

/// Completely observed functional predictor W_i(t) on a common grid.
struct FunctionalPredictor {
    std::vector<std::string> subject_ids;
    VectorXd grid;
    MatrixXd values;  // n x |grid|

    Index find(const std::string& id) const;  // -1 when absent
};

/// FPCA imputation of the predictor period onto `grid`.
FunctionalPredictor impute_predictor(const FpcaResult& fpca, std::span<const FunctionalSample> samples,
                                     const VectorXd& grid);

enum class QuadratureRule { linear_interpolant, trapezoid };
const char* to_string(QuadratureRule r);
QuadratureRule quadrature_from_string(const std::string& name);

/// Q(j, k) = integral of (hat function of grid point j) * B_k(t) over the grid
/// range, so W * Q integrates the piecewise-linear interpolant of W against
/// each basis function. The trapezoid rule uses Q(j, k) = w_j B_k(t_j).
MatrixXd integration_matrix(const VectorXd& grid, const BasisSystem& basis_t, QuadratureRule rule);

/// Per-subject integrals I_ik = int W_i(t) B_k(t) dt (n x K1).
/// Throws PreconditionError when W contains non-finite entries.
MatrixXd functional_integrals(const MatrixXd& W, const VectorXd& grid, const BasisSystem& basis_t,
                              QuadratureRule rule = QuadratureRule::linear_interpolant);

/// Tensor columns for one subject at response time u: entry k1*K2 + k2 holds
/// I_ik1 * B_k2(u).
VectorXd functional_covariate_row(const VectorXd& integrals, const BasisSystem& basis_u, double u);

struct FofrSpec {
    BasisSystem basis_t{1.0, 24.0, 8};
    BasisSystem basis_u{25.0, 36.0, 8};
    BasisSystem basis_varying{25.0, 36.0, 7};  // mu(u) and beta_m(u)
    std::vector<std::string> arms;              // surface groups; empty: every arm present, sorted
    std::string reference_arm = "control";
    bool arm_main_effects = true;               // indicators for non-reference arms as scalar terms
    std::vector<std::string> varying_covariates;
    std::vector<std::string> invariant_covariates;
    int num_random_components = 0;
    QuadratureRule quadrature = QuadratureRule::linear_interpolant;
    LambdaSearch lambda_search = LambdaSearch::defaults();
    std::optional<std::vector<double>> fixed_lambdas;  // order of FofrFit::lambda_names
    int min_obs = 4;

    void validate() const;
};

struct FofrFit {
    FofrSpec spec;
    std::vector<std::string> arms;
    std::vector<MatrixXd> surfaces;             // per arm, K1 x K2
    std::string quadrature_rule;
    VectorXd predictor_grid;
    VectorXd quadrature_weights;                // trapezoid weights, sum |T|
    std::vector<std::string> varying_terms;     // intercept then varying covariates
    MatrixXd varying_coefficients;              // L_u x (Q + 1)
    std::vector<ScalarCoefficient> scalar_coefficients;
    std::vector<std::string> lambda_names;
    VectorXd lambdas;
    std::vector<bool> lambda_at_boundary;
    bool lambdas_fixed = false;
    double criterion_value = 0.0;
    double residual_variance = 0.0;
    VectorXd subject_effect_variances;
    std::vector<std::string> edf_names;
    VectorXd effective_df;
    std::vector<std::string> subject_ids;
    std::vector<std::string> excluded_subjects;
    std::vector<std::string> warnings;
    VectorXd coefficients;
    MatrixXd coefficient_covariance;

    Index arm_index(const std::string& arm) const;  // throws LookupError
};

FofrFit fit_fofr(std::span<const FunctionalSample> follow_up, const FunctionalPredictor& predictor,
                 const FofrSpec& spec, const FpcaResult& fpca_follow_up);

/// beta_p(t_i, u_j) on the product grid (|t| x |u|).
MatrixXd evaluate_surface(const FofrFit& fit, const std::string& arm, const VectorXd& t, const VectorXd& u);

/// mu(u) or beta_m(u) on `grid`.
VectorXd predict_varying(const FofrFit& fit, const std::string& term, const VectorXd& grid);

nlohmann::json to_json(const FofrFit& fit);

}  // namespace funreg

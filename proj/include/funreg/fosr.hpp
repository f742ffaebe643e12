#pragma once

#include "funreg/basis.hpp"
#include "funreg/fpca.hpp"
#include "funreg/penalized.hpp"
#include "funreg/sample.hpp"

#include <Eigen/SparseCore>

#include "json.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace funreg {


/// Model specification for function-on-scalar regression. The intercept is
/// always a functional term and is not listed in `varying_covariates`.
struct FosrSpec {
    std::vector<std::string> varying_covariates;
    std::vector<std::string> invariant_covariates;
    BasisSystem basis{1.0, 24.0, 20};
    int num_random_components = 0;
    LambdaSearch lambda_search = LambdaSearch::defaults();
    std::optional<std::vector<double>> fixed_lambdas;  // one per functional term, intercept first
    int min_obs = 4;

    /// Names of the functional terms: intercept followed by varying covariates.
    std::vector<std::string> functional_terms() const;
    void validate() const;
};

struct DesignTerm {
    std::string name;
    Index offset = 0;
    Index size = 0;
    bool functional = false;
};

/// Long-format design: one row per observed (subject, time) pair.
struct DesignBundle {
    VectorXd response;
    VectorXd times;
    MatrixXd fixed;                        // [B(t) per functional term | invariant covariates]
    Eigen::SparseMatrix<double> random;    // column i*K + k holds phi_k(t) on subject i's rows
    std::vector<DesignTerm> terms;
    std::vector<PenaltyComponent> penalties;  // D^T D per functional term
    VectorXd random_ridge;                 // sigma2_eps / sigma2_zeta_k per component
    VectorXd random_variances;             // sigma2_zeta_k plugged in from FPCA
    double noise_variance = 0.0;           // sigma2_eps plugged in from FPCA
    int num_random_components = 0;
    std::vector<std::string> subject_ids;  // included subjects, in order
    std::vector<Index> subject_row_start;
    std::vector<Index> subject_row_count;
    std::vector<std::string> excluded_subjects;
    std::vector<std::string> warnings;

    Index num_subjects() const { return static_cast<Index>(subject_ids.size()); }
};

DesignBundle assemble_long_design(std::span<const FunctionalSample> samples, const FosrSpec& spec,
                                  const FpcaResult& fpca);

struct ScalarCoefficient {
    std::string name;
    double estimate = 0.0;
    double std_error = 0.0;
    double p_value = 1.0;
};

struct SubjectResidual {
    std::string subject_id;
    int num_observations = 0;
    double mean_with_z = 0.0;     // mean of y - X b - Z zeta
    double mean_without_z = 0.0;  // mean of y - X b
};

struct FosrFit {
    FosrSpec spec;
    std::vector<std::string> term_names;     // functional terms, intercept first
    MatrixXd functional_coefficients;        // L x (Q + 1)
    std::vector<ScalarCoefficient> scalar_coefficients;
    VectorXd lambdas;                        // per functional term
    std::vector<bool> lambda_at_boundary;
    SmoothingCriterion criterion = SmoothingCriterion::gcv;
    bool lambdas_fixed = false;
    double criterion_value = 0.0;
    VectorXd random_effect_variances;
    double residual_variance = 0.0;
    VectorXd effective_df;                   // per functional term
    MatrixXd subject_effects;                // n x K
    std::vector<std::string> subject_ids;
    std::vector<std::string> excluded_subjects;
    std::vector<SubjectResidual> residuals;
    std::vector<std::string> warnings;
    VectorXd coefficients;                   // full fixed-effect vector
    MatrixXd coefficient_covariance;         // sigma2 * (X'MX + P)^{-1}
};

FosrFit fit_fosr(std::span<const FunctionalSample> samples, const FosrSpec& spec, const FpcaResult& fpca);

/// beta_m(t) = sum_l b_lm B_l(t) on `grid`; `covariate` may be "intercept".
VectorXd predict_coefficient(const FosrFit& fit, const std::string& covariate, const VectorXd& grid);

struct FosrReport {
    std::vector<std::pair<std::string, double>> effective_df;
    std::vector<SubjectResidual> subjects;
    double sd_residual_means_with_z = 0.0;
    double sd_residual_means_without_z = 0.0;
    std::string criterion;
    std::vector<std::string> boundary_terms;
    std::vector<std::string> excluded_subjects;
    std::vector<std::string> warnings;
};

FosrReport fit_report(const FosrFit& fit);

nlohmann::json to_json(const FosrReport& report);
nlohmann::json to_json(const FosrFit& fit);
/// Long CSV (covariate, t, estimate) for every functional term.
void write_coefficients_csv(std::ostream& out, const FosrFit& fit, const VectorXd& grid);
void write_scalar_csv(std::ostream& out, const std::vector<ScalarCoefficient>& table);

}  // namespace funreg

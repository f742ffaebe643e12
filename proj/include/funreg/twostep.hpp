#pragma once

#include "funreg/fpca.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace funreg {

/// OLS of one score vector on an intercept plus the covariates.
struct ScoreRegression {
    int component = 0;                 // 1-based eigenfunction index
    std::vector<std::string> terms;    // "intercept" then covariate names
    VectorXd estimate;
    VectorXd std_error;
    VectorXd p_value;
    VectorXd adj_p_value;              // Holm within the covariate family; intercept unadjusted
    double residual_variance = 0.0;
};

struct TwoStepFit {
    std::vector<ScoreRegression> score_regressions;
    VectorXd grid;
    VectorXd induced_intercept;          // gamma_0(t)
    MatrixXd induced_coefficients;       // |grid| x M, gamma_m(t)
    std::vector<std::string> covariate_names;
    int num_components = 0;
};

/// Step-down Holm adjustment; ties keep their original order.
VectorXd holm_adjust(const VectorXd& p);

std::vector<ScoreRegression> regress_scores(const FpcaResult& fpca, const MatrixXd& covariates,
                                            const std::vector<std::string>& names);

TwoStepFit induce_functional_coefficients(const std::vector<ScoreRegression>& tables, const FpcaResult& fpca,
                                          const VectorXd& grid);

/// FPCA on `samples` followed by score regression on the named covariates.
TwoStepFit fit_twostep(std::span<const FunctionalSample> samples, const std::vector<std::string>& covariates,
                       const VectorXd& grid, const FpcaConfig& config = {});

/// Columns: eigenfunction, term, estimate, std_error, p_value, adj_p_value.
void write_score_tables_csv(std::ostream& out, const std::vector<ScoreRegression>& tables);
void write_induced_csv(std::ostream& out, const TwoStepFit& fit);

}  // namespace funreg

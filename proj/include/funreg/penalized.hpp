#pragma once

#include "funreg/numerics.hpp"

#include <string>
#include <vector>

namespace funreg {

/// Sufficient statistics of a (possibly whitened) least-squares problem:
/// A = X^T M X, c = X^T M y, yty = y^T M y over n_obs observations.
struct NormalEquations {
    MatrixXd A;
    VectorXd c;
    double yty = 0.0;
    double n_obs = 0.0;

    static NormalEquations from_design(const MatrixXd& X, const VectorXd& y);
};

/// One quadratic penalty lambda * b^T S b acting on coef[offset, offset + S.rows()).
struct PenaltyComponent {
    std::string name;
    Index offset = 0;
    MatrixXd S;
};

enum class SmoothingCriterion { gcv, reml };

const char* to_string(SmoothingCriterion c);
SmoothingCriterion criterion_from_string(const std::string& name);

struct LambdaSearch {
    std::vector<double> grid;  // log-spaced candidate values
    SmoothingCriterion criterion = SmoothingCriterion::gcv;
    int max_sweeps = 4;

    static LambdaSearch defaults();  // 50 points over 1e-6 .. 1e8, GCV
};

struct PenalizedSolution {
    VectorXd coef;
    VectorXd lambdas;         // one per component
    VectorXd hat_diagonal;    // diag((A + P)^{-1} A)
    MatrixXd inverse;         // (A + P)^{-1}
    double rss = 0.0;         // y'My - 2 b'c + b'Ab
    double edf = 0.0;         // trace((A + P)^{-1} A)
    double criterion = 0.0;   // value of the selection criterion at the solution
    std::vector<bool> at_boundary;  // selected lambda on the edge of the grid

    /// Sum of hat_diagonal over [offset, offset + size).
    double edf_range(Index offset, Index size) const { return hat_diagonal.segment(offset, size).sum(); }
};

/// Solves (A + sum_j lambda_j S_j) b = c by Cholesky. Throws NumericalError
/// with a condition-number estimate when the system is singular.
PenalizedSolution solve_penalized(const NormalEquations& ne, const std::vector<PenaltyComponent>& penalties,
                                  const VectorXd& lambdas, SmoothingCriterion criterion = SmoothingCriterion::gcv);

/// Selects one lambda per component by coordinate-wise grid search on the
/// criterion, then solves. A shared-lambda scan provides the starting point.
PenalizedSolution select_and_solve(const NormalEquations& ne, const std::vector<PenaltyComponent>& penalties,
                                   const LambdaSearch& search);

}  // namespace funreg

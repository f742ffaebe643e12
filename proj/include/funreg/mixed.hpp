#pragma once

#include "funreg/penalized.hpp"

#include <vector>

namespace funreg {

/// Subject-blocked random effects: rows [start, start + count) of the long
/// design belong to one subject, whose effect is Z_rows.block(...) * zeta_i
/// with ridge penalty sum_k ridge_k * zeta_ik^2.
struct SubjectLayout {
    std::vector<Index> start;
    std::vector<Index> count;
};

/// Profiles the random effects out of the joint penalized problem. The
/// returned normal equations use M_i = I - Z_i (Z_i'Z_i + Psi)^{-1} Z_i' per
/// subject, so minimising over the fixed effects alone reproduces the joint
/// minimiser.
NormalEquations profile_subject_effects(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z_rows,
                                        const SubjectLayout& layout, const VectorXd& ridge);

/// zeta_i = (Z_i'Z_i + Psi)^{-1} Z_i'(y_i - X_i b), one row per subject.
MatrixXd predict_subject_effects(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z_rows,
                                 const SubjectLayout& layout, const VectorXd& ridge, const VectorXd& coef);

}  // namespace funreg

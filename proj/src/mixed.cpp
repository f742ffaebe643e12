#include "funreg/mixed.hpp"

#include "funreg/errors.hpp"

#include <Eigen/Cholesky>

namespace funreg {

namespace {

Eigen::LLT<MatrixXd> subject_factor(const MatrixXd& Zi, const VectorXd& ridge) {
    MatrixXd C = Zi.transpose() * Zi;
    C.diagonal() += ridge;
    Eigen::LLT<MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) throw NumericalError("random-effect block is not positive definite");
    return llt;
}

}  // namespace

NormalEquations profile_subject_effects(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z_rows,
                                        const SubjectLayout& layout, const VectorXd& ridge) {
    const Index p = X.cols();
    const Index K = Z_rows.cols();
    NormalEquations ne;
    ne.A = MatrixXd::Zero(p, p);
    ne.c = VectorXd::Zero(p);
    ne.n_obs = static_cast<double>(y.size());
    ne.A.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    ne.A = ne.A.selfadjointView<Eigen::Lower>();
    ne.c = X.transpose() * y;
    ne.yty = y.squaredNorm();
    if (K == 0) return ne;
    for (std::size_t i = 0; i < layout.start.size(); ++i) {
        const Index s = layout.start[i];
        const Index m = layout.count[i];
        const auto Zi = Z_rows.middleRows(s, m);
        const auto llt = subject_factor(Zi, ridge);
        const MatrixXd ZX = Zi.transpose() * X.middleRows(s, m);
        const VectorXd Zy = Zi.transpose() * y.segment(s, m);
        const MatrixXd W = llt.matrixL().solve(ZX);
        const VectorXd w = llt.matrixL().solve(Zy);
        ne.A.noalias() -= W.transpose() * W;
        ne.c.noalias() -= W.transpose() * w;
        ne.yty -= w.squaredNorm();
    }
    return ne;
}

MatrixXd predict_subject_effects(const MatrixXd& X, const VectorXd& y, const MatrixXd& Z_rows,
                                 const SubjectLayout& layout, const VectorXd& ridge, const VectorXd& coef) {
    const Index K = Z_rows.cols();
    MatrixXd out = MatrixXd::Zero(static_cast<Index>(layout.start.size()), K);
    if (K == 0) return out;
    for (std::size_t i = 0; i < layout.start.size(); ++i) {
        const Index s = layout.start[i];
        const Index m = layout.count[i];
        const auto Zi = Z_rows.middleRows(s, m);
        const VectorXd r = y.segment(s, m) - X.middleRows(s, m) * coef;
        out.row(static_cast<Index>(i)) = subject_factor(Zi, ridge).solve(Zi.transpose() * r).transpose();
    }
    return out;
}

}  // namespace funreg

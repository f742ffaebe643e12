#include "funreg/penalized.hpp"

#include "funreg/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace funreg {

NormalEquations NormalEquations::from_design(const MatrixXd& X, const VectorXd& y) {
    if (X.rows() != y.size()) throw InvalidArgument("design and response have different row counts");
    NormalEquations ne;
    ne.A = X.transpose() * X;
    ne.c = X.transpose() * y;
    ne.yty = y.squaredNorm();
    ne.n_obs = static_cast<double>(y.size());
    return ne;
}

const char* to_string(SmoothingCriterion c) { return c == SmoothingCriterion::gcv ? "gcv" : "reml"; }

SmoothingCriterion criterion_from_string(const std::string& name) {
    if (name == "gcv" || name == "GCV") return SmoothingCriterion::gcv;
    if (name == "reml" || name == "REML") return SmoothingCriterion::reml;
    throw InvalidArgument("unknown smoothing criterion '" + name + "' (expected gcv or reml)");
}

LambdaSearch LambdaSearch::defaults() {
    LambdaSearch s;
    s.grid = logspace(-6.0, 8.0, 50);
    return s;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Penalty blocks: maximal sets of components with overlapping column ranges.
struct PenaltyBlock {
    Index start = 0;
    Index size = 0;
    std::vector<std::size_t> members;
    int rank = 0;
    double log_pdet_unit = 0.0;  // single-member blocks: log pdet(S)
};

// The problem after symmetric diagonal equilibration so that diag(A) ~ 1.
class ScaledProblem {
public:
    ScaledProblem(const NormalEquations& ne, const std::vector<PenaltyComponent>& penalties) {
        p_ = ne.A.rows();
        if (ne.A.cols() != p_ || ne.c.size() != p_) throw InvalidArgument("normal equations have inconsistent shapes");
        scale_ = VectorXd::Ones(p_);
        for (Index i = 0; i < p_; ++i) {
            double d = ne.A(i, i);
            if (!(d > 0)) {
                for (const auto& pc : penalties) {
                    if (i >= pc.offset && i < pc.offset + pc.S.rows()) d = std::max(d, pc.S(i - pc.offset, i - pc.offset));
                }
            }
            if (d > 0 && std::isfinite(d)) scale_[i] = 1.0 / std::sqrt(d);
        }
        A_ = scale_.asDiagonal() * ne.A * scale_.asDiagonal();
        c_ = scale_.cwiseProduct(ne.c);
        yty_ = ne.yty;
        n_ = ne.n_obs;
        for (const auto& pc : penalties) {
            if (pc.S.rows() != pc.S.cols() || pc.offset < 0 || pc.offset + pc.S.rows() > p_) {
                throw InvalidArgument("penalty component '" + pc.name + "' does not fit the coefficient vector");
            }
            const Index k = pc.S.rows();
            const VectorXd s = scale_.segment(pc.offset, k);
            S_.push_back(s.asDiagonal() * pc.S * s.asDiagonal());
            offsets_.push_back(pc.offset);
        }
        build_blocks();
        build_rotation();
    }

    Index dim() const { return p_; }
    std::size_t num_components() const { return S_.size(); }
    const VectorXd& scale() const { return scale_; }
    const MatrixXd& A() const { return A_; }
    const VectorXd& c() const { return c_; }
    double yty() const { return yty_; }
    double n() const { return n_; }
    int null_dim() const { return null_dim_; }

    MatrixXd penalty(const VectorXd& lambdas, std::size_t skip = static_cast<std::size_t>(-1)) const {
        MatrixXd P = MatrixXd::Zero(p_, p_);
        for (std::size_t j = 0; j < S_.size(); ++j) {
            if (j == skip) continue;
            const Index k = S_[j].rows();
            P.block(offsets_[j], offsets_[j], k, k) += lambdas[static_cast<Index>(j)] * S_[j];
        }
        return P;
    }

    /// Orthogonal U with U' P U diagonal within single-member blocks.
    const MatrixXd& rotation() const { return U_; }
    const MatrixXd& rotated_A() const { return Ar_; }
    const VectorXd& rotated_c() const { return cr_; }

    const MatrixXd& rotated_component(std::size_t j) const { return Sr_[j]; }

    MatrixXd rotated_penalty(const VectorXd& lambdas) const {
        MatrixXd P = MatrixXd::Zero(p_, p_);
        for (std::size_t j = 0; j < Sr_.size(); ++j) P += lambdas[static_cast<Index>(j)] * Sr_[j];
        return P;
    }

    MatrixXd component(std::size_t j) const {
        MatrixXd P = MatrixXd::Zero(p_, p_);
        const Index k = S_[j].rows();
        P.block(offsets_[j], offsets_[j], k, k) = S_[j];
        return P;
    }

    double log_pdet(const VectorXd& lambdas) const {
        double total = 0.0;
        for (const auto& b : blocks_) {
            if (b.rank == 0) continue;
            if (b.members.size() == 1) {
                total += b.rank * std::log(lambdas[static_cast<Index>(b.members[0])]) + b.log_pdet_unit;
                continue;
            }
            MatrixXd Pb = MatrixXd::Zero(b.size, b.size);
            for (auto j : b.members) {
                const Index k = S_[j].rows();
                Pb.block(offsets_[j] - b.start, offsets_[j] - b.start, k, k) += lambdas[static_cast<Index>(j)] * S_[j];
            }
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(Pb, Eigen::EigenvaluesOnly);
            const VectorXd ev = es.eigenvalues();
            for (Index i = ev.size() - b.rank; i < ev.size(); ++i) total += std::log(std::max(ev[i], 1e-300));
        }
        return total;
    }

private:
    void build_blocks() {
        std::vector<std::size_t> order(S_.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return offsets_[a] < offsets_[b]; });
        for (auto j : order) {
            const Index lo = offsets_[j];
            const Index hi = lo + S_[j].rows();
            if (!blocks_.empty() && lo < blocks_.back().start + blocks_.back().size) {
                auto& b = blocks_.back();
                b.size = std::max(b.start + b.size, hi) - b.start;
                b.members.push_back(j);
            } else {
                blocks_.push_back({lo, hi - lo, {j}, 0, 0.0});
            }
        }
        Index penalized_rank = 0;
        for (auto& b : blocks_) {
            MatrixXd Pb = MatrixXd::Zero(b.size, b.size);
            for (auto j : b.members) {
                const Index k = S_[j].rows();
                Pb.block(offsets_[j] - b.start, offsets_[j] - b.start, k, k) += S_[j];
            }
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(Pb, Eigen::EigenvaluesOnly);
            const VectorXd ev = es.eigenvalues();
            const double tol = 1e-9 * std::max(ev.maxCoeff(), 0.0);
            b.rank = 0;
            b.log_pdet_unit = 0.0;
            for (Index i = 0; i < ev.size(); ++i) {
                if (ev[i] > tol && ev[i] > 0) {
                    ++b.rank;
                    b.log_pdet_unit += std::log(ev[i]);
                }
            }
            penalized_rank += b.rank;
        }
        null_dim_ = static_cast<int>(p_ - penalized_rank);
    }

    void build_rotation() {
        U_ = MatrixXd::Identity(p_, p_);
        for (const auto& b : blocks_) {
            MatrixXd Pb = MatrixXd::Zero(b.size, b.size);
            for (auto j : b.members) {
                const Index k = S_[j].rows();
                Pb.block(offsets_[j] - b.start, offsets_[j] - b.start, k, k) += S_[j];
            }
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(Pb);
            U_.block(b.start, b.start, b.size, b.size) = es.eigenvectors();
        }
        Ar_ = U_.transpose() * A_ * U_;
        Ar_ = 0.5 * (Ar_ + Ar_.transpose());
        cr_ = U_.transpose() * c_;
        for (std::size_t j = 0; j < S_.size(); ++j) {
            MatrixXd R = U_.transpose() * component(j) * U_;
            Sr_.push_back(0.5 * (R + R.transpose()));
        }
    }

    Index p_ = 0;
    VectorXd scale_;
    MatrixXd A_;
    VectorXd c_;
    double yty_ = 0.0;
    double n_ = 0.0;
    std::vector<MatrixXd> S_;
    std::vector<Index> offsets_;
    std::vector<PenaltyBlock> blocks_;
    int null_dim_ = 0;
    MatrixXd U_;
    MatrixXd Ar_;
    VectorXd cr_;
    std::vector<MatrixXd> Sr_;
};

double gcv_score(double n, double rss, double edf) {
    const double denom = n - edf;
    if (!(denom > 1e-8 * n)) return kInf;
    return n * std::max(rss, 0.0) / (denom * denom);
}

double reml_score(double n, int null_dim, double rss, double bpb, double log_det_g, double log_pdet_p) {
    const double dof = n - static_cast<double>(null_dim);
    if (!(dof > 0)) return kInf;
    const double dp = std::max(rss + bpb, 1e-300);
    return dof * std::log(dp) + log_det_g - log_pdet_p;
}

std::string condition_diagnostic(const MatrixXd& G) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const VectorXd ev = es.eigenvalues();
    std::ostringstream msg;
    msg << "singular penalized normal equations: eigenvalue range [" << ev.minCoeff() << ", " << ev.maxCoeff()
        << "], condition number ";
    if (ev.minCoeff() > 0) {
        msg << ev.maxCoeff() / ev.minCoeff();
    } else {
        msg << "inf";
    }
    return msg.str();
}

// Cholesky with a small escalating jitter; used only for the search
// transforms, never for the reported solution.
Eigen::LLT<MatrixXd> robust_llt(const MatrixXd& M) {
    Eigen::LLT<MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) return llt;
    const double base = std::max(M.diagonal().cwiseAbs().mean(), 1e-300);
    for (double jitter = 1e-12; jitter <= 1e-6; jitter *= 100.0) {
        llt.compute(M + jitter * base * MatrixXd::Identity(M.rows(), M.cols()));
        if (llt.info() == Eigen::Success) return llt;
    }
    throw NumericalError(condition_diagnostic(M));
}

// Scans lambda_j over the grid with every other lambda held fixed, using a
// simultaneous diagonalisation so each candidate costs O(p^2).
std::size_t scan_component(const ScaledProblem& prob, const MatrixXd& base, const MatrixXd& S_j,
                           const MatrixXd& P_rest, const VectorXd& lambdas, std::size_t j,
                           const LambdaSearch& search, double* best_value) {
    const Index p = prob.dim();
    auto llt = robust_llt(base + S_j);
    const MatrixXd L = llt.matrixL();
    MatrixXd X = L.triangularView<Eigen::Lower>().solve(S_j);
    MatrixXd E = L.triangularView<Eigen::Lower>().solve(X.transpose());
    E = 0.5 * (E + E.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(E);
    const VectorXd e = es.eigenvalues().cwiseMax(0.0).cwiseMin(1.0);
    // T = L^{-T} U
    const MatrixXd T = L.transpose().triangularView<Eigen::Upper>().solve(es.eigenvectors());
    const VectorXd ct = T.transpose() * prob.c();
    const bool has_rest = !P_rest.isZero(0.0);
    const MatrixXd H = has_rest ? MatrixXd(T.transpose() * P_rest * T) : MatrixXd::Zero(p, p);
    const VectorXd Hd = H.diagonal();
    const double log_det_base = 2.0 * L.diagonal().array().log().sum();

    VectorXd trial = lambdas;
    std::size_t best = 0;
    double best_score = kInf;
    VectorXd d(p), g(p);
    for (std::size_t k = 0; k < search.grid.size(); ++k) {
        const double lam = search.grid[k];
        d = (1.0 + (lam - 1.0) * e.array()).matrix();
        g = ct.cwiseQuotient(d);
        const double bc = ct.dot(g);
        const double gHg = has_rest ? g.dot(H * g) : 0.0;
        const double bAb = ((1.0 - e.array()) * g.array().square()).sum() - gHg;
        const double rss = prob.yty() - 2.0 * bc + bAb;
        double score = kInf;
        if (search.criterion == SmoothingCriterion::gcv) {
            const double edf = ((1.0 - e.array() - Hd.array()) / d.array()).sum();
            score = gcv_score(prob.n(), rss, edf);
        } else {
            const double bpb = gHg + lam * (e.array() * g.array().square()).sum();
            const double log_det_g = log_det_base + d.array().log().sum();
            trial[static_cast<Index>(j)] = lam;
            score = reml_score(prob.n(), prob.null_dim(), rss, bpb, log_det_g, prob.log_pdet(trial));
        }
        if (score < best_score) {
            best_score = score;
            best = k;
        }
    }
    if (best_value) *best_value = best_score;
    return best;
}

// Solves in the penalty eigenbasis after equilibrating A + P by its own
// diagonal, so very large lambdas leave the null-space part well conditioned.
PenalizedSolution solve_scaled(const ScaledProblem& prob, const VectorXd& lambdas, SmoothingCriterion criterion) {
    const Index p = prob.dim();
    const MatrixXd& U = prob.rotation();
    const MatrixXd Pr = prob.rotated_penalty(lambdas);
    const MatrixXd Gr = prob.rotated_A() + Pr;
    // coordinates no active component penalises must be identified by the design
    VectorXd pd = VectorXd::Zero(p);
    for (std::size_t j = 0; j < prob.num_components(); ++j) {
        if (lambdas[static_cast<Index>(j)] > 0) pd += prob.rotated_component(j).diagonal().cwiseAbs();
    }
    const double ptol = 1e-9 * (pd.size() ? pd.maxCoeff() : 0.0);
    std::vector<Index> free;
    for (Index i = 0; i < p; ++i) {
        if (!(pd[i] > ptol)) free.push_back(i);
    }
    if (!free.empty()) {
        MatrixXd N(static_cast<Index>(free.size()), static_cast<Index>(free.size()));
        for (std::size_t a = 0; a < free.size(); ++a) {
            for (std::size_t b = 0; b < free.size(); ++b) N(static_cast<Index>(a), static_cast<Index>(b)) = prob.rotated_A()(free[a], free[b]);
        }
        Eigen::LLT<MatrixXd> nllt(N);
        if (nllt.info() != Eigen::Success || !(nllt.rcond() > 1e-13)) throw NumericalError(condition_diagnostic(Gr));
    }
    const VectorXd gd = Gr.diagonal();
    if (!(gd.minCoeff() > 0)) throw NumericalError(condition_diagnostic(Gr));
    const VectorXd D = gd.cwiseSqrt().cwiseInverse();
    const MatrixXd Gs = D.asDiagonal() * Gr * D.asDiagonal();
    Eigen::LLT<MatrixXd> llt(Gs);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) throw NumericalError(condition_diagnostic(Gr));
    const VectorXd beta = D.cwiseProduct(llt.solve(D.cwiseProduct(prob.rotated_c())));
    const VectorXd b = U * beta;
    const MatrixXd W = U * D.asDiagonal();
    const MatrixXd Ginv = W * llt.solve(W.transpose());
    const MatrixXd P = prob.penalty(lambdas);

    PenalizedSolution sol;
    sol.lambdas = lambdas;
    sol.coef = prob.scale().cwiseProduct(b);
    sol.hat_diagonal = (Ginv.array() * prob.A().array()).rowwise().sum().matrix();
    sol.edf = sol.hat_diagonal.sum();
    sol.rss = std::max(0.0, prob.yty() - 2.0 * b.dot(prob.c()) + b.dot(prob.A() * b));
    sol.inverse = prob.scale().asDiagonal() * Ginv * prob.scale().asDiagonal();
    if (criterion == SmoothingCriterion::gcv) {
        sol.criterion = gcv_score(prob.n(), sol.rss, sol.edf);
    } else {
        const MatrixXd L = llt.matrixL();
        const double log_det_g = 2.0 * L.diagonal().array().log().sum() - 2.0 * D.array().log().sum();
        sol.criterion = reml_score(prob.n(), prob.null_dim(), sol.rss, b.dot(P * b), log_det_g, prob.log_pdet(lambdas));
    }
    sol.at_boundary.assign(static_cast<std::size_t>(lambdas.size()), false);
    if (!sol.coef.allFinite()) throw NumericalError("penalized solution is not finite");
    return sol;
}

}  // namespace

PenalizedSolution solve_penalized(const NormalEquations& ne, const std::vector<PenaltyComponent>& penalties,
                                  const VectorXd& lambdas, SmoothingCriterion criterion) {
    if (lambdas.size() != static_cast<Index>(penalties.size())) {
        throw InvalidArgument("solve_penalized: expected one lambda per penalty component");
    }
    for (Index j = 0; j < lambdas.size(); ++j) {
        if (!(lambdas[j] >= 0) || !std::isfinite(lambdas[j])) throw InvalidArgument("smoothing parameters must be finite and >= 0");
    }
    ScaledProblem prob(ne, penalties);
    return solve_scaled(prob, lambdas, criterion);
}

PenalizedSolution select_and_solve(const NormalEquations& ne, const std::vector<PenaltyComponent>& penalties,
                                   const LambdaSearch& search) {
    if (search.grid.empty()) throw InvalidArgument("lambda_grid must not be empty");
    for (double v : search.grid) {
        if (!(v > 0) || !std::isfinite(v)) throw InvalidArgument("lambda_grid entries must be positive and finite");
    }
    ScaledProblem prob(ne, penalties);
    const std::size_t m = prob.num_components();
    if (m == 0) return solve_scaled(prob, VectorXd(0), search.criterion);

    // Shared-lambda start: all components move together.
    MatrixXd S_all = MatrixXd::Zero(prob.dim(), prob.dim());
    for (std::size_t j = 0; j < m; ++j) S_all += prob.component(j);
    std::vector<std::size_t> index(m, 0);
    VectorXd lambdas(static_cast<Index>(m));
    {
        const MatrixXd zero = MatrixXd::Zero(prob.dim(), prob.dim());
        LambdaSearch shared = search;
        if (search.criterion == SmoothingCriterion::reml) {
            // The REML scan needs per-component lambdas to evaluate log|P|+;
            // a shared scan is done directly.
            double best = kInf;
            std::size_t best_k = 0;
            for (std::size_t k = 0; k < search.grid.size(); ++k) {
                VectorXd lam = VectorXd::Constant(static_cast<Index>(m), search.grid[k]);
                double score = kInf;
                try {
                    score = solve_scaled(prob, lam, search.criterion).criterion;
                } catch (const NumericalError&) {
                }
                if (score < best) {
                    best = score;
                    best_k = k;
                }
            }
            std::fill(index.begin(), index.end(), best_k);
        } else {
            const std::size_t k = scan_component(prob, prob.A(), S_all, zero, VectorXd::Zero(static_cast<Index>(m)), 0,
                                                 shared, nullptr);
            std::fill(index.begin(), index.end(), k);
        }
    }
    for (std::size_t j = 0; j < m; ++j) lambdas[static_cast<Index>(j)] = search.grid[index[j]];

    if (m > 1) {
        for (int sweep = 0; sweep < search.max_sweeps; ++sweep) {
            bool changed = false;
            for (std::size_t j = 0; j < m; ++j) {
                const MatrixXd P_rest = prob.penalty(lambdas, j);
                const std::size_t k = scan_component(prob, prob.A() + P_rest, prob.component(j), P_rest, lambdas, j,
                                                     search, nullptr);
                if (k != index[j]) {
                    index[j] = k;
                    lambdas[static_cast<Index>(j)] = search.grid[k];
                    changed = true;
                }
            }
            if (!changed) break;
        }
    }

    PenalizedSolution sol = solve_scaled(prob, lambdas, search.criterion);
    for (std::size_t j = 0; j < m; ++j) {
        sol.at_boundary[j] = search.grid.size() > 1 && (index[j] == 0 || index[j] + 1 == search.grid.size());
    }
    return sol;
}

}  // namespace funreg

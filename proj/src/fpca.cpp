#include "funreg/fpca.hpp"

#include "funreg/basis.hpp"
#include "funreg/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>

namespace funreg {

Index FpcaResult::subject_index(const std::string& id) const {
    auto it = std::find(subject_ids.begin(), subject_ids.end(), id);
    if (it == subject_ids.end()) throw InputError("subject '" + id + "' is not part of the FPCA fit");
    return static_cast<Index>(it - subject_ids.begin());
}

VectorXd default_grid(std::span<const FunctionalSample> samples) {
    std::set<double> weeks;
    for (const auto& s : samples) {
        for (double t : s.times) weeks.insert(std::round(t));
    }
    if (weeks.empty()) throw InputError("cannot build a grid: no observations");
    VectorXd grid(static_cast<Index>(weeks.size()));
    Index i = 0;
    for (double w : weeks) grid[i++] = w;
    return grid;
}

namespace {

struct GridObservations {
    std::vector<std::vector<std::pair<Index, double>>> by_subject;  // (grid index, value)
};

Index nearest_index(const VectorXd& grid, double t) {
    auto it = std::lower_bound(grid.data(), grid.data() + grid.size(), t);
    Index hi = static_cast<Index>(it - grid.data());
    if (hi == 0) return 0;
    if (hi == grid.size()) return grid.size() - 1;
    return (t - grid[hi - 1] <= grid[hi] - t) ? hi - 1 : hi;
}

// Snaps every observation inside the grid range to its nearest grid point;
// repeated hits on one point are averaged.
GridObservations snap_to_grid(std::span<const FunctionalSample> samples, const VectorXd& grid) {
    const double span = grid[grid.size() - 1] - grid[0];
    const double tol = 1e-9 * std::max(1.0, std::abs(span));
    GridObservations obs;
    obs.by_subject.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        validate_sample(s);
        std::map<Index, std::pair<double, int>> acc;
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            const double t = s.times[j];
            if (t < grid[0] - tol || t > grid[grid.size() - 1] + tol) continue;
            auto& slot = acc[nearest_index(grid, t)];
            slot.first += s.values[j];
            slot.second += 1;
        }
        if (acc.empty()) throw InputError("subject '" + s.subject_id + "' has no observations on the FPCA grid");
        for (const auto& [g, sv] : acc) obs.by_subject[i].emplace_back(g, sv.first / sv.second);
    }
    return obs;
}

int auto_basis(int requested, Index grid_size, int cap) {
    if (requested > 0) return requested;
    return static_cast<int>(std::min<Index>(grid_size, cap));
}

BasisSystem smoothing_basis(const VectorXd& grid, int num_basis, const FpcaConfig& config) {
    num_basis = std::max(num_basis, 2);
    const int degree = std::min(config.degree, num_basis - 1);
    const int order = std::min(config.penalty_order, num_basis - 1);
    return BasisSystem(grid[0], grid[grid.size() - 1], num_basis, degree, order);
}

// Basis rows with the indices of their non-zero entries.
struct SparseRows {
    std::vector<std::vector<std::pair<Index, double>>> rows;
};

SparseRows sparse_basis(const BasisSystem& basis, const VectorXd& grid) {
    SparseRows out;
    out.rows.resize(static_cast<std::size_t>(grid.size()));
    for (Index g = 0; g < grid.size(); ++g) {
        const VectorXd b = basis.evaluate(grid[g]);
        for (Index l = 0; l < b.size(); ++l) {
            if (b[l] != 0.0) out.rows[static_cast<std::size_t>(g)].emplace_back(l, b[l]);
        }
    }
    return out;
}

VectorXd smooth_mean(const VectorXd& grid, const VectorXd& means, const VectorXd& counts, const FpcaConfig& config) {
    const BasisSystem basis = smoothing_basis(grid, auto_basis(config.mean_num_basis, grid.size(), 20), config);
    const MatrixXd B = evaluate_basis(basis, grid);
    NormalEquations ne;
    ne.A = MatrixXd::Zero(basis.num_basis(), basis.num_basis());
    ne.c = VectorXd::Zero(basis.num_basis());
    for (Index g = 0; g < grid.size(); ++g) {
        if (counts[g] <= 0) continue;
        const VectorXd b = B.row(g).transpose();
        ne.A.noalias() += counts[g] * b * b.transpose();
        ne.c += counts[g] * means[g] * b;
        ne.yty += counts[g] * means[g] * means[g];
        ne.n_obs += 1.0;
    }
    const PenaltyMatrix D = difference_penalty(basis.num_basis(), basis.penalty_order());
    std::vector<PenaltyComponent> pen{{"mean", 0, D.gram()}};
    const PenalizedSolution sol = select_and_solve(ne, pen, config.smoothing);
    return B * sol.coef;
}

// Bivariate P-spline smooth of the off-diagonal raw covariance.
MatrixXd smooth_covariance(const VectorXd& grid, const MatrixXd& raw, const MatrixXd& counts, const FpcaConfig& config) {
    const Index G = grid.size();
    const BasisSystem basis = smoothing_basis(grid, auto_basis(config.cov_num_basis, G, 12), config);
    const Index L = basis.num_basis();
    const SparseRows rows = sparse_basis(basis, grid);
    const Index p = L * L;
    NormalEquations ne;
    ne.A = MatrixXd::Zero(p, p);
    ne.c = VectorXd::Zero(p);
    std::vector<std::pair<Index, double>> x;
    for (Index s = 0; s < G; ++s) {
        for (Index t = 0; t < G; ++t) {
            if (s == t || counts(s, t) <= 0) continue;
            const double w = counts(s, t);
            const double v = raw(s, t);
            x.clear();
            for (const auto& [ls, bs] : rows.rows[static_cast<std::size_t>(s)]) {
                for (const auto& [lt, bt] : rows.rows[static_cast<std::size_t>(t)]) x.emplace_back(ls * L + lt, bs * bt);
            }
            for (const auto& [i, xi] : x) {
                ne.c[i] += w * v * xi;
                for (const auto& [j, xj] : x) ne.A(i, j) += w * xi * xj;
            }
            ne.yty += w * v * v;
            ne.n_obs += 1.0;
        }
    }
    if (ne.n_obs == 0) {
        throw InputError("covariance is not estimable: no subject has two or more observed grid points");
    }
    const MatrixXd DtD = difference_penalty(static_cast<int>(L), basis.penalty_order()).gram();
    const MatrixXd I = MatrixXd::Identity(L, L);
    MatrixXd S = MatrixXd::Zero(p, p);
    for (Index a = 0; a < L; ++a) {
        for (Index b = 0; b < L; ++b) {
            S.block(a * L, b * L, L, L) += DtD(a, b) * I;
            S.block(a * L, b * L, L, L) += I(a, b) * DtD;
        }
    }
    std::vector<PenaltyComponent> pen{{"covariance", 0, S}};
    const PenalizedSolution sol = select_and_solve(ne, pen, config.smoothing);
    const MatrixXd theta = Eigen::Map<const MatrixXd>(sol.coef.data(), L, L).transpose();  // row-major (k_s, k_t)
    const MatrixXd B = evaluate_basis(basis, grid);
    MatrixXd C = B * theta * B.transpose();
    return 0.5 * (C + C.transpose());
}

// |integral| below this fraction of the integral of |phi| counts as a tie.
constexpr double kSignTieTolerance = 0.1;

}  // namespace

void apply_sign_convention(VectorXd& phi, const VectorXd& w) {
    const double integral = w.dot(phi);
    const double scale = w.dot(phi.cwiseAbs());
    double sign = 0.0;
    if (std::abs(integral) > kSignTieTolerance * scale) {
        sign = integral > 0 ? 1.0 : -1.0;
    } else {
        // first nonzero entry scanning outward from the middle grid point
        const Index n = phi.size();
        const Index mid = (n - 1) / 2;
        for (Index d = 0; d < n && sign == 0.0; ++d) {
            for (Index i : {mid + d, mid - d}) {
                if (i >= 0 && i < n && phi[i] != 0.0) {
                    sign = phi[i] < 0 ? -1.0 : 1.0;
                    break;
                }
            }
        }
    }
    if (sign < 0) phi = -phi;
}

namespace {

MatrixXd blup_scores(const FpcaResult& fit, const GridObservations& obs) {
    const Index K = fit.num_components();
    const Index n = static_cast<Index>(obs.by_subject.size());
    MatrixXd scores = MatrixXd::Zero(n, K);
    if (K == 0) return scores;
    const double sigma2 = fit.noise_variance;
    for (Index i = 0; i < n; ++i) {
        const auto& o = obs.by_subject[static_cast<std::size_t>(i)];
        const Index m = static_cast<Index>(o.size());
        MatrixXd Phi(m, K);
        VectorXd r(m);
        for (Index j = 0; j < m; ++j) {
            Phi.row(j) = fit.eigenfunctions.row(o[static_cast<std::size_t>(j)].first);
            r[j] = o[static_cast<std::size_t>(j)].second - fit.mean[o[static_cast<std::size_t>(j)].first];
        }
        VectorXd xi;
        bool solved = false;
        if (sigma2 > 0) {
            MatrixXd M = Phi.transpose() * Phi;
            for (Index k = 0; k < K; ++k) M(k, k) += sigma2 / fit.eigenvalues[k];
            Eigen::LLT<MatrixXd> llt(M);
            if (llt.info() == Eigen::Success) {
                xi = llt.solve(Phi.transpose() * r);
                solved = true;
            }
        }
        if (!solved) xi = Phi.completeOrthogonalDecomposition().solve(r);
        scores.row(i) = xi.transpose();
    }
    return scores;
}

}  // namespace

FpcaResult fit_fpca(std::span<const FunctionalSample> samples, const VectorXd& grid, const FpcaConfig& config) {
    if (samples.size() < 2) throw InputError("FPCA needs at least 2 subjects");
    if (grid.size() < 2 || !is_strictly_increasing(std::span<const double>(grid.data(), static_cast<std::size_t>(grid.size())))) {
        throw InvalidArgument("FPCA grid must have at least 2 strictly increasing points");
    }
    if (!(config.pve_threshold > 0 && config.pve_threshold <= 1)) throw InvalidArgument("pve_threshold must be in (0, 1]");
    const Index G = grid.size();
    const Index n = static_cast<Index>(samples.size());
    const GridObservations obs = snap_to_grid(samples, grid);

    VectorXd sums = VectorXd::Zero(G), counts = VectorXd::Zero(G);
    for (const auto& o : obs.by_subject) {
        for (const auto& [g, v] : o) {
            sums[g] += v;
            counts[g] += 1.0;
        }
    }
    VectorXd pointwise = VectorXd::Zero(G);
    for (Index g = 0; g < G; ++g) {
        if (counts[g] > 0) pointwise[g] = sums[g] / counts[g];
    }

    FpcaResult fit;
    fit.grid = grid;
    fit.quadrature_weights = trapezoid_weights(grid);
    fit.mean = smooth_mean(grid, pointwise, counts, config);
    fit.subject_ids.reserve(samples.size());
    for (const auto& s : samples) fit.subject_ids.push_back(s.subject_id);

    MatrixXd cross = MatrixXd::Zero(G, G), pair_counts = MatrixXd::Zero(G, G);
    for (const auto& o : obs.by_subject) {
        for (const auto& [gs, vs] : o) {
            const double rs = vs - fit.mean[gs];
            for (const auto& [gt, vt] : o) {
                cross(gs, gt) += rs * (vt - fit.mean[gt]);
                pair_counts(gs, gt) += 1.0;
            }
        }
    }
    MatrixXd raw = MatrixXd::Zero(G, G);
    for (Index s = 0; s < G; ++s) {
        for (Index t = 0; t < G; ++t) {
            if (pair_counts(s, t) > 0) raw(s, t) = cross(s, t) / pair_counts(s, t);
        }
    }
    const MatrixXd smoothed = smooth_covariance(grid, raw, pair_counts, config);

    double diag_gap = 0.0;
    int diag_points = 0;
    for (Index g = 0; g < G; ++g) {
        if (pair_counts(g, g) > 0) {
            diag_gap += raw(g, g) - smoothed(g, g);
            ++diag_points;
        }
    }
    fit.noise_variance = diag_points > 0 ? std::max(0.0, diag_gap / diag_points) : 0.0;

    // Integral-operator eigenproblem: W^{1/2} C W^{1/2} v = lambda v, phi = W^{-1/2} v.
    const VectorXd sqrt_w = fit.quadrature_weights.cwiseSqrt();
    const MatrixXd op = sqrt_w.asDiagonal() * smoothed * sqrt_w.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (op + op.transpose()));
    if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
        std::ostringstream msg;
        msg << "covariance eigendecomposition failed (non-finite entries: " << (!smoothed.allFinite()) << ")";
        throw NumericalError(msg.str());
    }
    // Descending order; negative eigenvalues are truncated (PSD projection).
    VectorXd evals = es.eigenvalues().reverse().cwiseMax(0.0);
    MatrixXd evecs = es.eigenvectors().rowwise().reverse();
    const double data_scale = std::max(1.0, fit.mean.cwiseAbs2().maxCoeff());
    const double abs_tol = 1e-14 * data_scale;
    const double top = evals.size() ? evals[0] : 0.0;
    const double pos_tol = std::max(abs_tol, 1e-12 * top);
    Index positive = 0;
    while (positive < evals.size() && evals[positive] > pos_tol) ++positive;
    {
        // Projected operator must be PSD up to round-off.
        const MatrixXd proj = evecs.leftCols(positive) * evals.head(positive).asDiagonal() * evecs.leftCols(positive).transpose();
        if (positive > 0) {
            Eigen::SelfAdjointEigenSolver<MatrixXd> check(proj, Eigen::EigenvaluesOnly);
            if (check.eigenvalues().minCoeff() < -1e-8 * top) {
                std::ostringstream msg;
                msg << "covariance is not positive semidefinite after projection (min eigenvalue "
                    << check.eigenvalues().minCoeff() << ")";
                throw NumericalError(msg.str());
            }
        }
    }

    if (positive == 0) {
        // Degenerate: no between-curve variation. Report one constant component.
        fit.degenerate = true;
        const double length = fit.quadrature_weights.sum();
        fit.eigenfunctions = MatrixXd::Constant(G, 1, 1.0 / std::sqrt(length));
        fit.eigenvalues = VectorXd::Zero(1);
        fit.pve = VectorXd::Ones(1);
        fit.scores = MatrixXd::Zero(n, 1);
        return fit;
    }

    const double total = evals.head(positive).sum();
    VectorXd cumulative(positive);
    double running = 0.0;
    for (Index k = 0; k < positive; ++k) {
        running += evals[k];
        cumulative[k] = running / total;
    }
    Index K = positive;
    if (config.num_components > 0) {
        K = std::min<Index>(config.num_components, positive);
    } else {
        for (Index k = 0; k < positive; ++k) {
            if (cumulative[k] >= config.pve_threshold - 1e-13) {
                K = k + 1;
                break;
            }
        }
    }

    fit.eigenvalues = evals.head(K);
    fit.pve = cumulative.head(K);
    fit.eigenfunctions.resize(G, K);
    for (Index k = 0; k < K; ++k) {
        VectorXd phi = evecs.col(k).cwiseQuotient(sqrt_w);
        apply_sign_convention(phi, fit.quadrature_weights);
        fit.eigenfunctions.col(k) = phi;
    }
    fit.scores = blup_scores(fit, obs);
    return fit;
}

MatrixXd predict_scores(const FpcaResult& fit, std::span<const FunctionalSample> samples) {
    return blup_scores(fit, snap_to_grid(samples, fit.grid));
}

MatrixXd eigenfunctions_at(const FpcaResult& fit, const VectorXd& points) {
    return interpolation_matrix(fit.grid, points) * fit.eigenfunctions;
}

MatrixXd impute_curves(const FpcaResult& fit, std::span<const FunctionalSample> samples, const VectorXd& grid) {
    const MatrixXd R = interpolation_matrix(fit.grid, grid);
    const VectorXd mu = R * fit.mean;
    const MatrixXd phi = R * fit.eigenfunctions;
    MatrixXd out(static_cast<Index>(samples.size()), grid.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const Index row = fit.subject_index(s.subject_id);
        const VectorXd fitted = mu + phi * fit.scores.row(row).transpose();
        for (Index g = 0; g < grid.size(); ++g) {
            const auto observed = s.value_at(grid[g]);
            out(static_cast<Index>(i), g) = observed ? *observed : fitted[g];
        }
    }
    return out;
}

FpcaResult truncate_components(const FpcaResult& fit, int K) {
    if (K < 0 || K > fit.num_components()) throw InvalidArgument("truncate_components: K out of range");
    FpcaResult out = fit;
    out.eigenfunctions = fit.eigenfunctions.leftCols(K);
    out.eigenvalues = fit.eigenvalues.head(K);
    out.scores = fit.scores.leftCols(K);
    out.pve = fit.pve.head(K);
    return out;
}

nlohmann::json to_json(const FpcaResult& fit) {
    nlohmann::json j;
    j["grid"] = to_std(fit.grid);
    j["mean"] = to_std(fit.mean);
    nlohmann::json efs = nlohmann::json::array();
    for (Index k = 0; k < fit.eigenfunctions.cols(); ++k) efs.push_back(to_std(fit.eigenfunctions.col(k)));
    j["eigenfunctions"] = efs;
    j["eigenvalues"] = to_std(fit.eigenvalues);
    j["pve"] = to_std(fit.pve);
    j["noise_variance"] = fit.noise_variance;
    j["num_components"] = fit.num_components();
    j["degenerate"] = fit.degenerate;
    return j;
}

void write_scores_csv(std::ostream& out, const FpcaResult& fit) {
    out << "subject_id";
    for (int k = 0; k < fit.num_components(); ++k) out << ",score_" << (k + 1);
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < fit.subject_ids.size(); ++i) {
        out << fit.subject_ids[i];
        for (int k = 0; k < fit.num_components(); ++k) out << ',' << fit.scores(static_cast<Index>(i), k);
        out << '\n';
    }
}

}  // namespace funreg

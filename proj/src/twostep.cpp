#include "funreg/twostep.hpp"

#include "funreg/errors.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace funreg {

VectorXd holm_adjust(const VectorXd& p) {
    const Index m = p.size();
    for (Index i = 0; i < m; ++i) {
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw InvalidArgument("p-value " + std::to_string(p[i]) + " outside [0, 1]");
    }
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return p[a] < p[b]; });
    VectorXd adj(m);
    double running = 0.0;
    for (Index r = 0; r < m; ++r) {
        const Index i = order[static_cast<std::size_t>(r)];
        running = std::max(running, std::min(1.0, static_cast<double>(m - r) * p[i]));
        adj[i] = running;
    }
    return adj;
}

std::vector<ScoreRegression> regress_scores(const FpcaResult& fpca, const MatrixXd& covariates,
                                            const std::vector<std::string>& names) {
    const Index n = fpca.scores.rows();
    const Index M = covariates.cols();
    if (covariates.rows() != n) {
        throw InvalidArgument("covariate rows (" + std::to_string(covariates.rows()) + ") do not match scores (" +
                              std::to_string(n) + ")");
    }
    if (static_cast<Index>(names.size()) != M) throw InvalidArgument("one name per covariate column required");
    if (n <= M + 1) throw InputError("score regression needs more subjects than parameters");

    MatrixXd X(n, M + 1);
    X.col(0).setOnes();
    X.rightCols(M) = covariates;

    Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < M + 1) {
        // Name every column taking part in a linear dependency.
        std::vector<std::string> all{kIntercept};
        all.insert(all.end(), names.begin(), names.end());
        const VectorXd norms = X.colwise().norm().transpose().cwiseMax(1e-300);
        Eigen::JacobiSVD<MatrixXd> svd(X * norms.cwiseInverse().asDiagonal(), Eigen::ComputeFullV);
        const VectorXd sv = svd.singularValues();
        std::vector<bool> involved(static_cast<std::size_t>(M + 1), false);
        for (Index c = 0; c < sv.size(); ++c) {
            if (sv[c] > 1e-10 * sv[0]) continue;
            for (Index j = 0; j <= M; ++j) {
                if (std::abs(svd.matrixV()(j, c)) > 1e-8) involved[static_cast<std::size_t>(j)] = true;
            }
        }
        for (Index c = sv.size(); c < M + 1; ++c) {
            for (Index j = 0; j <= M; ++j) {
                if (std::abs(svd.matrixV()(j, c)) > 1e-8) involved[static_cast<std::size_t>(j)] = true;
            }
        }
        std::string list;
        for (std::size_t j = 0; j < involved.size(); ++j) {
            if (!involved[j]) continue;
            if (!list.empty()) list += ", ";
            list += all[j];
        }
        throw InputError("covariate matrix is rank deficient; collinear columns: " + list);
    }
    const MatrixXd XtX_inv = (X.transpose() * X).inverse();
    const double df = static_cast<double>(n - M - 1);

    std::vector<std::string> terms{kIntercept};
    terms.insert(terms.end(), names.begin(), names.end());
    std::vector<ScoreRegression> out;
    for (int k = 0; k < fpca.num_components(); ++k) {
        ScoreRegression r;
        r.component = k + 1;
        r.terms = terms;
        const VectorXd y = fpca.scores.col(k);
        r.estimate = qr.solve(y);
        const VectorXd resid = y - X * r.estimate;
        r.residual_variance = resid.squaredNorm() / df;
        r.std_error = (r.residual_variance * XtX_inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
        r.p_value.resize(M + 1);
        for (Index j = 0; j <= M; ++j) {
            if (r.std_error[j] > 0) {
                r.p_value[j] = two_sided_t_pvalue(r.estimate[j] / r.std_error[j], df);
            } else {
                r.p_value[j] = std::abs(r.estimate[j]) > 0 ? 0.0 : 1.0;
            }
        }
        r.adj_p_value.resize(M + 1);
        r.adj_p_value[0] = r.p_value[0];
        if (M > 0) r.adj_p_value.tail(M) = holm_adjust(r.p_value.tail(M));
        out.push_back(std::move(r));
    }
    return out;
}

TwoStepFit induce_functional_coefficients(const std::vector<ScoreRegression>& tables, const FpcaResult& fpca,
                                          const VectorXd& grid) {
    const int K = fpca.num_components();
    if (static_cast<int>(tables.size()) != K) {
        throw InvalidArgument("score tables (" + std::to_string(tables.size()) + ") and FPCA components (" +
                              std::to_string(K) + ") differ");
    }
    TwoStepFit fit;
    fit.grid = grid;
    fit.num_components = K;
    fit.score_regressions = tables;
    const MatrixXd R = interpolation_matrix(fpca.grid, grid);
    const MatrixXd phi = R * fpca.eigenfunctions;
    fit.induced_intercept = R * fpca.mean;
    Index M = 0;
    if (K > 0) {
        M = tables.front().estimate.size() - 1;
        fit.covariate_names.assign(tables.front().terms.begin() + 1, tables.front().terms.end());
    }
    MatrixXd gamma(K, M);
    for (int k = 0; k < K; ++k) {
        fit.induced_intercept += tables[static_cast<std::size_t>(k)].estimate[0] * phi.col(k);
        gamma.row(k) = tables[static_cast<std::size_t>(k)].estimate.tail(M).transpose();
    }
    fit.induced_coefficients = K > 0 ? MatrixXd(phi * gamma) : MatrixXd::Zero(grid.size(), M);
    return fit;
}

TwoStepFit fit_twostep(std::span<const FunctionalSample> samples, const std::vector<std::string>& covariates,
                       const VectorXd& grid, const FpcaConfig& config) {
    const FpcaResult fpca = fit_fpca(samples, grid, config);
    const auto tables = regress_scores(fpca, covariate_matrix(samples, covariates), covariates);
    return induce_functional_coefficients(tables, fpca, grid);
}

void write_score_tables_csv(std::ostream& out, const std::vector<ScoreRegression>& tables) {
    out << "eigenfunction,term,estimate,std_error,p_value,adj_p_value\n";
    out.precision(17);
    for (const auto& t : tables) {
        for (std::size_t j = 0; j < t.terms.size(); ++j) {
            const Index i = static_cast<Index>(j);
            out << t.component << ',' << t.terms[j] << ',' << t.estimate[i] << ',' << t.std_error[i] << ','
                << t.p_value[i] << ',' << t.adj_p_value[i] << '\n';
        }
    }
}

void write_induced_csv(std::ostream& out, const TwoStepFit& fit) {
    out << "covariate,t,estimate\n";
    out.precision(17);
    for (Index g = 0; g < fit.grid.size(); ++g) out << kIntercept << ',' << fit.grid[g] << ',' << fit.induced_intercept[g] << '\n';
    for (std::size_t m = 0; m < fit.covariate_names.size(); ++m) {
        for (Index g = 0; g < fit.grid.size(); ++g) {
            out << fit.covariate_names[m] << ',' << fit.grid[g] << ','
                << fit.induced_coefficients(g, static_cast<Index>(m)) << '\n';
        }
    }
}

}  // namespace funreg

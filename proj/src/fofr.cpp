#include "funreg/fofr.hpp"

#include "funreg/errors.hpp"
#include "funreg/mixed.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

namespace funreg {

Index FunctionalPredictor::find(const std::string& id) const {
    auto it = std::find(subject_ids.begin(), subject_ids.end(), id);
    return it == subject_ids.end() ? -1 : static_cast<Index>(it - subject_ids.begin());
}

FunctionalPredictor impute_predictor(const FpcaResult& fpca, std::span<const FunctionalSample> samples,
                                     const VectorXd& grid) {
    FunctionalPredictor p;
    p.grid = grid;
    p.values = impute_curves(fpca, samples, grid);
    for (const auto& s : samples) p.subject_ids.push_back(s.subject_id);
    return p;
}

const char* to_string(QuadratureRule r) {
    return r == QuadratureRule::trapezoid ? "trapezoid" : "linear_interpolant";
}

QuadratureRule quadrature_from_string(const std::string& name) {
    if (name == "trapezoid") return QuadratureRule::trapezoid;
    if (name == "linear_interpolant") return QuadratureRule::linear_interpolant;
    throw InvalidArgument("unknown quadrature rule '" + name + "' (expected linear_interpolant or trapezoid)");
}

MatrixXd integration_matrix(const VectorXd& grid, const BasisSystem& basis_t, QuadratureRule rule) {
    const Index G = grid.size();
    const Index K = basis_t.num_basis();
    if (G == 0) throw InvalidArgument("empty predictor grid");
    if (!is_strictly_increasing({grid.data(), static_cast<std::size_t>(G)})) {
        throw InvalidArgument("predictor grid must be strictly increasing");
    }
    if (rule == QuadratureRule::trapezoid || G == 1) {
        return trapezoid_weights(grid).asDiagonal() * evaluate_basis(basis_t, grid);
    }
    using GL = boost::math::quadrature::gauss<double, 10>;
    std::vector<double> nodes, weights;
    for (std::size_t i = 0; i < GL::abscissa().size(); ++i) {
        nodes.push_back(GL::abscissa()[i]);
        weights.push_back(GL::weights()[i]);
        if (GL::abscissa()[i] != 0.0) {
            nodes.push_back(-GL::abscissa()[i]);
            weights.push_back(GL::weights()[i]);
        }
    }
    MatrixXd Q = MatrixXd::Zero(G, K);
    const VectorXd& knots = basis_t.knots();
    for (Index j = 0; j + 1 < G; ++j) {
        const double a = grid[j], b = grid[j + 1], h = b - a;
        std::vector<double> cuts{a};
        for (Index k = 0; k < knots.size(); ++k) {
            if (knots[k] > a && knots[k] < b && knots[k] != cuts.back()) cuts.push_back(knots[k]);
        }
        cuts.push_back(b);
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            const double lo = cuts[c], hi = cuts[c + 1];
            const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
            VectorXd x(static_cast<Index>(nodes.size()));
            for (std::size_t q = 0; q < nodes.size(); ++q) x[static_cast<Index>(q)] = mid + half * nodes[q];
            const MatrixXd B = evaluate_basis(basis_t, x);
            for (Index q = 0; q < x.size(); ++q) {
                const double w = half * weights[static_cast<std::size_t>(q)];
                const double right = (x[q] - a) / h;
                Q.row(j) += (w * (1.0 - right)) * B.row(q);
                Q.row(j + 1) += (w * right) * B.row(q);
            }
        }
    }
    return Q;
}

MatrixXd functional_integrals(const MatrixXd& W, const VectorXd& grid, const BasisSystem& basis_t,
                              QuadratureRule rule) {
    if (W.cols() != grid.size()) throw InvalidArgument("functional predictor columns do not match its grid");
    if (!W.allFinite()) throw PreconditionError("functional predictor has missing entries; impute before assembly");
    return W * integration_matrix(grid, basis_t, rule);
}

VectorXd functional_covariate_row(const VectorXd& integrals, const BasisSystem& basis_u, double u) {
    const VectorXd bu = basis_u.evaluate(u);
    const Index K2 = bu.size();
    VectorXd row(integrals.size() * K2);
    for (Index k1 = 0; k1 < integrals.size(); ++k1) row.segment(k1 * K2, K2) = integrals[k1] * bu;
    return row;
}

void FofrSpec::validate() const {
    if (basis_varying.domain_lo() != basis_u.domain_lo() || basis_varying.domain_hi() != basis_u.domain_hi()) {
        throw InvalidArgument("basis_varying and basis_u must share the response domain");
    }
    std::set<std::string> seen;
    for (const auto& n : varying_covariates) {
        if (n == kIntercept || !seen.insert(n).second) throw InvalidArgument("invalid or repeated covariate '" + n + "'");
    }
    for (const auto& n : invariant_covariates) {
        if (n == kIntercept || !seen.insert(n).second) {
            throw InvalidArgument("covariate '" + n + "' repeated or listed with both effect types");
        }
    }
    if (num_random_components < 0) throw InvalidArgument("num_random_components must be >= 0");
    if (min_obs < 1) throw InvalidArgument("min_obs must be >= 1");
    if (!fixed_lambdas && lambda_search.grid.empty()) throw InvalidArgument("lambda_grid must not be empty");
}

Index FofrFit::arm_index(const std::string& arm) const {
    auto it = std::find(arms.begin(), arms.end(), arm);
    if (it == arms.end()) throw LookupError("no surface for arm '" + arm + "'");
    return static_cast<Index>(it - arms.begin());
}

namespace {

MatrixXd kron(const MatrixXd& A, const MatrixXd& B) {
    MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Index i = 0; i < A.rows(); ++i) {
        for (Index j = 0; j < A.cols(); ++j) out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
    return out;
}

}  // namespace

FofrFit fit_fofr(std::span<const FunctionalSample> follow_up, const FunctionalPredictor& predictor,
                 const FofrSpec& spec, const FpcaResult& fpca_follow_up) {
    spec.validate();
    if (spec.num_random_components > fpca_follow_up.num_components()) {
        throw InvalidArgument("num_random_components exceeds the follow-up FPCA components available");
    }
    FofrFit fit;
    fit.spec = spec;

    std::vector<FunctionalSample> kept;
    std::vector<Index> predictor_rows;
    for (const auto& s : follow_up) {
        validate_sample(s);
        FunctionalSample r = restrict_to_domain(s, spec.basis_u.domain_lo(), spec.basis_u.domain_hi());
        const Index row = predictor.find(s.subject_id);
        if (row < 0) {
            fit.excluded_subjects.push_back(s.subject_id);
            fit.warnings.push_back("subject '" + s.subject_id + "' excluded: no functional predictor");
            continue;
        }
        if (static_cast<int>(r.num_observed()) < spec.min_obs) {
            fit.excluded_subjects.push_back(s.subject_id);
            fit.warnings.push_back("subject '" + s.subject_id + "' excluded: " + std::to_string(r.num_observed()) +
                                   " observations in domain, fewer than min_obs=" + std::to_string(spec.min_obs));
            continue;
        }
        kept.push_back(std::move(r));
        predictor_rows.push_back(row);
    }
    if (kept.empty()) throw InputError("no subjects remain for function-on-function regression");

    fit.arms = spec.arms;
    if (fit.arms.empty()) {
        std::set<std::string> a;
        for (const auto& s : kept) a.insert(s.arm);
        fit.arms.assign(a.begin(), a.end());
    }
    for (const auto& s : kept) {
        if (std::find(fit.arms.begin(), fit.arms.end(), s.arm) == fit.arms.end()) {
            throw InputError("subject '" + s.subject_id + "' has arm '" + s.arm + "' without a surface");
        }
    }
    std::vector<std::string> indicator_arms;
    if (spec.arm_main_effects && fit.arms.size() > 1) {
        std::string ref = spec.reference_arm;
        if (std::find(fit.arms.begin(), fit.arms.end(), ref) == fit.arms.end()) ref = fit.arms.front();
        for (const auto& a : fit.arms) {
            if (a != ref) indicator_arms.push_back(a);
        }
    }
    std::vector<std::string> scalar_names;
    for (const auto& a : indicator_arms) scalar_names.push_back("arm_" + a);
    for (const auto& n : spec.invariant_covariates) {
        if (std::find(scalar_names.begin(), scalar_names.end(), n) != scalar_names.end()) {
            throw InvalidArgument("'" + n + "' duplicates an automatic arm indicator");
        }
        scalar_names.push_back(n);
    }

    const Index Lv = spec.basis_varying.num_basis();
    const Index K1 = spec.basis_t.num_basis(), K2 = spec.basis_u.num_basis();
    const Index P = static_cast<Index>(fit.arms.size());
    fit.varying_terms = {kIntercept};
    fit.varying_terms.insert(fit.varying_terms.end(), spec.varying_covariates.begin(), spec.varying_covariates.end());
    const Index Qv = static_cast<Index>(fit.varying_terms.size());
    const Index surf0 = Qv * Lv;
    const Index scal0 = surf0 + P * K1 * K2;
    const Index F = scal0 + static_cast<Index>(scalar_names.size());

    const MatrixXd Q = integration_matrix(predictor.grid, spec.basis_t, spec.quadrature);
    if (!predictor.values.allFinite()) {
        throw PreconditionError("functional predictor has missing entries; impute before assembly");
    }
    fit.quadrature_rule = to_string(spec.quadrature);
    fit.predictor_grid = predictor.grid;
    fit.quadrature_weights = trapezoid_weights(predictor.grid);

    int K = 0;
    while (K < spec.num_random_components && fpca_follow_up.eigenvalues[K] > 0) ++K;
    VectorXd ridge(K);
    if (K > 0) {
        const VectorXd var = fpca_follow_up.eigenvalues.head(K);
        const double sigma2 = std::max(fpca_follow_up.noise_variance, 1e-10 * var.mean());
        ridge = (sigma2 / var.array()).matrix();
        fit.subject_effect_variances = var;
    } else {
        fit.subject_effect_variances = VectorXd(0);
    }

    Index rows = 0;
    for (const auto& s : kept) rows += static_cast<Index>(s.num_observed());
    MatrixXd X = MatrixXd::Zero(rows, F);
    VectorXd y(rows);
    MatrixXd Z(rows, K);
    SubjectLayout layout;
    Index r = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto& s = kept[i];
        const VectorXd integrals = Q.transpose() * predictor.values.row(predictor_rows[i]).transpose();
        const Index arm = static_cast<Index>(std::find(fit.arms.begin(), fit.arms.end(), s.arm) - fit.arms.begin());
        const VectorXd u = to_vector(s.times);
        const MatrixXd Bv = evaluate_basis(spec.basis_varying, u);
        const MatrixXd phi = K > 0 ? eigenfunctions_at(fpca_follow_up, u).leftCols(K) : MatrixXd(u.size(), 0);
        layout.start.push_back(r);
        layout.count.push_back(u.size());
        fit.subject_ids.push_back(s.subject_id);
        for (Index j = 0; j < u.size(); ++j, ++r) {
            y[r] = s.values[static_cast<std::size_t>(j)];
            X.block(r, 0, 1, Lv) = Bv.row(j);
            for (std::size_t m = 0; m < spec.varying_covariates.size(); ++m) {
                X.block(r, static_cast<Index>(m + 1) * Lv, 1, Lv) = s.covariate(spec.varying_covariates[m]) * Bv.row(j);
            }
            X.block(r, surf0 + arm * K1 * K2, 1, K1 * K2) = functional_covariate_row(integrals, spec.basis_u, u[j]).transpose();
            for (std::size_t m = 0; m < indicator_arms.size(); ++m) {
                X(r, scal0 + static_cast<Index>(m)) = s.arm == indicator_arms[m] ? 1.0 : 0.0;
            }
            for (std::size_t m = 0; m < spec.invariant_covariates.size(); ++m) {
                X(r, scal0 + static_cast<Index>(indicator_arms.size() + m)) = s.covariate(spec.invariant_covariates[m]);
            }
            if (K > 0) Z.row(r) = phi.row(j);
        }
    }

    std::vector<PenaltyComponent> penalties;
    const MatrixXd Dv = difference_penalty(static_cast<int>(Lv), spec.basis_varying.penalty_order()).gram();
    for (Index m = 0; m < Qv; ++m) penalties.push_back({fit.varying_terms[static_cast<std::size_t>(m)], m * Lv, Dv});
    const MatrixXd St = kron(difference_penalty(static_cast<int>(K1), spec.basis_t.penalty_order()).gram(),
                             MatrixXd::Identity(K2, K2));
    const MatrixXd Su = kron(MatrixXd::Identity(K1, K1),
                             difference_penalty(static_cast<int>(K2), spec.basis_u.penalty_order()).gram());
    for (Index p = 0; p < P; ++p) {
        const std::string& a = fit.arms[static_cast<std::size_t>(p)];
        penalties.push_back({a + ".t", surf0 + p * K1 * K2, St});
        penalties.push_back({a + ".u", surf0 + p * K1 * K2, Su});
    }
    for (const auto& pc : penalties) fit.lambda_names.push_back(pc.name);

    const NormalEquations ne = profile_subject_effects(X, y, Z, layout, ridge);
    PenalizedSolution sol;
    if (spec.fixed_lambdas) {
        if (spec.fixed_lambdas->size() != penalties.size()) {
            throw InvalidArgument("fixed_lambdas needs " + std::to_string(penalties.size()) + " values");
        }
        sol = solve_penalized(ne, penalties, to_vector(*spec.fixed_lambdas), spec.lambda_search.criterion);
        fit.lambdas_fixed = true;
    } else {
        sol = select_and_solve(ne, penalties, spec.lambda_search);
    }

    const double dof = std::max(ne.n_obs - sol.edf, 1.0);
    fit.coefficients = sol.coef;
    fit.lambdas = sol.lambdas;
    fit.lambda_at_boundary = sol.at_boundary;
    fit.criterion_value = sol.criterion;
    fit.residual_variance = std::max(sol.rss / dof, std::numeric_limits<double>::min());
    fit.coefficient_covariance = fit.residual_variance * sol.inverse;
    fit.varying_coefficients.resize(Lv, Qv);
    for (Index m = 0; m < Qv; ++m) fit.varying_coefficients.col(m) = sol.coef.segment(m * Lv, Lv);
    for (Index p = 0; p < P; ++p) {
        MatrixXd b(K1, K2);
        for (Index k1 = 0; k1 < K1; ++k1) b.row(k1) = sol.coef.segment(surf0 + p * K1 * K2 + k1 * K2, K2).transpose();
        fit.surfaces.push_back(b);
    }
    for (Index m = 0; m < Qv; ++m) {
        fit.edf_names.push_back(fit.varying_terms[static_cast<std::size_t>(m)]);
    }
    for (const auto& a : fit.arms) fit.edf_names.push_back(a);
    fit.effective_df.resize(Qv + P);
    for (Index m = 0; m < Qv; ++m) fit.effective_df[m] = sol.edf_range(m * Lv, Lv);
    for (Index p = 0; p < P; ++p) fit.effective_df[Qv + p] = sol.edf_range(surf0 + p * K1 * K2, K1 * K2);
    for (std::size_t m = 0; m < scalar_names.size(); ++m) {
        const Index idx = scal0 + static_cast<Index>(m);
        ScalarCoefficient c;
        c.name = scalar_names[m];
        c.estimate = sol.coef[idx];
        c.std_error = std::sqrt(std::max(fit.coefficient_covariance(idx, idx), 0.0));
        c.p_value = c.std_error > 0 ? two_sided_t_pvalue(c.estimate / c.std_error, dof) : (c.estimate == 0 ? 1.0 : 0.0);
        fit.scalar_coefficients.push_back(c);
    }
    for (std::size_t m = 0; m < penalties.size(); ++m) {
        if (!fit.lambdas_fixed && fit.lambda_at_boundary[m]) {
            fit.warnings.push_back("smoothing parameter '" + penalties[m].name + "' selected at the grid boundary");
        }
    }
    return fit;
}

MatrixXd evaluate_surface(const FofrFit& fit, const std::string& arm, const VectorXd& t, const VectorXd& u) {
    const Index p = fit.arm_index(arm);
    return evaluate_basis(fit.spec.basis_t, t) * fit.surfaces[static_cast<std::size_t>(p)] *
           evaluate_basis(fit.spec.basis_u, u).transpose();
}

VectorXd predict_varying(const FofrFit& fit, const std::string& term, const VectorXd& grid) {
    auto it = std::find(fit.varying_terms.begin(), fit.varying_terms.end(), term);
    if (it == fit.varying_terms.end()) throw LookupError("'" + term + "' is not a varying term of this fit");
    return evaluate_basis(fit.spec.basis_varying, grid) *
           fit.varying_coefficients.col(static_cast<Index>(it - fit.varying_terms.begin()));
}

nlohmann::json to_json(const FofrFit& fit) {
    nlohmann::json j;
    j["basis_t"] = fit.spec.basis_t;
    j["basis_u"] = fit.spec.basis_u;
    j["basis_varying"] = fit.spec.basis_varying;
    j["arms"] = fit.arms;
    nlohmann::json surf = nlohmann::json::object();
    for (std::size_t p = 0; p < fit.arms.size(); ++p) {
        nlohmann::json rows = nlohmann::json::array();
        for (Index k = 0; k < fit.surfaces[p].rows(); ++k) rows.push_back(to_std(fit.surfaces[p].row(k).transpose()));
        surf[fit.arms[p]] = rows;
    }
    j["surfaces"] = surf;
    j["quadrature"] = {{"rule", fit.quadrature_rule},
                       {"grid", to_std(fit.predictor_grid)},
                       {"weights", to_std(fit.quadrature_weights)}};
    nlohmann::json vc = nlohmann::json::object();
    for (std::size_t m = 0; m < fit.varying_terms.size(); ++m) {
        vc[fit.varying_terms[m]] = to_std(fit.varying_coefficients.col(static_cast<Index>(m)));
    }
    j["varying_coefficients"] = vc;
    nlohmann::json lam = nlohmann::json::object();
    for (std::size_t m = 0; m < fit.lambda_names.size(); ++m) lam[fit.lambda_names[m]] = fit.lambdas[static_cast<Index>(m)];
    j["lambdas"] = lam;
    nlohmann::json edf = nlohmann::json::object();
    for (std::size_t m = 0; m < fit.edf_names.size(); ++m) edf[fit.edf_names[m]] = fit.effective_df[static_cast<Index>(m)];
    j["effective_df"] = edf;
    nlohmann::json sc = nlohmann::json::array();
    for (const auto& c : fit.scalar_coefficients) {
        sc.push_back({{"name", c.name}, {"estimate", c.estimate}, {"std_error", c.std_error}, {"p_value", c.p_value}});
    }
    j["scalar_coefficients"] = sc;
    j["criterion"] = fit.lambdas_fixed ? "fixed" : to_string(fit.spec.lambda_search.criterion);
    j["residual_variance"] = fit.residual_variance;
    j["subject_effect_variances"] = to_std(fit.subject_effect_variances);
    j["num_subjects"] = fit.subject_ids.size();
    j["excluded_subjects"] = fit.excluded_subjects;
    j["warnings"] = fit.warnings;
    return j;
}

}  // namespace funreg

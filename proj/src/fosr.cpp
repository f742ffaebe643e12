#include "funreg/fosr.hpp"

#include "funreg/errors.hpp"
#include "funreg/mixed.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <ostream>
#include <set>

namespace funreg {

std::vector<std::string> FosrSpec::functional_terms() const {
    std::vector<std::string> out{kIntercept};
    out.insert(out.end(), varying_covariates.begin(), varying_covariates.end());
    return out;
}

void FosrSpec::validate() const {
    std::set<std::string> seen;
    for (const auto& n : varying_covariates) {
        if (n == kIntercept) throw InvalidArgument("'intercept' is implicit and cannot be listed as a covariate");
        if (!seen.insert(n).second) throw InvalidArgument("covariate '" + n + "' listed twice");
    }
    for (const auto& n : invariant_covariates) {
        if (n == kIntercept) throw InvalidArgument("'intercept' is implicit and cannot be listed as a covariate");
        if (!seen.insert(n).second) {
            throw InvalidArgument("covariate '" + n + "' cannot have both varying and invariant effects");
        }
    }
    if (num_random_components < 0) throw InvalidArgument("num_random_components must be >= 0");
    if (min_obs < 1) throw InvalidArgument("min_obs must be >= 1");
    if (fixed_lambdas) {
        if (fixed_lambdas->size() != varying_covariates.size() + 1) {
            throw InvalidArgument("fixed_lambdas needs one value per functional term (intercept first)");
        }
    } else if (lambda_search.grid.empty()) {
        throw InvalidArgument("lambda_grid must not be empty");
    }
}

namespace {

struct AssembledRows {
    DesignBundle bundle;
    MatrixXd Z_rows;
    SubjectLayout layout;
};

AssembledRows assemble(std::span<const FunctionalSample> samples, const FosrSpec& spec, const FpcaResult& fpca) {
    spec.validate();
    if (spec.num_random_components > fpca.num_components()) {
        throw InvalidArgument("num_random_components (" + std::to_string(spec.num_random_components) +
                              ") exceeds the FPCA components available (" + std::to_string(fpca.num_components()) + ")");
    }
    const BasisSystem& basis = spec.basis;
    const Index L = basis.num_basis();
    const auto terms = spec.functional_terms();
    const Index F = static_cast<Index>(terms.size()) * L + static_cast<Index>(spec.invariant_covariates.size());

    AssembledRows out;
    DesignBundle& d = out.bundle;

    // Components with zero variance carry no random effect.
    int K = 0;
    while (K < spec.num_random_components && fpca.eigenvalues[K] > 0) ++K;
    d.num_random_components = K;
    d.random_variances = fpca.eigenvalues.head(K);
    d.noise_variance = fpca.noise_variance;
    if (K > 0) {
        const double floor = 1e-10 * d.random_variances.mean();
        const double sigma2 = std::max(fpca.noise_variance, floor);
        d.random_ridge = (sigma2 / d.random_variances.array()).matrix();
    } else {
        d.random_ridge = VectorXd(0);
    }

    std::vector<const FunctionalSample*> kept;
    std::vector<FunctionalSample> restricted;
    restricted.reserve(samples.size());
    Index rows = 0;
    for (const auto& s : samples) {
        validate_sample(s);
        FunctionalSample r = restrict_to_domain(s, basis.domain_lo(), basis.domain_hi());
        if (static_cast<int>(r.num_observed()) < spec.min_obs) {
            d.excluded_subjects.push_back(s.subject_id);
            d.warnings.push_back("subject '" + s.subject_id + "' excluded: " + std::to_string(r.num_observed()) +
                                 " observations in domain, fewer than min_obs=" + std::to_string(spec.min_obs));
            continue;
        }
        rows += static_cast<Index>(r.num_observed());
        restricted.push_back(std::move(r));
    }
    if (restricted.empty()) throw InputError("no subjects remain after applying min_obs=" + std::to_string(spec.min_obs));

    d.response.resize(rows);
    d.times.resize(rows);
    d.fixed = MatrixXd::Zero(rows, F);
    out.Z_rows = MatrixXd::Zero(rows, K);
    Index r = 0;
    for (const auto& s : restricted) {
        d.subject_ids.push_back(s.subject_id);
        d.subject_row_start.push_back(r);
        d.subject_row_count.push_back(static_cast<Index>(s.num_observed()));
        VectorXd x(static_cast<Index>(spec.varying_covariates.size()));
        for (std::size_t m = 0; m < spec.varying_covariates.size(); ++m) x[static_cast<Index>(m)] = s.covariate(spec.varying_covariates[m]);
        VectorXd z(static_cast<Index>(spec.invariant_covariates.size()));
        for (std::size_t m = 0; m < spec.invariant_covariates.size(); ++m) z[static_cast<Index>(m)] = s.covariate(spec.invariant_covariates[m]);
        const VectorXd t = to_vector(s.times);
        const MatrixXd B = evaluate_basis(basis, t);
        const MatrixXd phi = K > 0 ? eigenfunctions_at(fpca, t).leftCols(K) : MatrixXd(t.size(), 0);
        for (Index j = 0; j < t.size(); ++j, ++r) {
            d.response[r] = s.values[static_cast<std::size_t>(j)];
            d.times[r] = t[j];
            d.fixed.block(r, 0, 1, L) = B.row(j);
            for (Index m = 0; m < x.size(); ++m) d.fixed.block(r, (m + 1) * L, 1, L) = x[m] * B.row(j);
            if (z.size()) d.fixed.block(r, static_cast<Index>(terms.size()) * L, 1, z.size()) = z.transpose();
            if (K > 0) out.Z_rows.row(r) = phi.row(j);
        }
    }

    for (std::size_t m = 0; m < terms.size(); ++m) {
        d.terms.push_back({terms[m], static_cast<Index>(m) * L, L, true});
    }
    for (std::size_t m = 0; m < spec.invariant_covariates.size(); ++m) {
        d.terms.push_back({spec.invariant_covariates[m], static_cast<Index>(terms.size()) * L + static_cast<Index>(m), 1, false});
    }
    const MatrixXd DtD = difference_penalty(static_cast<int>(L), basis.penalty_order()).gram();
    for (std::size_t m = 0; m < terms.size(); ++m) d.penalties.push_back({terms[m], static_cast<Index>(m) * L, DtD});

    // Sparse random-effect design, subject-major columns.
    const Index n = d.num_subjects();
    d.random.resize(rows, n * K);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(rows * K));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d.subject_row_count[static_cast<std::size_t>(i)]; ++j) {
            const Index row = d.subject_row_start[static_cast<std::size_t>(i)] + j;
            for (Index k = 0; k < K; ++k) trip.emplace_back(row, i * K + k, out.Z_rows(row, k));
        }
    }
    d.random.setFromTriplets(trip.begin(), trip.end());
    out.layout.start = d.subject_row_start;
    out.layout.count = d.subject_row_count;
    return out;
}

double sd_of(const std::vector<double>& v) { return sample_sd(v); }

}  // namespace

DesignBundle assemble_long_design(std::span<const FunctionalSample> samples, const FosrSpec& spec,
                                  const FpcaResult& fpca) {
    return assemble(samples, spec, fpca).bundle;
}

FosrFit fit_fosr(std::span<const FunctionalSample> samples, const FosrSpec& spec, const FpcaResult& fpca) {
    AssembledRows a = assemble(samples, spec, fpca);
    const DesignBundle& d = a.bundle;

    const NormalEquations ne = profile_subject_effects(d.fixed, d.response, a.Z_rows, a.layout, d.random_ridge);

    PenalizedSolution sol;
    FosrFit fit;
    fit.spec = spec;
    fit.criterion = spec.lambda_search.criterion;
    if (spec.fixed_lambdas) {
        sol = solve_penalized(ne, d.penalties, to_vector(*spec.fixed_lambdas), spec.lambda_search.criterion);
        fit.lambdas_fixed = true;
    } else {
        sol = select_and_solve(ne, d.penalties, spec.lambda_search);
    }

    const Index L = spec.basis.num_basis();
    const auto terms = spec.functional_terms();
    const Index Q1 = static_cast<Index>(terms.size());
    const double N = ne.n_obs;
    const double dof = std::max(N - sol.edf, 1.0);

    fit.term_names = terms;
    fit.coefficients = sol.coef;
    fit.functional_coefficients.resize(L, Q1);
    for (Index m = 0; m < Q1; ++m) fit.functional_coefficients.col(m) = sol.coef.segment(m * L, L);
    fit.lambdas = sol.lambdas;
    fit.lambda_at_boundary = sol.at_boundary;
    fit.criterion_value = sol.criterion;
    fit.residual_variance = std::max(sol.rss / dof, std::numeric_limits<double>::min());
    fit.coefficient_covariance = fit.residual_variance * sol.inverse;
    fit.effective_df.resize(Q1);
    for (Index m = 0; m < Q1; ++m) fit.effective_df[m] = sol.edf_range(m * L, L);
    fit.random_effect_variances = d.random_variances;
    for (std::size_t m = 0; m < spec.invariant_covariates.size(); ++m) {
        const Index idx = Q1 * L + static_cast<Index>(m);
        ScalarCoefficient c;
        c.name = spec.invariant_covariates[m];
        c.estimate = sol.coef[idx];
        c.std_error = std::sqrt(std::max(fit.coefficient_covariance(idx, idx), 0.0));
        c.p_value = c.std_error > 0 ? two_sided_t_pvalue(c.estimate / c.std_error, dof) : (c.estimate == 0 ? 1.0 : 0.0);
        fit.scalar_coefficients.push_back(c);
    }
    fit.subject_effects = predict_subject_effects(d.fixed, d.response, a.Z_rows, a.layout, d.random_ridge, sol.coef);
    fit.subject_ids = d.subject_ids;
    fit.excluded_subjects = d.excluded_subjects;
    fit.warnings = d.warnings;

    const VectorXd marginal = d.response - d.fixed * sol.coef;
    for (Index i = 0; i < d.num_subjects(); ++i) {
        const Index s = a.layout.start[static_cast<std::size_t>(i)];
        const Index m = a.layout.count[static_cast<std::size_t>(i)];
        SubjectResidual sr;
        sr.subject_id = d.subject_ids[static_cast<std::size_t>(i)];
        sr.num_observations = static_cast<int>(m);
        sr.mean_without_z = marginal.segment(s, m).mean();
        VectorXd cond = marginal.segment(s, m);
        if (a.Z_rows.cols() > 0) cond -= a.Z_rows.middleRows(s, m) * fit.subject_effects.row(i).transpose();
        sr.mean_with_z = cond.mean();
        fit.residuals.push_back(sr);
    }
    for (std::size_t m = 0; m < terms.size(); ++m) {
        if (!fit.lambdas_fixed && fit.lambda_at_boundary[m]) {
            fit.warnings.push_back("smoothing parameter for '" + terms[m] + "' selected at the grid boundary (" +
                                   std::to_string(fit.lambdas[static_cast<Index>(m)]) + ")");
        }
    }
    return fit;
}

VectorXd predict_coefficient(const FosrFit& fit, const std::string& covariate, const VectorXd& grid) {
    auto it = std::find(fit.term_names.begin(), fit.term_names.end(), covariate);
    if (it == fit.term_names.end()) {
        throw LookupError("'" + covariate + "' is not a functional term of this fit");
    }
    const Index m = static_cast<Index>(it - fit.term_names.begin());
    return evaluate_basis(fit.spec.basis, grid) * fit.functional_coefficients.col(m);
}

FosrReport fit_report(const FosrFit& fit) {
    FosrReport rep;
    for (std::size_t m = 0; m < fit.term_names.size(); ++m) {
        rep.effective_df.emplace_back(fit.term_names[m], fit.effective_df[static_cast<Index>(m)]);
        if (!fit.lambdas_fixed && m < fit.lambda_at_boundary.size() && fit.lambda_at_boundary[m]) {
            rep.boundary_terms.push_back(fit.term_names[m]);
        }
    }
    rep.subjects = fit.residuals;
    std::vector<double> with, without;
    for (const auto& r : fit.residuals) {
        with.push_back(r.mean_with_z);
        without.push_back(r.mean_without_z);
    }
    rep.sd_residual_means_with_z = sd_of(with);
    rep.sd_residual_means_without_z = sd_of(without);
    rep.criterion = fit.lambdas_fixed ? "fixed" : to_string(fit.criterion);
    rep.excluded_subjects = fit.excluded_subjects;
    rep.warnings = fit.warnings;
    return rep;
}

nlohmann::json to_json(const FosrReport& report) {
    nlohmann::json j;
    nlohmann::json edf = nlohmann::json::object();
    for (const auto& [name, v] : report.effective_df) edf[name] = v;
    j["effective_df"] = edf;
    j["sd_residual_means_with_z"] = report.sd_residual_means_with_z;
    j["sd_residual_means_without_z"] = report.sd_residual_means_without_z;
    j["criterion"] = report.criterion;
    j["boundary_terms"] = report.boundary_terms;
    j["excluded_subjects"] = report.excluded_subjects;
    j["warnings"] = report.warnings;
    nlohmann::json subj = nlohmann::json::array();
    for (const auto& s : report.subjects) {
        subj.push_back({{"subject_id", s.subject_id},
                        {"num_observations", s.num_observations},
                        {"mean_with_z", s.mean_with_z},
                        {"mean_without_z", s.mean_without_z}});
    }
    j["subjects"] = subj;
    return j;
}

nlohmann::json to_json(const FosrFit& fit) {
    nlohmann::json j;
    j["basis"] = fit.spec.basis;
    j["varying_covariates"] = fit.spec.varying_covariates;
    j["invariant_covariates"] = fit.spec.invariant_covariates;
    nlohmann::json coefs = nlohmann::json::object();
    for (std::size_t m = 0; m < fit.term_names.size(); ++m) {
        coefs[fit.term_names[m]] = to_std(fit.functional_coefficients.col(static_cast<Index>(m)));
    }
    j["functional_coefficients"] = coefs;
    nlohmann::json lam = nlohmann::json::object(), edf = nlohmann::json::object();
    for (std::size_t m = 0; m < fit.term_names.size(); ++m) {
        lam[fit.term_names[m]] = fit.lambdas[static_cast<Index>(m)];
        edf[fit.term_names[m]] = fit.effective_df[static_cast<Index>(m)];
    }
    j["lambdas"] = lam;
    j["effective_df"] = edf;
    j["criterion"] = fit.lambdas_fixed ? "fixed" : to_string(fit.criterion);
    nlohmann::json sc = nlohmann::json::array();
    for (const auto& c : fit.scalar_coefficients) {
        sc.push_back({{"name", c.name}, {"estimate", c.estimate}, {"std_error", c.std_error}, {"p_value", c.p_value}});
    }
    j["scalar_coefficients"] = sc;
    j["random_effect_variances"] = to_std(fit.random_effect_variances);
    j["residual_variance"] = fit.residual_variance;
    j["num_subjects"] = fit.subject_ids.size();
    j["excluded_subjects"] = fit.excluded_subjects;
    j["report"] = to_json(fit_report(fit));
    return j;
}

void write_coefficients_csv(std::ostream& out, const FosrFit& fit, const VectorXd& grid) {
    out << "covariate,t,estimate\n";
    out.precision(17);
    for (const auto& name : fit.term_names) {
        const VectorXd v = predict_coefficient(fit, name, grid);
        for (Index g = 0; g < grid.size(); ++g) out << name << ',' << grid[g] << ',' << v[g] << '\n';
    }
}

void write_scalar_csv(std::ostream& out, const std::vector<ScalarCoefficient>& table) {
    out << "term,estimate,std_error,p_value\n";
    out.precision(17);
    for (const auto& c : table) out << c.name << ',' << c.estimate << ',' << c.std_error << ',' << c.p_value << '\n';
}

}  // namespace funreg

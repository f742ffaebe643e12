#include "funreg/inference.hpp"

#include "funreg/errors.hpp"
#include "funreg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <set>

namespace funreg {

namespace {

// sup{p : Q7(p) < z} for the type-7 quantile function of sorted `d`.
double type7_cdf_below(const std::vector<double>& d, double z) {
    const std::size_t B = d.size();
    if (z <= d.front()) return 0.0;
    if (z > d.back()) return 1.0;
    if (B == 1) return 1.0;
    std::size_t i = static_cast<std::size_t>(std::lower_bound(d.begin(), d.end(), z) - d.begin()) - 1;
    const double frac = (z - d[i]) / (d[i + 1] - d[i]);
    return (static_cast<double>(i) + frac) / static_cast<double>(B - 1);
}

BootstrapBand band_skeleton(const MatrixXd& reps, const VectorXd& estimate, double alpha) {
    if (reps.rows() < 2) throw InvalidArgument("a bootstrap band needs B >= 2 replicates");
    if (reps.cols() != estimate.size()) throw InvalidArgument("replicate curves and estimate differ in length");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    BootstrapBand b;
    b.estimate = estimate;
    b.replicate_curves = reps;
    b.B = static_cast<int>(reps.rows());
    b.alpha = alpha;
    const VectorXd mean = reps.colwise().mean().transpose();
    b.se = ((reps.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() / (reps.rows() - 1.0)).cwiseSqrt();
    const double z = normal_quantile(1.0 - alpha / 2.0);
    b.wald_lo = estimate - z * b.se;
    b.wald_hi = estimate + z * b.se;
    return b;
}

double degenerate_threshold(const VectorXd& estimate) {
    const double scale = estimate.size() ? estimate.cwiseAbs().maxCoeff() : 0.0;
    return 1e-12 * (scale > 0 ? scale : 1.0);
}

}  // namespace

BootstrapBand cma_band(const MatrixXd& reps, const VectorXd& estimate, double alpha) {
    BootstrapBand b = band_skeleton(reps, estimate, alpha);
    const Index G = estimate.size();
    const Index B = reps.rows();
    const double thr = degenerate_threshold(estimate);
    std::vector<Index> live;
    for (Index g = 0; g < G; ++g) {
        if (b.se[g] >= thr) live.push_back(g);
    }
    b.degenerate_points = G - static_cast<Index>(live.size());
    if (live.empty()) {
        throw DegenerateBandError("every grid point has zero bootstrap SE; the max statistic is undefined");
    }
    const VectorXd mean = reps.colwise().mean().transpose();
    std::vector<double> d(static_cast<std::size_t>(B), 0.0);
    for (Index r = 0; r < B; ++r) {
        double m = 0.0;
        for (Index g : live) m = std::max(m, std::abs(reps(r, g) - mean[g]) / b.se[g]);
        d[static_cast<std::size_t>(r)] = m;
    }
    b.cma_quantile = quantile_type7(d, 1.0 - alpha);
    b.cma_lo = estimate - b.cma_quantile * b.se;
    b.cma_hi = estimate + b.cma_quantile * b.se;

    std::sort(d.begin(), d.end());
    const double floor = 1.0 / static_cast<double>(B);
    b.pointwise_p.resize(G);
    for (Index g = 0; g < G; ++g) {
        if (b.se[g] < thr) {
            b.pointwise_p[g] = estimate[g] == 0.0 ? 1.0 : floor;
        } else {
            const double p = 1.0 - type7_cdf_below(d, std::abs(estimate[g]) / b.se[g]);
            b.pointwise_p[g] = std::max(p, floor);
        }
    }
    b.global_p = b.pointwise_p.minCoeff();
    return b;
}

BootstrapBand cma_band_or_degenerate(const MatrixXd& reps, const VectorXd& estimate, double alpha) {
    try {
        return cma_band(reps, estimate, alpha);
    } catch (const DegenerateBandError&) {
        BootstrapBand b = band_skeleton(reps, estimate, alpha);
        b.degenerate = true;
        b.degenerate_points = estimate.size();
        b.cma_quantile = 0.0;
        b.cma_lo = estimate;
        b.cma_hi = estimate;
        const double floor = 1.0 / static_cast<double>(reps.rows());
        b.pointwise_p = estimate.unaryExpr([floor](double e) { return e == 0.0 ? 1.0 : floor; });
        b.global_p = b.pointwise_p.size() ? b.pointwise_p.minCoeff() : 1.0;
        return b;
    }
}

BootstrapBand contrast_band(const MatrixXd& r1, const MatrixXd& r2, const VectorXd& e1, const VectorXd& e2,
                            double alpha) {
    if (r1.rows() != r2.rows()) throw InvalidArgument("contrast replicate sets have different B");
    if (r1.cols() != r2.cols() || e1.size() != e2.size()) throw InvalidArgument("contrast curves differ in length");
    return cma_band_or_degenerate(r1 - r2, e1 - e2, alpha);
}

const char* to_string(Resampling r) { return r == Resampling::stratified ? "stratified" : "plain"; }

Resampling resampling_from_string(const std::string& name) {
    if (name == "plain") return Resampling::plain;
    if (name == "stratified" || name == "cohort") return Resampling::stratified;
    throw InvalidArgument("unknown resampling '" + name + "' (expected plain or stratified)");
}

std::vector<std::size_t> plain_indices(std::size_t n, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

std::vector<std::size_t> stratified_indices(std::span<const FunctionalSample> samples, Rng& rng, int group_size) {
    std::map<std::string, std::vector<std::size_t>> by_arm;
    for (std::size_t i = 0; i < samples.size(); ++i) by_arm[samples[i].arm].push_back(i);

    std::set<std::string> cohort_arms;
    for (const auto& s : samples) {
        if (s.cohort) cohort_arms.insert(s.arm);
    }
    std::map<std::size_t, int> size_counts;
    std::map<std::string, std::map<std::string, std::vector<std::size_t>>> cohorts;  // arm -> cohort -> members
    for (const auto& arm : cohort_arms) {
        for (std::size_t i : by_arm[arm]) {
            if (!samples[i].cohort) {
                throw InputError("subject '" + samples[i].subject_id + "' in cohort arm '" + arm + "' has no cohort label");
            }
            cohorts[arm][*samples[i].cohort].push_back(i);
        }
        for (const auto& [c, members] : cohorts[arm]) size_counts[members.size()]++;
    }
    if (group_size <= 0) {
        group_size = 3;
        int best = 0;
        for (const auto& [sz, cnt] : size_counts) {
            if (cnt > best) {
                best = cnt;
                group_size = static_cast<int>(sz);
            }
        }
    }

    std::vector<std::size_t> out;
    out.reserve(samples.size());
    for (const auto& [arm, members] : by_arm) {
        const std::size_t target = members.size();
        std::vector<std::size_t> drawn;
        if (cohort_arms.count(arm)) {
            std::vector<const std::vector<std::size_t>*> groups;
            for (const auto& [c, m] : cohorts[arm]) groups.push_back(&m);
            std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
            while (drawn.size() < target) {
                const auto& g = *groups[pick(rng)];
                drawn.insert(drawn.end(), g.begin(), g.end());
            }
        } else {
            std::map<std::string, std::vector<std::size_t>> strata;
            for (std::size_t i : members) {
                if (samples[i].stratum.empty()) {
                    throw InputError("subject '" + samples[i].subject_id + "' in arm '" + arm + "' has no stratum label");
                }
                strata[samples[i].stratum].push_back(i);
            }
            std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
            while (drawn.size() < target) {
                const std::size_t first = members[pick(rng)];
                drawn.push_back(first);
                const auto& cell = strata[samples[first].stratum];
                std::uniform_int_distribution<std::size_t> mate(0, cell.size() - 1);
                for (int k = 1; k < group_size && drawn.size() < target; ++k) drawn.push_back(cell[mate(rng)]);
            }
        }
        drawn.resize(target);
        out.insert(out.end(), drawn.begin(), drawn.end());
    }
    return out;
}

std::vector<FunctionalSample> take(std::span<const FunctionalSample> samples, const std::vector<std::size_t>& idx) {
    std::vector<FunctionalSample> out;
    out.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        FunctionalSample s = samples[idx[k]];
        s.subject_id += "#" + std::to_string(k);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<FunctionalSample> stratified_resample(std::span<const FunctionalSample> samples, Rng& rng, int group_size) {
    return take(samples, stratified_indices(samples, rng, group_size));
}

ReplicateSet run_replicates(std::span<const FunctionalSample> samples, const BootstrapConfig& config, Index dim,
                            const std::function<VectorXd(const std::vector<std::size_t>&)>& statistic) {
    if (config.B < 2) throw InvalidArgument("bootstrap needs B >= 2");
    if (samples.empty()) throw InputError("bootstrap on an empty sample");
    const int limit = static_cast<int>(std::floor(config.max_failure_fraction * config.B));
    ReplicateSet set;
    set.values.resize(config.B, dim);
    std::vector<int> failures(static_cast<std::size_t>(config.B), 0);
    std::vector<std::string> first_message(static_cast<std::size_t>(config.B));
    std::atomic<int> total{0};

    parallel_for(static_cast<std::size_t>(config.B), config.threads, [&](std::size_t b) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            if (total.load() > limit) return;
            Rng rng = make_rng(config.seed, {b, attempt});
            const auto idx = config.resampling == Resampling::stratified
                                 ? stratified_indices(samples, rng, config.group_size)
                                 : plain_indices(samples.size(), rng);
            try {
                VectorXd v = statistic(idx);
                if (v.size() != dim) throw NumericalError("replicate statistic has the wrong length");
                if (!v.allFinite()) throw NumericalError("replicate statistic is not finite");
                set.values.row(static_cast<Index>(b)) = v.transpose();
                return;
            } catch (const Error& e) {
                if (failures[b]++ == 0) first_message[b] = e.what();
                ++total;
            }
        }
    });

    for (std::size_t b = 0; b < failures.size(); ++b) {
        set.failures += failures[b];
        if (failures[b] && set.failure_messages.size() < 5) {
            set.failure_messages.push_back("replicate " + std::to_string(b) + ": " + first_message[b]);
        }
    }
    if (set.failures > limit) {
        std::string msg = "bootstrap aborted: " + std::to_string(set.failures) + " failed replicate fits exceed " +
                          std::to_string(limit) + " (" + std::to_string(config.max_failure_fraction * 100) + "% of B)";
        for (const auto& m : set.failure_messages) msg += "; " + m;
        throw InferenceError(msg);
    }
    return set;
}

ScalarBootstrap percentile_summary(const std::string& name, double estimate, const VectorXd& reps, double alpha) {
    ScalarBootstrap s;
    s.name = name;
    s.estimate = estimate;
    const double B = static_cast<double>(reps.size());
    s.std_error = std::sqrt((reps.array() - reps.mean()).square().sum() / (B - 1.0));
    double below = 0, above = 0;
    for (Index r = 0; r < reps.size(); ++r) {
        if (reps[r] <= 0) ++below;
        if (reps[r] >= 0) ++above;
    }
    s.p_value = std::clamp(2.0 * std::min(below, above) / B, 1.0 / B, 1.0);
    const std::vector<double> v = to_std(reps);
    s.lo = quantile_type7(v, alpha / 2.0);
    s.hi = quantile_type7(v, 1.0 - alpha / 2.0);
    return s;
}

const BootstrapBand& FosrBootstrap::band(const std::string& term) const {
    for (const auto& b : bands) {
        if (b.term == term) return b;
    }
    throw LookupError("no band for term '" + term + "'");
}

FosrBootstrap bootstrap_fosr(std::span<const FunctionalSample> samples, const FosrSpec& spec,
                             const FpcaConfig& fpca_config, const VectorXd& fpca_grid, const VectorXd& eval_grid,
                             const BootstrapConfig& config) {
    FosrBootstrap out;
    out.config = config;
    out.fpca = fit_fpca(samples, fpca_grid, fpca_config);
    out.fit = fit_fosr(samples, spec, out.fpca);
    const auto terms = spec.functional_terms();
    const Index G = eval_grid.size();
    const Index T = static_cast<Index>(terms.size());
    const Index S = static_cast<Index>(spec.invariant_covariates.size());

    FpcaConfig rep_config = fpca_config;
    rep_config.num_components = out.fpca.num_components();
    const MatrixXd Beval = evaluate_basis(spec.basis, eval_grid);

    const ReplicateSet set = run_replicates(samples, config, T * G + S, [&](const std::vector<std::size_t>& idx) {
        const auto data = take(samples, idx);
        const FpcaResult fp = fit_fpca(data, fpca_grid, rep_config);
        const FosrFit f = fit_fosr(data, spec, fp);
        VectorXd v(T * G + S);
        for (Index m = 0; m < T; ++m) v.segment(m * G, G) = Beval * f.functional_coefficients.col(m);
        for (Index m = 0; m < S; ++m) v[T * G + m] = f.scalar_coefficients[static_cast<std::size_t>(m)].estimate;
        return v;
    });
    out.failures = set.failures;
    for (Index m = 0; m < T; ++m) {
        const VectorXd est = Beval * out.fit.functional_coefficients.col(m);
        BootstrapBand b = cma_band_or_degenerate(set.values.middleCols(m * G, G), est, config.alpha);
        b.term = terms[static_cast<std::size_t>(m)];
        b.t = eval_grid;
        out.bands.push_back(std::move(b));
    }
    for (Index m = 0; m < S; ++m) {
        const auto& c = out.fit.scalar_coefficients[static_cast<std::size_t>(m)];
        out.scalars.push_back(percentile_summary(c.name, c.estimate, set.values.col(T * G + m), config.alpha));
    }
    return out;
}

TwoStepBootstrap bootstrap_twostep(std::span<const FunctionalSample> samples, const std::vector<std::string>& covariates,
                                   const FpcaConfig& fpca_config, const VectorXd& grid, const BootstrapConfig& config) {
    TwoStepBootstrap out;
    out.config = config;
    const FpcaResult fpca = fit_fpca(samples, grid, fpca_config);
    out.fit = induce_functional_coefficients(
        regress_scores(fpca, covariate_matrix(samples, covariates), covariates), fpca, grid);
    FpcaConfig rep_config = fpca_config;
    rep_config.num_components = fpca.num_components();
    const Index G = grid.size();
    const Index M = static_cast<Index>(covariates.size());
    const ReplicateSet set = run_replicates(samples, config, (M + 1) * G, [&](const std::vector<std::size_t>& idx) {
        const auto data = take(samples, idx);
        const FpcaResult fp = fit_fpca(data, grid, rep_config);
        const TwoStepFit f =
            induce_functional_coefficients(regress_scores(fp, covariate_matrix(data, covariates), covariates), fp, grid);
        VectorXd v((M + 1) * G);
        v.head(G) = f.induced_intercept;
        for (Index m = 0; m < M; ++m) v.segment((m + 1) * G, G) = f.induced_coefficients.col(m);
        return v;
    });
    out.failures = set.failures;
    for (Index m = 0; m <= M; ++m) {
        const VectorXd est = m == 0 ? out.fit.induced_intercept : VectorXd(out.fit.induced_coefficients.col(m - 1));
        BootstrapBand b = cma_band_or_degenerate(set.values.middleCols(m * G, G), est, config.alpha);
        b.term = m == 0 ? std::string(kIntercept) : covariates[static_cast<std::size_t>(m - 1)];
        b.t = grid;
        out.bands.push_back(std::move(b));
    }
    return out;
}

FofrFit fit_fofr_pipeline(const FofrData& data, const FofrSpec& spec, FpcaResult* predictor_fpca,
                          FpcaResult* response_fpca) {
    const FpcaResult fw = fit_fpca(data.predictor_period, data.predictor_grid, data.predictor_fpca);
    const FpcaResult fy = fit_fpca(data.response_period, data.response_grid, data.response_fpca);
    const FunctionalPredictor W = impute_predictor(fw, data.predictor_period, data.predictor_grid);
    FofrFit fit = fit_fofr(data.response_period, W, spec, fy);
    if (predictor_fpca) *predictor_fpca = fw;
    if (response_fpca) *response_fpca = fy;
    return fit;
}

namespace {

VectorXd flatten_rows(const MatrixXd& m) {
    VectorXd v(m.size());
    for (Index i = 0; i < m.rows(); ++i) v.segment(i * m.cols(), m.cols()) = m.row(i).transpose();
    return v;
}

}  // namespace

FofrBootstrap bootstrap_fofr(const FofrData& data, const FofrSpec& spec, const VectorXd& eval_t, const VectorXd& eval_u,
                             const BootstrapConfig& config) {
    FofrBootstrap out;
    out.config = config;
    FpcaResult fw, fy;
    out.fit = fit_fofr_pipeline(data, spec, &fw, &fy);

    std::map<std::string, std::size_t> predictor_index;
    for (std::size_t i = 0; i < data.predictor_period.size(); ++i) {
        predictor_index[data.predictor_period[i].subject_id] = i;
    }
    // Resampling units are subjects present in both periods.
    std::vector<FunctionalSample> units;
    std::vector<std::size_t> unit_predictor;
    for (const auto& s : data.response_period) {
        auto it = predictor_index.find(s.subject_id);
        if (it == predictor_index.end()) continue;
        units.push_back(s);
        unit_predictor.push_back(it->second);
    }
    if (units.empty()) throw InputError("no subjects are observed in both periods");

    FofrData rep = data;
    rep.predictor_fpca.num_components = fw.num_components();
    rep.response_fpca.num_components = fy.num_components();
    FofrSpec rep_spec = spec;
    rep_spec.arms = out.fit.arms;

    const Index P = static_cast<Index>(out.fit.arms.size());
    const Index Gs = eval_t.size() * eval_u.size();
    const Index Gu = eval_u.size();
    const Index V = static_cast<Index>(out.fit.varying_terms.size());
    const Index S = static_cast<Index>(out.fit.scalar_coefficients.size());
    const Index dim = P * Gs + V * Gu + S;

    const ReplicateSet set = run_replicates(units, config, dim, [&](const std::vector<std::size_t>& idx) {
        const auto response = take(units, idx);
        std::vector<std::size_t> pidx(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) pidx[k] = unit_predictor[idx[k]];
        const auto predictor = take(data.predictor_period, pidx);
        FofrData d = rep;
        d.predictor_period = predictor;
        d.response_period = response;
        const FofrFit f = fit_fofr_pipeline(d, rep_spec);
        if (f.scalar_coefficients.size() != static_cast<std::size_t>(S)) {
            throw NumericalError("replicate lost a scalar term");
        }
        VectorXd v(dim);
        for (Index p = 0; p < P; ++p) {
            v.segment(p * Gs, Gs) = flatten_rows(evaluate_surface(f, out.fit.arms[static_cast<std::size_t>(p)], eval_t, eval_u));
        }
        for (Index m = 0; m < V; ++m) {
            v.segment(P * Gs + m * Gu, Gu) = predict_varying(f, f.varying_terms[static_cast<std::size_t>(m)], eval_u);
        }
        for (Index m = 0; m < S; ++m) v[P * Gs + V * Gu + m] = f.scalar_coefficients[static_cast<std::size_t>(m)].estimate;
        return v;
    });
    out.failures = set.failures;

    VectorXd tt(Gs), uu(Gs);
    for (Index i = 0; i < eval_t.size(); ++i) {
        for (Index j = 0; j < Gu; ++j) {
            tt[i * Gu + j] = eval_t[i];
            uu[i * Gu + j] = eval_u[j];
        }
    }
    for (Index p = 0; p < P; ++p) {
        const std::string& arm = out.fit.arms[static_cast<std::size_t>(p)];
        const VectorXd est = flatten_rows(evaluate_surface(out.fit, arm, eval_t, eval_u));
        BootstrapBand b = cma_band_or_degenerate(set.values.middleCols(p * Gs, Gs), est, config.alpha);
        b.term = arm;
        b.t = tt;
        b.u = uu;
        out.surface_bands.push_back(std::move(b));
    }
    for (Index m = 0; m < V; ++m) {
        const std::string& term = out.fit.varying_terms[static_cast<std::size_t>(m)];
        BootstrapBand b = cma_band_or_degenerate(set.values.middleCols(P * Gs + m * Gu, Gu),
                                                 predict_varying(out.fit, term, eval_u), config.alpha);
        b.term = term;
        b.t = eval_u;
        out.varying_bands.push_back(std::move(b));
    }
    for (Index m = 0; m < S; ++m) {
        const auto& c = out.fit.scalar_coefficients[static_cast<std::size_t>(m)];
        out.scalars.push_back(percentile_summary(c.name, c.estimate, set.values.col(P * Gs + V * Gu + m), config.alpha));
    }
    return out;
}

void write_bands_csv(std::ostream& out, const std::vector<BootstrapBand>& bands) {
    const bool surface = !bands.empty() && bands.front().u.size() > 0;
    out << (surface ? "term,t,u," : "term,t,") << "estimate,se,wald_lo,wald_hi,cma_lo,cma_hi,pointwise_p\n";
    out.precision(17);
    for (const auto& b : bands) {
        for (Index g = 0; g < b.size(); ++g) {
            out << b.term << ',' << b.t[g] << ',';
            if (surface) out << b.u[g] << ',';
            out << b.estimate[g] << ',' << b.se[g] << ',' << b.wald_lo[g] << ',' << b.wald_hi[g] << ',' << b.cma_lo[g]
                << ',' << b.cma_hi[g] << ',' << b.pointwise_p[g] << '\n';
        }
    }
}

void write_surface_csv(std::ostream& out, const std::vector<BootstrapBand>& bands) {
    out << "arm,t,u,estimate,se,cma_lo,cma_hi,significant\n";
    out.precision(17);
    for (const auto& b : bands) {
        for (Index g = 0; g < b.size(); ++g) {
            const bool sig = b.cma_lo[g] > 0.0 || b.cma_hi[g] < 0.0;
            out << b.term << ',' << b.t[g] << ',' << b.u[g] << ',' << b.estimate[g] << ',' << b.se[g] << ','
                << b.cma_lo[g] << ',' << b.cma_hi[g] << ',' << (sig ? 1 : 0) << '\n';
        }
    }
}

void write_scalar_bootstrap_csv(std::ostream& out, const std::vector<ScalarBootstrap>& table) {
    out << "term,estimate,bootstrap_se,p_value,lo,hi\n";
    out.precision(17);
    for (const auto& s : table) {
        out << s.name << ',' << s.estimate << ',' << s.std_error << ',' << s.p_value << ',' << s.lo << ',' << s.hi << '\n';
    }
}

nlohmann::json band_summary(const std::vector<BootstrapBand>& bands) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& b : bands) {
        j.push_back({{"term", b.term},
                     {"global_p", b.global_p},
                     {"cma_quantile", b.cma_quantile},
                     {"alpha", b.alpha},
                     {"B", b.B},
                     {"degenerate", b.degenerate},
                     {"degenerate_points", b.degenerate_points}});
    }
    return j;
}

}  // namespace funreg

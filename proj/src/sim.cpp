#include "funreg/sim.hpp"

#include "funreg/errors.hpp"
#include "funreg/parallel.hpp"
#include "funreg/rng.hpp"
#include "funreg/twostep.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace funreg {

std::vector<std::string> SimTruth::varying_names() const {
    std::vector<std::string> out;
    for (const auto& [n, v] : varying) out.push_back(n);
    return out;
}

std::vector<std::string> SimTruth::invariant_names() const {
    std::vector<std::string> out;
    for (const auto& [n, v] : invariant) out.push_back(n);
    return out;
}

void SimTruth::validate() const {
    const Index G = grid.size();
    if (G < 2 || !is_strictly_increasing({grid.data(), static_cast<std::size_t>(G)})) {
        throw InvalidArgument("truth grid must be strictly increasing with at least 2 points");
    }
    if (intercept.size() != G || !intercept.allFinite()) throw InvalidArgument("truth intercept must be finite on the grid");
    for (const auto& [n, v] : varying) {
        if (v.size() != G || !v.allFinite()) throw InvalidArgument("truth curve '" + n + "' must be finite on the grid");
    }
    if (eigenfunctions.rows() != G || eigenfunctions.cols() != eigenvalues.size()) {
        throw InvalidArgument("truth eigenfunctions must be |grid| x K with K eigenvalues");
    }
    if ((eigenvalues.array() < 0).any()) throw InvalidArgument("truth eigenvalues must be non-negative");
    if (!(noise_variance >= 0)) throw InvalidArgument("truth noise_variance must be non-negative");
    const VectorXd w = trapezoid_weights(grid);
    const MatrixXd gram = eigenfunctions.transpose() * w.asDiagonal() * eigenfunctions;
    if (eigenfunctions.cols() && (gram - MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() > 1e-6) {
        throw InvalidArgument("truth eigenfunctions are not orthonormal on the grid");
    }
    if (pool.empty()) throw InvalidArgument("covariate pool is empty");
    for (const auto& row : pool) {
        if (static_cast<Index>(row.observed.size()) != G) throw InvalidArgument("pool pattern length differs from grid");
        for (const auto& [n, v] : varying) {
            if (!row.covariates.count(n)) throw InvalidArgument("pool row lacks covariate '" + n + "'");
        }
        for (const auto& [n, v] : invariant) {
            if (!row.covariates.count(n)) throw InvalidArgument("pool row lacks covariate '" + n + "'");
        }
    }
}

namespace {

const std::vector<std::string> kArms{"control", "collaborative", "competitive", "supportive"};

std::vector<PoolRow> synthetic_pool(const VectorXd& grid, int size, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> arm_pick(0, 3), day_pick(1, 148);
    std::vector<PoolRow> pool;
    for (int i = 0; i < size; ++i) {
        PoolRow r;
        r.arm = kArms[static_cast<std::size_t>(arm_pick(rng))];
        const double age = std::clamp(40.0 + 12.0 * normal(rng), 18.0, 75.0);
        const double female = unif(rng) < 0.6 ? 1.0 : 0.0;
        const double baseline = std::exp(std::log(7.0) + 0.35 * normal(rng));
        const double start = day_pick(rng);
        r.stratum = baseline < 5.0 ? "low" : (baseline <= 7.5 ? "mid" : "high");
        for (std::size_t a = 1; a < kArms.size(); ++a) r.covariates["arm_" + kArms[a]] = r.arm == kArms[a] ? 1.0 : 0.0;
        r.covariates["age"] = age;
        r.covariates["gender"] = female;
        r.covariates["baseline_steps_k"] = baseline;
        r.covariates["start_day"] = start;
        // Dropout hazard and sporadic gaps both rise over the period.
        for (;;) {
            r.observed.assign(static_cast<std::size_t>(grid.size()), true);
            bool dropped = false;
            int count = 0;
            for (Index g = 0; g < grid.size(); ++g) {
                const double week = static_cast<double>(g + 1);
                if (!dropped && unif(rng) < 0.002 * week) dropped = true;
                const bool gap = unif(rng) < 0.05 + 0.004 * week;
                r.observed[static_cast<std::size_t>(g)] = !dropped && !gap;
                count += r.observed[static_cast<std::size_t>(g)];
            }
            if (count >= 4) break;
        }
        pool.push_back(std::move(r));
    }
    return pool;
}

SimTruth base_truth(int pool_size, std::uint64_t pool_seed) {
    SimTruth t;
    t.grid = linspace(1.0, 24.0, 24);
    const VectorXd s = (t.grid.array() - 1.0) / 23.0;
    t.intercept = (7.9 - 0.3 * s.array() + 0.05 * (std::numbers::pi * s.array()).sin()).matrix();
    t.invariant = {{"age", 0.0024}, {"gender", 0.03}, {"baseline_steps_k", 0.09}, {"start_day", -0.0009}};
    const VectorXd w = trapezoid_weights(t.grid);
    MatrixXd phi(t.grid.size(), 2);
    phi.col(0).setOnes();
    phi.col(1) = s.array() - 0.5;
    for (Index k = 0; k < 2; ++k) {
        for (Index j = 0; j < k; ++j) phi.col(k) -= phi.col(j).dot(w.asDiagonal() * phi.col(k)) * phi.col(j);
        phi.col(k) /= std::sqrt(phi.col(k).dot(w.asDiagonal() * phi.col(k)));
    }
    t.eigenfunctions = phi;
    t.eigenvalues = (VectorXd(2) << 0.8, 0.2).finished();
    t.noise_variance = 0.04;
    t.pool = synthetic_pool(t.grid, pool_size, pool_seed);
    return t;
}

}  // namespace

SimTruth default_sim_truth(int pool_size, std::uint64_t pool_seed) {
    SimTruth t = base_truth(pool_size, pool_seed);
    const ArrayXd s = (t.grid.array() - 1.0) / 23.0;
    const ArrayXd weeks = t.grid.array() - 1.0;
    // Collaborative and supportive wane after an early peak with a late partial
    // rebound; competitive ramps up quickly and stays elevated.
    t.varying = {{"arm_collaborative",
                  (0.02 + 0.2 * (-weeks / 3.5).exp() + 0.1 * (-(weeks - 20.0).square() / 12.0).exp()).matrix()},
                 {"arm_competitive", (0.04 + 0.12 * (1.0 - (-(weeks + 0.5) / 1.5).exp()) +
                                      0.07 * (-(weeks - 12.0).square() / 20.0).exp()).matrix()},
                 {"arm_supportive",
                  (0.01 + 0.17 * (-weeks / 2.5).exp() + 0.08 * (-(weeks - 19.0).square() / 10.0).exp()).matrix()}};
    return t;
}

SimTruth curvature_sim_truth(int pool_size, std::uint64_t pool_seed) {
    SimTruth t = base_truth(pool_size, pool_seed);
    const ArrayXd s = (t.grid.array() - 1.0) / 23.0;
    const double pi = std::numbers::pi;
    t.varying = {{"arm_collaborative", (0.12 + 0.12 * (4.0 * pi * s).sin()).matrix()},
                 {"arm_competitive", (0.12 + 0.12 * (3.0 * pi * s + 0.5).cos()).matrix()},
                 {"arm_supportive", (0.1 + 0.1 * (5.0 * pi * s).sin()).matrix()}};
    return t;
}

nlohmann::json to_json(const SimTruth& truth) {
    nlohmann::json j;
    j["grid"] = to_std(truth.grid);
    j["intercept"] = to_std(truth.intercept);
    nlohmann::json vary = nlohmann::json::array();
    for (const auto& [n, v] : truth.varying) vary.push_back({{"name", n}, {"curve", to_std(v)}});
    j["varying"] = vary;
    nlohmann::json inv = nlohmann::json::array();
    for (const auto& [n, v] : truth.invariant) inv.push_back({{"name", n}, {"value", v}});
    j["invariant"] = inv;
    nlohmann::json efs = nlohmann::json::array();
    for (Index k = 0; k < truth.eigenfunctions.cols(); ++k) efs.push_back(to_std(truth.eigenfunctions.col(k)));
    j["eigenfunctions"] = efs;
    j["eigenvalues"] = to_std(truth.eigenvalues);
    j["noise_variance"] = truth.noise_variance;
    nlohmann::json pool = nlohmann::json::array();
    for (const auto& r : truth.pool) {
        std::string pattern;
        for (bool o : r.observed) pattern += o ? '1' : '0';
        pool.push_back({{"arm", r.arm}, {"stratum", r.stratum}, {"covariates", r.covariates}, {"observed", pattern}});
    }
    j["pool"] = pool;
    j["synthetic"] = true;
    return j;
}

SimTruth sim_truth_from_json(const nlohmann::json& j) {
    SimTruth t;
    try {
        t.grid = to_vector(j.at("grid").get<std::vector<double>>());
        t.intercept = to_vector(j.at("intercept").get<std::vector<double>>());
        for (const auto& v : j.at("varying")) {
            t.varying.emplace_back(v.at("name").get<std::string>(), to_vector(v.at("curve").get<std::vector<double>>()));
        }
        for (const auto& v : j.at("invariant")) t.invariant.emplace_back(v.at("name").get<std::string>(), v.at("value").get<double>());
        const auto& efs = j.at("eigenfunctions");
        t.eigenfunctions.resize(t.grid.size(), static_cast<Index>(efs.size()));
        for (std::size_t k = 0; k < efs.size(); ++k) {
            const auto col = efs[k].get<std::vector<double>>();
            if (static_cast<Index>(col.size()) != t.grid.size()) throw ParseError("eigenfunction length differs from grid");
            t.eigenfunctions.col(static_cast<Index>(k)) = to_vector(col);
        }
        t.eigenvalues = to_vector(j.at("eigenvalues").get<std::vector<double>>());
        t.noise_variance = j.at("noise_variance").get<double>();
        for (const auto& r : j.at("pool")) {
            PoolRow row;
            row.arm = r.value("arm", "");
            row.stratum = r.value("stratum", "");
            row.covariates = r.at("covariates").get<std::map<std::string, double>>();
            for (char c : r.at("observed").get<std::string>()) row.observed.push_back(c == '1');
            t.pool.push_back(std::move(row));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid truth JSON: ") + e.what());
    }
    t.validate();
    return t;
}

SimDataset generate_dataset_detailed(const SimTruth& truth, int N, std::uint64_t seed) {
    if (N <= 0) throw InvalidArgument("N must be positive, got " + std::to_string(N));
    truth.validate();
    const Index G = truth.grid.size();
    const Index K = truth.eigenvalues.size();
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<std::size_t> donor(0, truth.pool.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double noise_sd = std::sqrt(truth.noise_variance);
    const std::size_t width = std::max<std::size_t>(4, std::to_string(N).size());

    SimDataset out;
    out.scores = MatrixXd::Zero(N, K);
    out.linear_part.resize(N, G);
    for (int i = 0; i < N; ++i) {
        const PoolRow& cov = truth.pool[donor(rng)];
        VectorXd curve = truth.intercept;
        for (const auto& [n, beta] : truth.varying) curve += cov.covariates.at(n) * beta;
        double shift = 0.0;
        for (const auto& [n, b] : truth.invariant) shift += cov.covariates.at(n) * b;
        curve.array() += shift;
        out.linear_part.row(i) = curve.transpose();
        for (Index k = 0; k < K; ++k) {
            const double z = normal(rng) * std::sqrt(truth.eigenvalues[k]);
            out.scores(i, k) = z;
            curve += z * truth.eigenfunctions.col(k);
        }
        for (Index g = 0; g < G; ++g) curve[g] += noise_sd * normal(rng);
        const PoolRow& pattern = truth.pool[donor(rng)];

        FunctionalSample s;
        std::string num = std::to_string(i + 1);
        s.subject_id = "s" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0') + num;
        s.covariates = cov.covariates;
        s.arm = cov.arm;
        s.stratum = cov.stratum;
        for (Index g = 0; g < G; ++g) {
            if (!pattern.observed[static_cast<std::size_t>(g)]) continue;
            s.times.push_back(truth.grid[g]);
            s.values.push_back(curve[g]);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

std::vector<FunctionalSample> generate_dataset(const SimTruth& truth, int N, std::uint64_t seed) {
    return generate_dataset_detailed(truth, N, seed).samples;
}

double ise(const VectorXd& estimate, const VectorXd& truth, const VectorXd& grid) {
    if (estimate.size() != truth.size() || estimate.size() != grid.size()) {
        throw InvalidArgument("ise: estimate, truth and grid lengths differ");
    }
    return trapezoid(grid, (estimate - truth).array().square().matrix());
}

const BenchmarkSummary& BenchmarkResult::summary(const std::string& method, int N, const std::string& coefficient) const {
    for (const auto& s : summaries) {
        if (s.method == method && s.N == N && s.coefficient == coefficient) return s;
    }
    throw LookupError("no benchmark summary for " + method + "/" + std::to_string(N) + "/" + coefficient);
}

ReplicateEstimates estimate_both(const SimTruth& truth, std::span<const FunctionalSample> data,
                                 const BenchmarkConfig& config) {
    const VectorXd& grid = truth.grid;
    const FpcaResult fpca = fit_fpca(data, grid, config.fpca);
    const auto varying = truth.varying_names();
    const auto invariant = truth.invariant_names();
    const Index C = static_cast<Index>(varying.size()) + 1;

    FosrSpec spec;
    spec.varying_covariates = varying;
    spec.invariant_covariates = invariant;
    spec.basis = BasisSystem(grid[0], grid[grid.size() - 1], config.num_basis);
    spec.num_random_components = fpca.num_components();
    spec.lambda_search = config.lambda_search;
    const FosrFit fit = fit_fosr(data, spec, fpca);

    std::vector<std::string> all = varying;
    all.insert(all.end(), invariant.begin(), invariant.end());
    const TwoStepFit two = induce_functional_coefficients(regress_scores(fpca, covariate_matrix(data, all), all), fpca, grid);

    ReplicateEstimates est;
    est.fosr.resize(grid.size(), C);
    est.twostep.resize(grid.size(), C);
    est.fosr.col(0) = predict_coefficient(fit, kIntercept, grid);
    est.twostep.col(0) = two.induced_intercept;
    for (Index m = 1; m < C; ++m) {
        est.fosr.col(m) = predict_coefficient(fit, varying[static_cast<std::size_t>(m - 1)], grid);
        est.twostep.col(m) = two.induced_coefficients.col(m - 1);
    }
    return est;
}

BenchmarkResult run_benchmark(const SimTruth& truth, const BenchmarkConfig& config) {
    if (config.replicates < 1) throw InvalidArgument("replicates must be >= 1");
    if (config.sizes.empty()) throw InvalidArgument("benchmark needs at least one sample size");
    truth.validate();
    BenchmarkResult res;
    res.grid = truth.grid;
    res.coefficients = {kIntercept};
    for (const auto& n : truth.varying_names()) res.coefficients.push_back(n);
    res.truth_curves[kIntercept] = truth.intercept;
    for (const auto& [n, v] : truth.varying) res.truth_curves[n] = v;
    const Index C = static_cast<Index>(res.coefficients.size());
    const std::size_t R = static_cast<std::size_t>(config.replicates);
    const std::size_t tasks = config.sizes.size() * R;

    std::vector<ReplicateEstimates> slots(tasks);
    parallel_for(tasks, config.threads, [&](std::size_t task) {
        const int N = config.sizes[task / R];
        const std::size_t r = task % R;
        const std::string ctx = "benchmark N=" + std::to_string(N) + " replicate " + std::to_string(r) + ": ";
        try {
            const auto data = generate_dataset(truth, N, stream_seed(config.seed, {static_cast<std::uint64_t>(N), r}));
            slots[task] = estimate_both(truth, data, config);
        } catch (const NumericalError& e) {
            throw NumericalError(ctx + e.what());
        } catch (const InputError& e) {
            throw InputError(ctx + e.what());
        }
    });

    for (std::size_t si = 0; si < config.sizes.size(); ++si) {
        const int N = config.sizes[si];
        for (const std::string method : {"fosr", "twostep"}) {
            for (Index c = 0; c < C; ++c) {
                const std::string& name = res.coefficients[static_cast<std::size_t>(c)];
                const VectorXd& tr = res.truth_curves[name];
                std::vector<double> values;
                VectorXd mean = VectorXd::Zero(truth.grid.size());
                for (std::size_t r = 0; r < R; ++r) {
                    const auto& e = slots[si * R + r];
                    const VectorXd est = method == "fosr" ? e.fosr.col(c) : e.twostep.col(c);
                    const double v = ise(est, tr, truth.grid);
                    values.push_back(v);
                    mean += est;
                    res.records.push_back({method, N, static_cast<int>(r), name, v});
                }
                BenchmarkSummary s;
                s.method = method;
                s.N = N;
                s.coefficient = name;
                s.median = quantile_type7(values, 0.5);
                s.q1 = quantile_type7(values, 0.25);
                s.q3 = quantile_type7(values, 0.75);
                s.mean_curve = mean / static_cast<double>(R);
                res.summaries.push_back(std::move(s));
            }
        }
    }
    return res;
}

void write_benchmark_csv(std::ostream& out, const BenchmarkResult& result) {
    out << "method,N,replicate,coefficient,ise\n";
    out.precision(17);
    for (const auto& r : result.records) {
        out << r.method << ',' << r.N << ',' << r.replicate << ',' << r.coefficient << ',' << r.ise << '\n';
    }
}

void write_mean_curves_csv(std::ostream& out, const BenchmarkResult& result) {
    out << "method,N,coefficient,t,mean_estimate,truth\n";
    out.precision(17);
    for (const auto& s : result.summaries) {
        const VectorXd& tr = result.truth_curves.at(s.coefficient);
        for (Index g = 0; g < result.grid.size(); ++g) {
            out << s.method << ',' << s.N << ',' << s.coefficient << ',' << result.grid[g] << ',' << s.mean_curve[g]
                << ',' << tr[g] << '\n';
        }
    }
}

nlohmann::json benchmark_summary_json(const BenchmarkResult& result) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : result.summaries) {
        arr.push_back({{"method", s.method},
                       {"N", s.N},
                       {"coefficient", s.coefficient},
                       {"median_ise", s.median},
                       {"q1_ise", s.q1},
                       {"q3_ise", s.q3}});
    }
    return {{"summaries", arr}, {"coefficients", result.coefficients}};
}

}  // namespace funreg

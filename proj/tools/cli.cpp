#include "cli.hpp"

#include "funreg/data_io.hpp"
#include "funreg/errors.hpp"
#include "funreg/fofr.hpp"
#include "funreg/fosr.hpp"
#include "funreg/fpca.hpp"
#include "funreg/inference.hpp"
#include "funreg/parallel.hpp"
#include "funreg/sim.hpp"
#include "funreg/twostep.hpp"

#include "CLI11.hpp"

#include <boost/version.hpp>

#include <chrono>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#ifndef FUNREG_VERSION
#define FUNREG_VERSION "0.0.0"
#endif

namespace funreg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
    return {
        {"seed", 1},
        {"io",
         {{"daily", ""}, {"long", ""}, {"covariates", ""}, {"predictor_long", ""}, {"response_long", ""}}},
        {"preprocess",
         {{"min_valid_steps", 1000.0},
          {"min_days_per_week", 3},
          {"log_transform", true},
          {"aggregate", "weekly"},
          {"impute_before_average", false},
          {"period", "intervention"}}},
        {"fpca",
         {{"pve_threshold", 0.95},
          {"num_components", 0},
          {"mean_num_basis", 0},
          {"cov_num_basis", 0},
          {"grid", "observed"}}},
        {"smoothing", {{"criterion", "gcv"}, {"log10_lo", -6.0}, {"log10_hi", 8.0}, {"points", 50}, {"max_sweeps", 4}}},
        {"fosr",
         {{"varying", nullptr},
          {"invariant", nullptr},
          {"num_basis", 0},
          {"degree", 3},
          {"penalty_order", 2},
          {"num_random_components", -1},
          {"fixed_lambdas", nullptr},
          {"min_obs", 4},
          {"contrasts", true}}},
        {"twostep", {{"covariates", nullptr}}},
        {"fofr",
         {{"num_basis_t", 8},
          {"num_basis_u", 8},
          {"num_basis_varying", 7},
          {"degree", 3},
          {"penalty_order", 2},
          {"quadrature", "linear_interpolant"},
          {"reference_arm", "control"},
          {"arm_main_effects", true},
          {"varying", json::array()},
          {"invariant", nullptr},
          {"num_random_components", -1},
          {"fixed_lambdas", nullptr},
          {"min_obs", 4},
          {"cross_section_u", json::array()}}},
        {"inference",
         {{"B", 300}, {"alpha", 0.05}, {"resampling", "plain"}, {"group_size", 0}, {"model", "fosr"},
          {"max_failure_fraction", 0.1}}},
        {"sim", {{"truth", "default"}, {"n", 250}, {"pool_size", 600}, {"pool_seed", 20180212}}},
        {"benchmark", {{"n", {100, 250}}, {"replicates", 200}, {"num_basis", 20}}},
    };
}

void merge_config(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw InputError("config" + (where.empty() ? "" : " section '" + where + "'") + " must be a JSON object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw InputError("unknown config key '" + path + "'");
        json& target = base[key];
        if (target.is_object()) {
            merge_config(target, value, path);
        } else {
            target = value;
        }
    }
}

namespace {

json parse_scalar(const std::string& text) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(text, &pos);
        if (pos == text.size()) return v;
    } catch (const std::exception&) {
    }
    try {
        std::size_t pos = 0;
        const double v = std::stod(text, &pos);
        if (pos == text.size()) return v;
    } catch (const std::exception&) {
    }
    return text;
}

json split_list(const std::string& text) {
    json out = json::array();
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_scalar(item));
    return out;
}

}  // namespace

json parse_leaf(const json& current, const std::string& text) {
    auto fail = [&](const char* what) { return InputError("value '" + text + "' is not " + what); };
    if (current.is_boolean()) {
        if (text == "true" || text == "1" || text == "on") return true;
        if (text == "false" || text == "0" || text == "off") return false;
        throw fail("a boolean");
    }
    if (current.is_number_integer()) {
        const json v = parse_scalar(text);
        if (!v.is_number_integer()) throw fail("an integer");
        return v;
    }
    if (current.is_number()) {
        const json v = parse_scalar(text);
        if (!v.is_number()) throw fail("a number");
        return v.get<double>();
    }
    if (current.is_string()) return text;
    if (current.is_array()) return split_list(text);
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return split_list(text);
    }
}

namespace {

json& at_path(json& cfg, const std::string& dotted) {
    json* node = &cfg;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) throw InputError("unknown config key '" + dotted + "'");
        node = &(*node)[part];
    }
    return *node;
}

std::vector<std::string> string_list(const json& j) {
    if (j.is_null()) return {};
    if (j.is_string()) return {j.get<std::string>()};
    return j.get<std::vector<std::string>>();
}

std::vector<double> number_list(const json& j) {
    if (j.is_number()) return {j.get<double>()};
    return j.get<std::vector<double>>();
}

struct Context {
    json cfg;
    fs::path out;
    int threads = 1;
    std::vector<std::string> warnings;
    json preprocess_reports = json::object();
    std::vector<std::string> files;

    void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
        std::ofstream f(out / name, std::ios::binary);
        if (!f) throw InputError("cannot write '" + (out / name).string() + "'");
        f.precision(17);
        body(f);
        files.push_back(name);
    }

    void write_json(const std::string& name, const json& j) {
        write(name, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
    }

    std::uint64_t seed() const { return cfg.at("seed").get<std::uint64_t>(); }
};

Period period_of(const json& cfg) { return period_from_string(cfg.at("preprocess").at("period").get<std::string>()); }

bool daily_scale(const json& cfg) {
    return aggregation_from_string(cfg.at("preprocess").at("aggregate").get<std::string>()) == Aggregation::daily;
}

std::pair<double, double> period_domain(const json& cfg, Period p) {
    const auto [w0, w1] = period_weeks(p);
    if (daily_scale(cfg)) return {(w0 - 1) * 7.0 + 1.0, w1 * 7.0};
    return {double(w0), double(w1)};
}

VectorXd integer_grid(double lo, double hi) {
    return linspace(lo, hi, static_cast<Index>(std::llround(hi - lo)) + 1);
}

PreprocessConfig preprocess_config(const json& cfg, Period period) {
    const json& p = cfg.at("preprocess");
    PreprocessConfig c;
    c.min_valid_steps = p.at("min_valid_steps").get<double>();
    c.min_days_per_week = p.at("min_days_per_week").get<int>();
    c.log_transform = p.at("log_transform").get<bool>();
    c.aggregate = aggregation_from_string(p.at("aggregate").get<std::string>());
    c.impute_before_average = p.at("impute_before_average").get<bool>();
    c.period = period;
    return c;
}

LambdaSearch lambda_search(const json& cfg) {
    const json& s = cfg.at("smoothing");
    LambdaSearch ls;
    const int points = s.at("points").get<int>();
    if (points < 1) throw InvalidArgument("smoothing.points must be positive");
    ls.grid = logspace(s.at("log10_lo").get<double>(), s.at("log10_hi").get<double>(), points);
    ls.criterion = criterion_from_string(s.at("criterion").get<std::string>());
    ls.max_sweeps = s.at("max_sweeps").get<int>();
    return ls;
}

FpcaConfig fpca_config(const json& cfg) {
    const json& f = cfg.at("fpca");
    FpcaConfig c;
    c.pve_threshold = f.at("pve_threshold").get<double>();
    c.num_components = f.at("num_components").get<int>();
    c.mean_num_basis = f.at("mean_num_basis").get<int>();
    c.cov_num_basis = f.at("cov_num_basis").get<int>();
    c.smoothing = lambda_search(cfg);
    return c;
}

BootstrapConfig bootstrap_config(const Context& ctx) {
    const json& b = ctx.cfg.at("inference");
    BootstrapConfig c;
    c.B = b.at("B").get<int>();
    c.alpha = b.at("alpha").get<double>();
    c.resampling = resampling_from_string(b.at("resampling").get<std::string>());
    c.group_size = b.at("group_size").get<int>();
    c.max_failure_fraction = b.at("max_failure_fraction").get<double>();
    c.seed = ctx.seed();
    c.threads = ctx.threads;
    if (!(c.alpha > 0 && c.alpha < 1)) throw InvalidArgument("inference.alpha must lie in (0, 1)");
    return c;
}

/// Samples of one period from --long (restricted to the period) or --daily
/// (preprocessed), with covariates joined when a covariate file is given.
std::vector<FunctionalSample> load_period(Context& ctx, Period period, const std::string& long_key = "long") {
    const json& io = ctx.cfg.at("io");
    std::vector<FunctionalSample> samples;
    const std::string long_path = io.at(long_key).get<std::string>();
    const std::string fallback_long = io.at("long").get<std::string>();
    const std::string daily_path = io.at("daily").get<std::string>();
    if (!long_path.empty() || (!fallback_long.empty() && daily_path.empty())) {
        const auto [lo, hi] = period_domain(ctx.cfg, period);
        for (auto& s : load_long_csv(long_path.empty() ? fallback_long : long_path)) {
            FunctionalSample r = restrict_to_domain(s, lo, hi);
            if (r.num_observed() == 0) {
                ctx.warnings.push_back("subject '" + s.subject_id + "' has no observations in the " +
                                       std::string(to_string(period)) + " period");
                continue;
            }
            samples.push_back(std::move(r));
        }
    } else if (!daily_path.empty()) {
        PreprocessReport report;
        const auto records = load_daily_csv(daily_path);
        samples = preprocess(records, preprocess_config(ctx.cfg, period), &report);
        ctx.preprocess_reports[to_string(period)] = to_json(report);
    } else {
        throw InputError("no input data: pass --long or --daily");
    }
    if (samples.empty()) throw InputError(std::string("no subject has data in the ") + to_string(period) + " period");
    const std::string cov = io.at("covariates").get<std::string>();
    if (!cov.empty()) join_covariates(samples, load_covariates(cov));
    return samples;
}

/// Covariate names shared by every sample, split into arm indicators and the rest.
std::pair<std::vector<std::string>, std::vector<std::string>> default_covariates(
    const std::vector<FunctionalSample>& samples) {
    std::vector<std::string> arms, rest;
    if (samples.empty()) return {arms, rest};
    for (const auto& [name, v] : samples.front().covariates) {
        bool everywhere = true;
        for (const auto& s : samples) everywhere = everywhere && s.covariates.count(name);
        if (!everywhere) continue;
        (name.rfind("arm_", 0) == 0 ? arms : rest).push_back(name);
    }
    return {arms, rest};
}

VectorXd fpca_grid(Context& ctx, const std::vector<FunctionalSample>& samples, Period period) {
    const std::string mode = ctx.cfg.at("fpca").at("grid").get<std::string>();
    if (mode == "observed") return default_grid(samples);
    if (mode == "period") {
        const auto [lo, hi] = period_domain(ctx.cfg, period);
        return integer_grid(lo, hi);
    }
    throw InvalidArgument("fpca.grid must be 'observed' or 'period'");
}

void write_imputed(std::ostream& out, const FpcaResult& fit, const std::vector<FunctionalSample>& samples) {
    const MatrixXd full = impute_curves(fit, samples, fit.grid);
    out << "subject_id,t,value,observed\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (Index j = 0; j < fit.grid.size(); ++j) {
            const bool seen = samples[i].value_at(fit.grid[j], 1e-9).has_value();
            out << samples[i].subject_id << ',' << fit.grid[j] << ',' << full(static_cast<Index>(i), j) << ','
                << (seen ? 1 : 0) << '\n';
        }
    }
}

// ---------------------------------------------------------------- commands

void cmd_preprocess(Context& ctx) {
    const Period period = period_of(ctx.cfg);
    const json& io = ctx.cfg.at("io");
    if (io.at("daily").get<std::string>().empty()) throw InputError("preprocess needs --daily");
    const auto samples = load_period(ctx, period);
    ctx.write("samples.csv", [&](std::ostream& o) { write_long_csv(o, samples, daily_scale(ctx.cfg) ? "day" : "week"); });
}

void cmd_fpca(Context& ctx) {
    const Period period = period_of(ctx.cfg);
    const auto samples = load_period(ctx, period);
    const FpcaResult fit = fit_fpca(samples, fpca_grid(ctx, samples, period), fpca_config(ctx.cfg));
    ctx.write_json("fpca.json", to_json(fit));
    ctx.write("scores.csv", [&](std::ostream& o) { write_scores_csv(o, fit); });
    ctx.write("imputed.csv", [&](std::ostream& o) { write_imputed(o, fit, samples); });
}

FosrSpec fosr_spec(Context& ctx, const std::vector<FunctionalSample>& samples, Period period, const FpcaResult& fpca) {
    json& f = ctx.cfg["fosr"];
    const auto [arms, rest] = default_covariates(samples);
    if (f.at("varying").is_null()) f["varying"] = arms;
    if (f.at("invariant").is_null()) f["invariant"] = rest;
    if (f.at("num_basis").get<int>() == 0) f["num_basis"] = period == Period::intervention ? 20 : 7;
    if (f.at("num_random_components").get<int>() < 0) f["num_random_components"] = fpca.num_components();
    const auto [lo, hi] = period_domain(ctx.cfg, period);
    FosrSpec spec;
    spec.varying_covariates = string_list(f.at("varying"));
    spec.invariant_covariates = string_list(f.at("invariant"));
    spec.basis = BasisSystem(lo, hi, f.at("num_basis").get<int>(), f.at("degree").get<int>(),
                             f.at("penalty_order").get<int>());
    spec.num_random_components = f.at("num_random_components").get<int>();
    spec.lambda_search = lambda_search(ctx.cfg);
    if (!f.at("fixed_lambdas").is_null()) spec.fixed_lambdas = number_list(f.at("fixed_lambdas"));
    spec.min_obs = f.at("min_obs").get<int>();
    spec.validate();
    return spec;
}

std::vector<BootstrapBand> arm_contrasts(const std::vector<BootstrapBand>& bands, double alpha) {
    std::vector<const BootstrapBand*> arms;
    for (const auto& b : bands) {
        if (b.term.rfind("arm_", 0) == 0) arms.push_back(&b);
    }
    std::vector<BootstrapBand> out;
    for (std::size_t i = 0; i < arms.size(); ++i) {
        for (std::size_t j = i + 1; j < arms.size(); ++j) {
            BootstrapBand c = contrast_band(arms[i]->replicate_curves, arms[j]->replicate_curves, arms[i]->estimate,
                                            arms[j]->estimate, alpha);
            c.term = arms[i]->term + " - " + arms[j]->term;
            c.t = arms[i]->t;
            out.push_back(std::move(c));
        }
    }
    return out;
}

void write_band_outputs(Context& ctx, const std::vector<BootstrapBand>& bands, int failures) {
    ctx.write("bands.csv", [&](std::ostream& o) { write_bands_csv(o, bands); });
    const json summary = {{"bands", band_summary(bands)}, {"failed_replicates", failures}};
    ctx.write_json("band_summary.json", summary);
}

void run_fosr(Context& ctx, bool bootstrap) {
    const Period period = period_of(ctx.cfg);
    const auto samples = load_period(ctx, period);
    const VectorXd grid = fpca_grid(ctx, samples, period);
    const FpcaConfig fc = fpca_config(ctx.cfg);
    const FpcaResult fpca = fit_fpca(samples, grid, fc);
    const FosrSpec spec = fosr_spec(ctx, samples, period, fpca);
    const auto [lo, hi] = period_domain(ctx.cfg, period);
    const VectorXd eval = integer_grid(lo, hi);
    const BootstrapConfig bc = bootstrap_config(ctx);

    FosrFit fit;
    if (bootstrap && bc.B > 0) {
        const FosrBootstrap res = bootstrap_fosr(samples, spec, fc, grid, eval, bc);
        fit = res.fit;
        write_band_outputs(ctx, res.bands, res.failures);
        if (ctx.cfg.at("fosr").at("contrasts").get<bool>()) {
            const auto contrasts = arm_contrasts(res.bands, bc.alpha);
            if (!contrasts.empty()) {
                ctx.write("contrasts.csv", [&](std::ostream& o) { write_bands_csv(o, contrasts); });
            }
        }
        ctx.write("scalar_bootstrap.csv", [&](std::ostream& o) { write_scalar_bootstrap_csv(o, res.scalars); });
        if (res.failures > 0) ctx.warnings.push_back(std::to_string(res.failures) + " bootstrap replicates re-drawn");
    } else {
        fit = fit_fosr(samples, spec, fpca);
    }
    ctx.write_json("fosr_fit.json", to_json(fit));
    ctx.write_json("fosr_report.json", to_json(fit_report(fit)));
    ctx.write("coefficients.csv", [&](std::ostream& o) { write_coefficients_csv(o, fit, eval); });
    ctx.write("scalars.csv", [&](std::ostream& o) { write_scalar_csv(o, fit.scalar_coefficients); });
    ctx.write_json("fpca.json", to_json(fpca));
    for (const auto& w : fit.warnings) ctx.warnings.push_back(w);
}

std::vector<std::string> twostep_covariates(Context& ctx, const std::vector<FunctionalSample>& samples) {
    json& c = ctx.cfg["twostep"]["covariates"];
    if (c.is_null()) {
        const auto [arms, rest] = default_covariates(samples);
        std::vector<std::string> all = arms;
        all.insert(all.end(), rest.begin(), rest.end());
        c = all;
    }
    return string_list(c);
}

void run_twostep(Context& ctx, bool bootstrap) {
    const Period period = period_of(ctx.cfg);
    const auto samples = load_period(ctx, period);
    const auto covariates = twostep_covariates(ctx, samples);
    const FpcaConfig fc = fpca_config(ctx.cfg);
    const VectorXd grid = fpca_grid(ctx, samples, period);
    const BootstrapConfig bc = bootstrap_config(ctx);
    TwoStepFit fit;
    if (bootstrap && bc.B > 0) {
        const TwoStepBootstrap res = bootstrap_twostep(samples, covariates, fc, grid, bc);
        fit = res.fit;
        write_band_outputs(ctx, res.bands, res.failures);
    } else {
        fit = fit_twostep(samples, covariates, grid, fc);
    }
    ctx.write("score_tables.csv", [&](std::ostream& o) { write_score_tables_csv(o, fit.score_regressions); });
    ctx.write("induced.csv", [&](std::ostream& o) { write_induced_csv(o, fit); });
}

struct FofrInputs {
    std::vector<FunctionalSample> predictor, response;
    FofrData data;
};

FofrInputs fofr_inputs(Context& ctx) {
    FofrInputs in;
    in.predictor = load_period(ctx, Period::intervention, "predictor_long");
    in.response = load_period(ctx, Period::follow_up, "response_long");
    const auto [plo, phi] = period_domain(ctx.cfg, Period::intervention);
    const auto [rlo, rhi] = period_domain(ctx.cfg, Period::follow_up);
    in.data.predictor_period = in.predictor;
    in.data.response_period = in.response;
    in.data.predictor_grid = integer_grid(plo, phi);
    in.data.response_grid = integer_grid(rlo, rhi);
    in.data.predictor_fpca = fpca_config(ctx.cfg);
    in.data.response_fpca = fpca_config(ctx.cfg);
    return in;
}

FofrSpec fofr_spec(Context& ctx, const FofrInputs& in) {
    json& f = ctx.cfg["fofr"];
    if (f.at("invariant").is_null()) f["invariant"] = default_covariates(in.response).second;
    if (f.at("num_random_components").get<int>() < 0) {
        f["num_random_components"] = fit_fpca(in.response, in.data.response_grid, in.data.response_fpca).num_components();
    }
    const auto [plo, phi] = period_domain(ctx.cfg, Period::intervention);
    const auto [rlo, rhi] = period_domain(ctx.cfg, Period::follow_up);
    const int degree = f.at("degree").get<int>(), order = f.at("penalty_order").get<int>();
    FofrSpec spec;
    spec.basis_t = BasisSystem(plo, phi, f.at("num_basis_t").get<int>(), degree, order);
    spec.basis_u = BasisSystem(rlo, rhi, f.at("num_basis_u").get<int>(), degree, order);
    spec.basis_varying = BasisSystem(rlo, rhi, f.at("num_basis_varying").get<int>(), degree, order);
    spec.reference_arm = f.at("reference_arm").get<std::string>();
    spec.arm_main_effects = f.at("arm_main_effects").get<bool>();
    spec.varying_covariates = string_list(f.at("varying"));
    spec.invariant_covariates = string_list(f.at("invariant"));
    spec.num_random_components = f.at("num_random_components").get<int>();
    spec.quadrature = quadrature_from_string(f.at("quadrature").get<std::string>());
    spec.lambda_search = lambda_search(ctx.cfg);
    if (!f.at("fixed_lambdas").is_null()) spec.fixed_lambdas = number_list(f.at("fixed_lambdas"));
    spec.min_obs = f.at("min_obs").get<int>();
    spec.validate();
    return spec;
}

void write_surfaces_plain(std::ostream& out, const FofrFit& fit, const VectorXd& t, const VectorXd& u) {
    out << "arm,t,u,estimate\n";
    for (const auto& arm : fit.arms) {
        const MatrixXd s = evaluate_surface(fit, arm, t, u);
        for (Index i = 0; i < t.size(); ++i) {
            for (Index j = 0; j < u.size(); ++j) out << arm << ',' << t[i] << ',' << u[j] << ',' << s(i, j) << '\n';
        }
    }
}

void write_varying(std::ostream& out, const FofrFit& fit, const VectorXd& u) {
    out << "term,u,estimate\n";
    for (const auto& term : fit.varying_terms) {
        const VectorXd v = predict_varying(fit, term, u);
        for (Index j = 0; j < u.size(); ++j) out << term << ',' << u[j] << ',' << v[j] << '\n';
    }
}

void write_cross_sections(std::ostream& out, const std::vector<BootstrapBand>& bands, const std::vector<double>& at) {
    out << "arm,u,t,estimate,lo,hi\n";
    for (const auto& b : bands) {
        for (double u0 : at) {
            for (Index p = 0; p < b.size(); ++p) {
                if (std::abs(b.u[p] - u0) > 1e-9) continue;
                out << b.term << ',' << u0 << ',' << b.t[p] << ',' << b.estimate[p] << ',' << b.cma_lo[p] << ','
                    << b.cma_hi[p] << '\n';
            }
        }
    }
}

void run_fofr(Context& ctx, bool bootstrap) {
    FofrInputs in = fofr_inputs(ctx);
    const FofrSpec spec = fofr_spec(ctx, in);
    const BootstrapConfig bc = bootstrap_config(ctx);
    const VectorXd& t = in.data.predictor_grid;
    const VectorXd& u = in.data.response_grid;
    const auto cross = number_list(ctx.cfg.at("fofr").at("cross_section_u"));
    FofrFit fit;
    if (bootstrap && bc.B > 0) {
        const FofrBootstrap res = bootstrap_fofr(in.data, spec, t, u, bc);
        fit = res.fit;
        ctx.write("surface_bands.csv", [&](std::ostream& o) { write_surface_csv(o, res.surface_bands); });
        ctx.write("varying_bands.csv", [&](std::ostream& o) { write_bands_csv(o, res.varying_bands); });
        std::vector<BootstrapBand> all = res.surface_bands;
        all.insert(all.end(), res.varying_bands.begin(), res.varying_bands.end());
        const json summary = {{"bands", band_summary(all)}, {"failed_replicates", res.failures}};
        ctx.write_json("band_summary.json", summary);
        ctx.write("scalar_bootstrap.csv", [&](std::ostream& o) { write_scalar_bootstrap_csv(o, res.scalars); });
        if (!cross.empty()) {
            ctx.write("cross_sections.csv", [&](std::ostream& o) { write_cross_sections(o, res.surface_bands, cross); });
        }
    } else {
        fit = fit_fofr_pipeline(in.data, spec);
        if (!cross.empty()) {
            ctx.write("cross_sections.csv", [&](std::ostream& o) {
                o << "arm,u,t,estimate\n";
                for (const auto& arm : fit.arms) {
                    for (double u0 : cross) {
                        const MatrixXd s = evaluate_surface(fit, arm, t, VectorXd::Constant(1, u0));
                        for (Index i = 0; i < t.size(); ++i) o << arm << ',' << u0 << ',' << t[i] << ',' << s(i, 0) << '\n';
                    }
                }
            });
        }
    }
    ctx.write_json("fofr_fit.json", to_json(fit));
    ctx.write("surfaces.csv", [&](std::ostream& o) { write_surfaces_plain(o, fit, t, u); });
    ctx.write("varying.csv", [&](std::ostream& o) { write_varying(o, fit, u); });
    ctx.write("scalars.csv", [&](std::ostream& o) { write_scalar_csv(o, fit.scalar_coefficients); });
    for (const auto& w : fit.warnings) ctx.warnings.push_back(w);
}

void cmd_bootstrap(Context& ctx) {
    if (ctx.cfg.at("inference").at("B").get<int>() < 2) throw InvalidArgument("bootstrap needs B >= 2");
    const std::string model = ctx.cfg.at("inference").at("model").get<std::string>();
    if (model == "fosr") return run_fosr(ctx, true);
    if (model == "twostep") return run_twostep(ctx, true);
    if (model == "fofr") return run_fofr(ctx, true);
    throw InvalidArgument("inference.model must be fosr, twostep or fofr");
}

SimTruth load_truth(Context& ctx) {
    const json& s = ctx.cfg.at("sim");
    const std::string truth = s.at("truth").get<std::string>();
    const int pool = s.at("pool_size").get<int>();
    const auto pool_seed = s.at("pool_seed").get<std::uint64_t>();
    if (truth == "default") return default_sim_truth(pool, pool_seed);
    if (truth == "curvature") return curvature_sim_truth(pool, pool_seed);
    std::ifstream f(truth);
    if (!f) throw InputError("cannot open truth file '" + truth + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ParseError("truth file '" + truth + "': " + e.what());
    }
    return sim_truth_from_json(j);
}

void cmd_simulate(Context& ctx) {
    const SimTruth truth = load_truth(ctx);
    const int n = ctx.cfg.at("sim").at("n").get<int>();
    const auto samples = generate_dataset(truth, n, ctx.seed());
    CovariateTable table;
    table.columns = {"arm", "stratum"};
    const auto invariant = truth.invariant_names();
    table.columns.insert(table.columns.end(), invariant.begin(), invariant.end());
    for (const auto& s : samples) {
        table.subject_ids.push_back(s.subject_id);
        table.text["arm"].push_back(s.arm);
        table.text["stratum"].push_back(s.stratum);
        for (const auto& name : invariant) table.numeric[name].push_back(s.covariate(name));
    }
    ctx.write("samples.csv", [&](std::ostream& o) { write_long_csv(o, samples); });
    ctx.write("covariates.csv", [&](std::ostream& o) { write_covariates(o, table); });
    ctx.write_json("truth.json", to_json(truth));
}

void cmd_benchmark(Context& ctx) {
    const SimTruth truth = load_truth(ctx);
    const json& b = ctx.cfg.at("benchmark");
    BenchmarkConfig bc;
    bc.sizes.clear();
    for (double v : number_list(b.at("n"))) bc.sizes.push_back(static_cast<int>(v));
    bc.replicates = b.at("replicates").get<int>();
    bc.num_basis = b.at("num_basis").get<int>();
    bc.seed = ctx.seed();
    bc.threads = ctx.threads;
    bc.fpca = fpca_config(ctx.cfg);
    bc.lambda_search = lambda_search(ctx.cfg);
    if (bc.sizes.empty()) throw InvalidArgument("benchmark.n must list at least one sample size");
    if (bc.replicates < 1) throw InvalidArgument("benchmark.replicates must be positive");
    const BenchmarkResult res = run_benchmark(truth, bc);
    ctx.write("benchmark.csv", [&](std::ostream& o) { write_benchmark_csv(o, res); });
    ctx.write("mean_curves.csv", [&](std::ostream& o) { write_mean_curves_csv(o, res); });
    ctx.write_json("benchmark_summary.json", benchmark_summary_json(res));
    ctx.write_json("truth.json", to_json(truth));
}

// ---------------------------------------------------------------- plumbing

struct Flag {
    std::string name;
    std::string key;
    std::string help;
};

const std::vector<Flag> kIoFlags = {
    {"--daily", "io.daily", "daily CSV (subject_id,day_index,steps)"},
    {"--long", "io.long", "long CSV (subject_id,week,value)"},
    {"--covariates", "io.covariates", "covariate CSV keyed by subject_id"},
};

const std::vector<Flag> kPreprocessFlags = {
    {"--period", "preprocess.period", "intervention or follow_up"},
    {"--min-valid-steps", "preprocess.min_valid_steps", "daily counts below this are missing"},
    {"--min-days", "preprocess.min_days_per_week", "valid days needed for a week value"},
    {"--log-transform", "preprocess.log_transform", "log of weekly means (true/false)"},
    {"--aggregate", "preprocess.aggregate", "weekly or daily"},
    {"--impute-before-average", "preprocess.impute_before_average", "FPCA-impute daily data before averaging"},
};

const std::vector<Flag> kFpcaFlags = {
    {"--pve", "fpca.pve_threshold", "proportion of variance explained"},
    {"--components", "fpca.num_components", "fixed number of components (0: PVE rule)"},
    {"--fpca-grid", "fpca.grid", "observed or period"},
    {"--criterion", "smoothing.criterion", "gcv or reml"},
};

const std::vector<Flag> kFosrFlags = {
    {"--varying", "fosr.varying", "time-varying covariates (comma list)"},
    {"--invariant", "fosr.invariant", "time-invariant covariates (comma list)"},
    {"--num-basis", "fosr.num_basis", "spline basis size (0: 20 or 7 by period)"},
    {"--random-components", "fosr.num_random_components", "eigenfunctions in Z_i(t) (-1: FPCA K)"},
    {"--lambdas", "fosr.fixed_lambdas", "fixed smoothing parameters (comma list)"},
    {"--min-obs", "fosr.min_obs", "minimum observations per subject"},
};

const std::vector<Flag> kInferenceFlags = {
    {"--bootstrap", "inference.B", "bootstrap replicates (0: none)"},
    {"--alpha", "inference.alpha", "band level"},
    {"--resampling", "inference.resampling", "plain or stratified"},
    {"--group-size", "inference.group_size", "stratified group size (0: modal cohort size)"},
};

const std::vector<Flag> kFofrFlags = {
    {"--predictor-long", "io.predictor_long", "long CSV of the predictor period"},
    {"--response-long", "io.response_long", "long CSV of the response period"},
    {"--num-basis-t", "fofr.num_basis_t", "surface basis size in t"},
    {"--num-basis-u", "fofr.num_basis_u", "surface basis size in u"},
    {"--num-basis-varying", "fofr.num_basis_varying", "basis size of mu(u) and beta_m(u)"},
    {"--quadrature", "fofr.quadrature", "linear_interpolant or trapezoid"},
    {"--reference-arm", "fofr.reference_arm", "arm without a scalar main effect"},
    {"--arm-main-effects", "fofr.arm_main_effects", "arm indicators as scalar terms"},
    {"--fofr-invariant", "fofr.invariant", "time-invariant covariates (comma list)"},
    {"--fofr-varying", "fofr.varying", "covariates with beta_m(u) (comma list)"},
    {"--fofr-random-components", "fofr.num_random_components", "eigenfunctions in Z_i(u) (-1: FPCA K)"},
    {"--fofr-min-obs", "fofr.min_obs", "minimum follow-up observations per subject"},
    {"--cross-section-u", "fofr.cross_section_u", "u values for cross-section output"},
};

const std::vector<Flag> kSimFlags = {
    {"--truth", "sim.truth", "default, curvature or a truth JSON path"},
    {"--pool-size", "sim.pool_size", "synthetic donor pool size"},
};

std::string utc_stamp(std::chrono::system_clock::time_point tp, const char* fmt) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, fmt);
    return os.str();
}

json versions() {
    return {{"funreg", FUNREG_VERSION},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"boost", BOOST_LIB_VERSION},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"cli11", CLI11_VERSION},
            {"compiler", __VERSION__}};
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Functional regression toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", FUNREG_VERSION);

    std::string config_path, out_dir;
    std::vector<std::string> sets;
    int threads = 0;
    std::deque<std::pair<std::string, std::string>> values;  // key, raw text
    std::vector<std::pair<CLI::Option*, std::size_t>> flag_options;

    struct Command {
        const char* name;
        const char* help;
        std::vector<const std::vector<Flag>*> groups;
        std::vector<Flag> extra;
        std::function<void(Context&)> body;
    };
    const std::vector<Command> commands = {
        {"preprocess", "daily steps to weekly log-mean trajectories", {&kIoFlags, &kPreprocessFlags}, {}, cmd_preprocess},
        {"fpca", "functional principal components with imputation", {&kIoFlags, &kPreprocessFlags, &kFpcaFlags}, {}, cmd_fpca},
        {"fosr",
         "function-on-scalar regression with bootstrap bands",
         {&kIoFlags, &kPreprocessFlags, &kFpcaFlags, &kFosrFlags, &kInferenceFlags},
         {},
         [](Context& c) { run_fosr(c, true); }},
        {"fofr",
         "function-on-function regression (intervention to follow-up)",
         {&kIoFlags, &kPreprocessFlags, &kFpcaFlags, &kFofrFlags, &kInferenceFlags},
         {},
         [](Context& c) { run_fofr(c, true); }},
        {"twostep",
         "FPCA scores regressed on covariates",
         {&kIoFlags, &kPreprocessFlags, &kFpcaFlags},
         {{"--terms", "twostep.covariates", "covariates of the score regressions (comma list)"}},
         [](Context& c) { run_twostep(c, false); }},
        {"bootstrap",
         "bootstrap bands for a chosen model",
         {&kIoFlags, &kPreprocessFlags, &kFpcaFlags, &kFosrFlags, &kFofrFlags, &kInferenceFlags},
         {{"--model", "inference.model", "fosr, twostep or fofr"},
          {"--terms", "twostep.covariates", "two-step covariates (comma list)"}},
         cmd_bootstrap},
        {"simulate", "synthetic data set from a simulation truth", {&kSimFlags}, {{"--n", "sim.n", "number of subjects"}}, cmd_simulate},
        {"benchmark",
         "ISE comparison of FoSR and the two-step estimator",
         {&kSimFlags, &kFpcaFlags},
         {{"--n", "benchmark.n", "sample sizes (comma list)"},
          {"--replicates", "benchmark.replicates", "replicates per sample size"},
          {"--num-basis", "benchmark.num_basis", "FoSR basis size"}},
         cmd_benchmark},
    };

    std::vector<CLI::App*> subs;
    for (const auto& cmd : commands) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_path, "JSON config file (flags override it)")->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (default runs/<timestamp>_seed<seed>)");
        sub->add_option("--threads", threads, "worker threads (default FUNREG_THREADS or 1)")->check(CLI::PositiveNumber);
        sub->add_option("--set", sets, "override any config leaf: section.key=value");
        auto add = [&](const Flag& f) {
            values.emplace_back(f.key, "");
            CLI::Option* o = sub->add_option(f.name, values.back().second, f.help + " [" + f.key + "]");
            flag_options.emplace_back(o, values.size() - 1);
        };
        add({"--seed", "seed", "master seed"});
        for (const auto* group : cmd.groups) {
            for (const auto& f : *group) add(f);
        }
        for (const auto& f : cmd.extra) add(f);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::size_t chosen = 0;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        if (subs[i]->parsed()) chosen = i;
    }
    const Command& cmd = commands[chosen];

    const auto started = std::chrono::system_clock::now();
    const auto t0 = std::chrono::steady_clock::now();
    Context ctx;
    json log = {{"command", cmd.name}, {"started_utc", utc_stamp(started, "%Y-%m-%dT%H:%M:%SZ")}, {"versions", versions()}};
    json argv_list = json::array();
    for (int i = 0; i < argc; ++i) argv_list.push_back(argv[i]);
    log["argv"] = argv_list;

    int code = 0;
    std::string kind, message;
    try {
        ctx.cfg = default_config();
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            json file;
            try {
                f >> file;
            } catch (const json::exception& e) {
                throw ParseError("config '" + config_path + "': " + e.what());
            }
            merge_config(ctx.cfg, file);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw InputError("--set expects section.key=value, got '" + s + "'");
            json& leaf = at_path(ctx.cfg, s.substr(0, eq));
            if (leaf.is_object()) throw InputError("--set targets a section, not a leaf: '" + s + "'");
            leaf = parse_leaf(leaf, s.substr(eq + 1));
        }
        for (const auto& [opt, idx] : flag_options) {
            if (opt->count() == 0) continue;
            json& leaf = at_path(ctx.cfg, values[idx].first);
            leaf = parse_leaf(leaf, values[idx].second);
        }
        ctx.threads = threads > 0 ? threads : default_thread_count();
        ctx.out = out_dir.empty() ? fs::path("runs") / (utc_stamp(started, "%Y%m%dT%H%M%SZ") + "_seed" +
                                                         std::to_string(ctx.seed()))
                                  : fs::path(out_dir);
        fs::create_directories(ctx.out);
        cmd.body(ctx);
        if (!ctx.preprocess_reports.empty()) ctx.write_json("preprocess_report.json", ctx.preprocess_reports);
    } catch (const InputError& e) {
        code = 2, kind = "input_error", message = e.what();
    } catch (const NumericalError& e) {
        code = 3, kind = "numerical_error", message = e.what();
    } catch (const json::exception& e) {
        code = 2, kind = "config_error", message = e.what();
    } catch (const fs::filesystem_error& e) {
        code = 2, kind = "io_error", message = e.what();
    } catch (const std::exception& e) {
        code = 3, kind = "internal_error", message = e.what();
    }
    for (const auto& w : ctx.warnings) std::cerr << "warning: " << w << '\n';
    if (code != 0) std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';

    if (!ctx.out.empty() && fs::is_directory(ctx.out)) {
        try {
            if (!ctx.cfg.is_null()) ctx.write_json("resolved_config.json", ctx.cfg);
            log["seed"] = ctx.cfg.is_null() ? json() : ctx.cfg.value("seed", json());
            log["threads"] = ctx.threads;
            log["out_dir"] = ctx.out.string();
            log["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log["exit_code"] = code;
            log["status"] = code == 0 ? "ok" : kind;
            if (code != 0) log["message"] = message;
            log["warnings"] = ctx.warnings;
            log["outputs"] = ctx.files;
            std::ofstream f(ctx.out / "run_log.json");
            f << log.dump(2) << '\n';
        } catch (const std::exception& e) {
            std::cerr << json{{"error", "io_error"}, {"message", e.what()}}.dump() << '\n';
            if (code == 0) code = 2;
        }
    }
    return code;
}

}  // namespace funreg::cli

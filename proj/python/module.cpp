#include "funreg/basis.hpp"
#include "funreg/data_io.hpp"
#include "funreg/errors.hpp"
#include "funreg/fosr.hpp"
#include "funreg/fpca.hpp"
#include "funreg/inference.hpp"
#include "funreg/sim.hpp"
#include "funreg/twostep.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace funreg;

namespace {

std::vector<double> as_vector(const py::object& o) {
    const auto a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(o);
    if (!a || a.ndim() != 1) throw InputError("expected a one-dimensional sequence of numbers");
    return {a.data(), a.data() + a.size()};
}

FunctionalSample make_sample(const std::string& subject_id, const py::object& times, const py::object& values,
                             std::map<std::string, double> covariates, std::string arm, std::string stratum,
                             std::optional<std::string> cohort) {
    FunctionalSample s;
    s.subject_id = subject_id;
    s.times = as_vector(times);
    s.values = as_vector(values);
    s.covariates = std::move(covariates);
    s.arm = std::move(arm);
    s.stratum = std::move(stratum);
    s.cohort = std::move(cohort);
    validate_sample(s);
    return s;
}

LambdaSearch lambda_search(const std::string& criterion) {
    LambdaSearch s = LambdaSearch::defaults();
    s.criterion = criterion == "reml" ? SmoothingCriterion::reml : SmoothingCriterion::gcv;
    if (criterion != "gcv" && criterion != "reml") throw InvalidArgument("criterion must be 'gcv' or 'reml'");
    return s;
}

}  // namespace

PYBIND11_MODULE(_funreg, m) {
    m.doc() = "Functional regression: FPCA, function-on-scalar and two-step estimators, bootstrap bands";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    auto input = py::register_exception<InputError>(m, "InputError", error.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", error.ptr());
    (void)input;

    py::class_<FunctionalSample>(m, "Sample")
        .def(py::init(&make_sample), py::arg("subject_id"), py::arg("times"), py::arg("values"),
             py::arg("covariates") = std::map<std::string, double>{}, py::arg("arm") = "", py::arg("stratum") = "",
             py::arg("cohort") = std::nullopt)
        .def_readonly("subject_id", &FunctionalSample::subject_id)
        .def_readonly("times", &FunctionalSample::times)
        .def_readonly("values", &FunctionalSample::values)
        .def_readonly("covariates", &FunctionalSample::covariates)
        .def_readonly("arm", &FunctionalSample::arm)
        .def_readonly("stratum", &FunctionalSample::stratum)
        .def_readonly("cohort", &FunctionalSample::cohort)
        .def("__repr__", [](const FunctionalSample& s) {
            return "<Sample " + s.subject_id + " with " + std::to_string(s.times.size()) + " observations>";
        });

    py::class_<BasisSystem>(m, "Basis")
        .def(py::init<double, double, int, int, int>(), py::arg("lo"), py::arg("hi"), py::arg("num_basis"),
             py::arg("degree") = 3, py::arg("penalty_order") = 2)
        .def_property_readonly("num_basis", &BasisSystem::num_basis)
        .def_property_readonly("degree", &BasisSystem::degree)
        .def_property_readonly("knots", &BasisSystem::knots)
        .def("evaluate", [](const BasisSystem& b, const VectorXd& t) { return evaluate_basis(b, t); }, py::arg("t"));

    m.def("difference_penalty", [](int dim, int order) { return difference_penalty(dim, order).entries; },
          py::arg("dim"), py::arg("order") = 2);

    py::class_<FpcaResult>(m, "FpcaResult")
        .def_readonly("subject_ids", &FpcaResult::subject_ids)
        .def_readonly("grid", &FpcaResult::grid)
        .def_readonly("quadrature_weights", &FpcaResult::quadrature_weights)
        .def_readonly("mean", &FpcaResult::mean)
        .def_readonly("eigenfunctions", &FpcaResult::eigenfunctions)
        .def_readonly("eigenvalues", &FpcaResult::eigenvalues)
        .def_readonly("scores", &FpcaResult::scores)
        .def_readonly("noise_variance", &FpcaResult::noise_variance)
        .def_readonly("pve", &FpcaResult::pve)
        .def_property_readonly("num_components", &FpcaResult::num_components);

    m.def(
        "fit_fpca",
        [](const std::vector<FunctionalSample>& samples, std::optional<VectorXd> grid, double pve, int num_components,
           const std::string& criterion) {
            FpcaConfig c;
            c.pve_threshold = pve;
            c.num_components = num_components;
            c.smoothing = lambda_search(criterion);
            py::gil_scoped_release release;
            return fit_fpca(samples, grid ? *grid : default_grid(samples), c);
        },
        py::arg("samples"), py::arg("grid") = std::nullopt, py::arg("pve") = 0.95, py::arg("num_components") = 0,
        py::arg("criterion") = "gcv");

    m.def(
        "impute_curves",
        [](const FpcaResult& fit, const std::vector<FunctionalSample>& samples, const VectorXd& grid) {
            return impute_curves(fit, samples, grid);
        },
        py::arg("fit"), py::arg("samples"), py::arg("grid"));

    py::class_<FosrFit>(m, "FosrFit")
        .def_readonly("term_names", &FosrFit::term_names)
        .def_readonly("functional_coefficients", &FosrFit::functional_coefficients)
        .def_readonly("lambdas", &FosrFit::lambdas)
        .def_readonly("effective_df", &FosrFit::effective_df)
        .def_readonly("residual_variance", &FosrFit::residual_variance)
        .def_readonly("coefficients", &FosrFit::coefficients)
        .def_readonly("warnings", &FosrFit::warnings)
        .def_property_readonly("scalar_coefficients",
                               [](const FosrFit& f) {
                                   py::dict d;
                                   for (const auto& s : f.scalar_coefficients) {
                                       d[py::str(s.name)] = py::make_tuple(s.estimate, s.std_error, s.p_value);
                                   }
                                   return d;
                               })
        .def("coefficient", [](const FosrFit& f, const std::string& term, const VectorXd& grid) {
            return predict_coefficient(f, term, grid);
        }, py::arg("term"), py::arg("grid"));

    m.def(
        "fit_fosr",
        [](const std::vector<FunctionalSample>& samples, std::vector<std::string> varying, std::vector<std::string> invariant,
           const BasisSystem& basis, int num_random_components, std::optional<std::vector<double>> lambdas,
           const std::string& criterion, int min_obs) {
            FosrSpec spec;
            spec.varying_covariates = std::move(varying);
            spec.invariant_covariates = std::move(invariant);
            spec.basis = basis;
            spec.num_random_components = num_random_components;
            spec.fixed_lambdas = std::move(lambdas);
            spec.lambda_search = lambda_search(criterion);
            spec.min_obs = min_obs;
            spec.validate();
            py::gil_scoped_release release;
            FpcaResult fpca;
            if (num_random_components > 0) {
                FpcaConfig fc;
                fc.num_components = num_random_components;
                fpca = fit_fpca(samples, default_grid(samples), fc);
            }
            return fit_fosr(samples, spec, fpca);
        },
        py::arg("samples"), py::arg("varying") = std::vector<std::string>{},
        py::arg("invariant") = std::vector<std::string>{}, py::arg("basis") = BasisSystem(1.0, 24.0, 20),
        py::arg("num_random_components") = 0, py::arg("lambdas") = std::nullopt, py::arg("criterion") = "gcv",
        py::arg("min_obs") = 4);

    py::class_<TwoStepFit>(m, "TwoStepFit")
        .def_readonly("grid", &TwoStepFit::grid)
        .def_readonly("induced_intercept", &TwoStepFit::induced_intercept)
        .def_readonly("induced_coefficients", &TwoStepFit::induced_coefficients)
        .def_readonly("covariate_names", &TwoStepFit::covariate_names)
        .def_readonly("num_components", &TwoStepFit::num_components);

    m.def(
        "fit_twostep",
        [](const std::vector<FunctionalSample>& samples, const std::vector<std::string>& covariates,
           std::optional<VectorXd> grid, double pve) {
            FpcaConfig c;
            c.pve_threshold = pve;
            py::gil_scoped_release release;
            return fit_twostep(samples, covariates, grid ? *grid : default_grid(samples), c);
        },
        py::arg("samples"), py::arg("covariates"), py::arg("grid") = std::nullopt, py::arg("pve") = 0.95);

    m.def("holm_adjust", &holm_adjust, py::arg("p"));

    py::class_<BootstrapBand>(m, "Band")
        .def_readonly("term", &BootstrapBand::term)
        .def_readonly("t", &BootstrapBand::t)
        .def_readonly("estimate", &BootstrapBand::estimate)
        .def_readonly("se", &BootstrapBand::se)
        .def_readonly("cma_quantile", &BootstrapBand::cma_quantile)
        .def_readonly("cma_lo", &BootstrapBand::cma_lo)
        .def_readonly("cma_hi", &BootstrapBand::cma_hi)
        .def_readonly("wald_lo", &BootstrapBand::wald_lo)
        .def_readonly("wald_hi", &BootstrapBand::wald_hi)
        .def_readonly("pointwise_p", &BootstrapBand::pointwise_p)
        .def_readonly("global_p", &BootstrapBand::global_p)
        .def_readonly("B", &BootstrapBand::B);

    m.def("cma_band", &cma_band, py::arg("replicates"), py::arg("estimate"), py::arg("alpha") = 0.05);

    m.def(
        "bootstrap_fosr",
        [](const std::vector<FunctionalSample>& samples, std::vector<std::string> varying, const BasisSystem& basis,
           const VectorXd& grid, int B, std::uint64_t seed, const std::string& resampling, int threads) {
            FosrSpec spec;
            spec.varying_covariates = std::move(varying);
            spec.basis = basis;
            BootstrapConfig bc;
            bc.B = B;
            bc.seed = seed;
            bc.resampling = resampling_from_string(resampling);
            bc.threads = threads;
            py::gil_scoped_release release;
            return bootstrap_fosr(samples, spec, FpcaConfig{}, grid, grid, bc).bands;
        },
        py::arg("samples"), py::arg("varying"), py::arg("basis"), py::arg("grid"), py::arg("B") = 300,
        py::arg("seed") = 1, py::arg("resampling") = "plain", py::arg("threads") = 1);

    m.def(
        "preprocess",
        [](const std::vector<std::tuple<std::string, int, double>>& records, double min_valid_steps,
           int min_days_per_week, bool log_transform, const std::string& period) {
            std::vector<DailyRecord> daily;
            for (const auto& [id, day, steps] : records) daily.push_back({id, day, steps});
            PreprocessConfig c;
            c.min_valid_steps = min_valid_steps;
            c.min_days_per_week = min_days_per_week;
            c.log_transform = log_transform;
            c.period = period_from_string(period);
            return preprocess(daily, c);
        },
        py::arg("records"), py::arg("min_valid_steps") = 1000.0, py::arg("min_days_per_week") = 3,
        py::arg("log_transform") = true, py::arg("period") = "intervention");

    m.def(
        "simulate",
        [](int n, std::uint64_t seed, const std::string& truth) {
            if (truth != "default" && truth != "curvature") throw InvalidArgument("truth must be 'default' or 'curvature'");
            const SimTruth t = truth == "default" ? default_sim_truth() : curvature_sim_truth();
            return generate_dataset(t, n, seed);
        },
        py::arg("n"), py::arg("seed") = 1, py::arg("truth") = "default");
}

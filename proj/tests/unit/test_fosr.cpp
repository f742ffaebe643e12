#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include "funreg/errors.hpp"
#include "funreg/fosr.hpp"

using namespace funreg;
using fixture::make_sample;

namespace {

FosrSpec small_spec(int L, std::vector<std::string> varying = {"x"}, int degree = 3) {
    FosrSpec spec;
    spec.basis = BasisSystem(1.0, 24.0, L, degree, 2);
    spec.varying_covariates = std::move(varying);
    return spec;
}

std::vector<FunctionalSample> two_subjects() {
    return {make_sample("a", {1, 5, 9}, {1.0, 2.0, 3.0}, {{"x", 2.0}}),
            make_sample("b", {2, 6, 24}, {0.5, 0.1, -1.0}, {{"x", -1.0}})};
}

}  // namespace

TEST_SUITE("fosr") {

TEST_CASE("long design dimensions") {
    auto spec = small_spec(4);
    spec.num_random_components = 1;
    spec.min_obs = 3;
    const auto fpca = fixture::constant_fpca(linspace(1, 24, 24), 1.0, 0.1);
    const auto d = assemble_long_design(two_subjects(), spec, fpca);
    CHECK(d.fixed.rows() == 6);
    CHECK(d.fixed.cols() == 8);
    CHECK(d.random.cols() == 2);
    CHECK(d.random.rows() == 6);
    CHECK(d.penalties.size() == 2);
    CHECK(d.random_ridge[0] == doctest::Approx(0.1));
}

TEST_CASE("hand-assembled design rows") {
    auto spec = small_spec(3, {"x"}, 2);
    spec.num_random_components = 1;
    spec.min_obs = 1;
    const auto fpca = fixture::constant_fpca(linspace(1, 24, 24), 2.0, 0.5);
    const auto s = two_subjects();
    const auto d = assemble_long_design(s, spec, fpca);
    const MatrixXd B = oracle::basis_matrix(1.0, 24.0, 3, 2, (VectorXd(6) << 1, 5, 9, 2, 6, 24).finished());
    const MatrixXd Zd = MatrixXd(d.random);
    const double phi = 1.0 / std::sqrt(23.0);
    for (Index r = 0; r < 6; ++r) {
        const double x = r < 3 ? 2.0 : -1.0;
        for (Index l = 0; l < 3; ++l) {
            CHECK(d.fixed(r, l) == doctest::Approx(B(r, l)).epsilon(1e-12));
            CHECK(d.fixed(r, 3 + l) == doctest::Approx(x * B(r, l)).epsilon(1e-12));
        }
        CHECK(Zd(r, r < 3 ? 0 : 1) == doctest::Approx(phi));
        CHECK(Zd(r, r < 3 ? 1 : 0) == 0.0);
    }
    CHECK(d.response[5] == -1.0);
    CHECK(d.subject_row_start == std::vector<Index>{0, 3});
}

TEST_CASE("subjects below min_obs are excluded and reported") {
    auto data = two_subjects();
    data.push_back(make_sample("c", {3, 4}, {0.0, 0.0}, {{"x", 1.0}}));
    auto spec = small_spec(4);
    spec.min_obs = 3;
    const auto d = assemble_long_design(data, spec, FpcaResult{});
    CHECK(d.excluded_subjects == std::vector<std::string>{"c"});
    CHECK(d.fixed.rows() == 6);
    CHECK(!d.warnings.empty());
    spec.min_obs = 5;
    CHECK_THROWS_AS(assemble_long_design(data, spec, FpcaResult{}), InputError);
}

TEST_CASE("random components beyond the FPCA fit are rejected") {
    auto spec = small_spec(4);
    spec.num_random_components = 2;
    CHECK_THROWS_AS(assemble_long_design(two_subjects(), spec, fixture::constant_fpca(linspace(1, 24, 24), 1, 1)),
                    InvalidArgument);
}

TEST_CASE("fixed-lambda fit without random effects matches the penalized LS oracle") {
    const VectorXd grid = linspace(1, 24, 24);
    const auto data = fixture::varying_data(
        30, grid, [](double t) { return std::log(t); }, [](double t) { return 0.1 * std::sin(t / 4); }, 0.0, 0.3, 0.8, 9);
    auto spec = small_spec(7);
    spec.fixed_lambdas = std::vector<double>{0.7, 3.0};
    const auto fit = fit_fosr(data, spec, FpcaResult{});
    const auto d = assemble_long_design(data, spec, FpcaResult{});
    MatrixXd P = MatrixXd::Zero(14, 14);
    P.block(0, 0, 7, 7) = 0.7 * difference_penalty(7, 2).gram();
    P.block(7, 7, 7, 7) = 3.0 * difference_penalty(7, 2).gram();
    const VectorXd ref = oracle::penalized_ls(d.fixed, d.response, P);
    CHECK((fit.coefficients - ref).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(fit.lambdas_fixed);
    CHECK(fit_report(fit).criterion == "fixed");
}

TEST_CASE("very large lambda puts coefficients in the penalty null space") {
    const VectorXd grid = linspace(1, 24, 24);
    const auto data = fixture::varying_data(
        40, grid, [](double t) { return 0.01 * (t - 12) * (t - 12); }, [](double t) { return std::cos(t / 3); }, 0.0, 0.1,
        1.0, 10);
    auto spec = small_spec(10);
    spec.fixed_lambdas = std::vector<double>{1e12, 1e12};
    const auto fit = fit_fosr(data, spec, FpcaResult{});
    const MatrixXd D = difference_penalty(10, 2).entries;
    for (Index m = 0; m < 2; ++m) {
        const VectorXd b = fit.functional_coefficients.col(m);
        CHECK((D * b).cwiseAbs().maxCoeff() <= 1e-4);
        // the curve is the image of a coefficient vector linear in the index
        VectorXd idx = VectorXd::LinSpaced(10, 0, 9);
        MatrixXd V(10, 2);
        V << VectorXd::Ones(10), idx;
        const VectorXd line = V * V.colPivHouseholderQr().solve(b);
        const VectorXd curve = evaluate_basis(spec.basis, grid) * b;
        CHECK((curve - evaluate_basis(spec.basis, grid) * line).cwiseAbs().maxCoeff() <= 1e-4);
    }
    CHECK(fit.effective_df[0] == doctest::Approx(2.0).epsilon(0.025));
    CHECK(fit.effective_df[1] == doctest::Approx(2.0).epsilon(0.025));
}

TEST_CASE("predicted coefficients and lookup errors") {
    const VectorXd grid = linspace(1, 24, 24);
    const auto data = fixture::varying_data(
        20, grid, [](double) { return 1.0; }, [](double) { return 0.5; }, 0.0, 0.05, 1.0, 11);
    auto spec = small_spec(6);
    const auto fit = fit_fosr(data, spec, FpcaResult{});
    CHECK((predict_coefficient(fit, "intercept", grid).array() - 1.0).abs().maxCoeff() <= 0.05);
    CHECK((predict_coefficient(fit, "x", grid).array() - 0.5).abs().maxCoeff() <= 0.05);
    const VectorXd direct = evaluate_basis(spec.basis, grid) * fit.functional_coefficients.col(1);
    CHECK((predict_coefficient(fit, "x", grid) - direct).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(predict_coefficient(fit, "nope", grid), LookupError);
    CHECK_THROWS_AS(predict_coefficient(fit, "x", VectorXd::Constant(1, 30.0)), DomainError);
}

TEST_CASE("subject effects absorb between-subject variation") {
    const VectorXd grid = linspace(1, 24, 24);
    auto spec = small_spec(8);
    spec.num_random_components = 1;
    const auto fpca = fixture::constant_fpca(grid, 0.5 * 23.0, 0.04);
    SUBCASE("strong subject effects") {
        const auto data = fixture::varying_data(
            60, grid, [](double t) { return std::log(t); }, [](double) { return 0.2; }, 0.7, 0.2, 0.7, 12);
        const auto rep = fit_report(fit_fosr(data, spec, fpca));
        CHECK(rep.sd_residual_means_with_z <= 0.25 * rep.sd_residual_means_without_z);
        CHECK(rep.subjects.size() == 60);
    }
    SUBCASE("no subject effects") {
        const auto data = fixture::varying_data(
            60, grid, [](double t) { return std::log(t); }, [](double) { return 0.2; }, 0.0, 0.2, 0.7, 13);
        const auto rep = fit_report(fit_fosr(data, spec, fixture::constant_fpca(grid, 1e-4, 0.04)));
        const double ratio = rep.sd_residual_means_with_z / rep.sd_residual_means_without_z;
        CHECK(ratio >= 0.8);
        CHECK(ratio <= 1.25);
    }
}

TEST_CASE("selected fits are deterministic and json is complete") {
    const VectorXd grid = linspace(1, 24, 24);
    const auto data = fixture::varying_data(
        30, grid, [](double t) { return std::sqrt(t); }, [](double t) { return 0.02 * t; }, 0.3, 0.2, 0.8, 14);
    auto spec = small_spec(8);
    spec.invariant_covariates = {};
    const auto a = fit_fosr(data, spec, FpcaResult{});
    const auto b = fit_fosr(data, spec, FpcaResult{});
    CHECK(a.coefficients == b.coefficients);
    CHECK(a.lambdas == b.lambdas);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(to_json(fit_report(a)).contains("effective_df"));
}

TEST_CASE("invariant covariates are estimated as scalars") {
    const VectorXd grid = linspace(1, 24, 24);
    auto data = fixture::varying_data(
        50, grid, [](double) { return 0.0; }, [](double) { return 0.0; }, 0.0, 0.1, 1.0, 15);
    Rng rng = make_rng(16);
    std::normal_distribution<double> z;
    for (auto& s : data) {
        const double w = z(rng);
        s.covariates["w"] = w;
        for (auto& v : s.values) v += 0.3 * w;
    }
    auto spec = small_spec(6);
    spec.invariant_covariates = {"w"};
    const auto fit = fit_fosr(data, spec, FpcaResult{});
    REQUIRE(fit.scalar_coefficients.size() == 1);
    const auto& c = fit.scalar_coefficients[0];
    CHECK(std::abs(c.estimate - 0.3) <= 4 * c.std_error);
    CHECK(c.p_value < 1e-6);
}

TEST_CASE("specification validation") {
    auto spec = small_spec(6, {"x", "x"});
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);
    spec = small_spec(6, {"intercept"});
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);
    spec = small_spec(6);
    spec.invariant_covariates = {"x"};
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);
    spec = small_spec(6);
    spec.fixed_lambdas = std::vector<double>{1.0};
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

}

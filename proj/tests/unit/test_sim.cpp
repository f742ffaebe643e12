#include "doctest.h"
#include "fixtures.hpp"

#include "funreg/errors.hpp"
#include "funreg/sim.hpp"

#include <sstream>

using namespace funreg;

TEST_SUITE("sim") {

TEST_CASE("default truths are valid") {
    for (const auto& t : {default_sim_truth(), curvature_sim_truth()}) {
        CHECK_NOTHROW(t.validate());
        CHECK(t.eigenfunctions.cols() == 2);
        const VectorXd w = trapezoid_weights(t.grid);
        const MatrixXd G = t.eigenfunctions.transpose() * w.asDiagonal() * t.eigenfunctions;
        CHECK((G - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(t.pool.size() == 600);
        CHECK(t.intercept.allFinite());
    }
    const auto t = default_sim_truth();
    CHECK(t.intercept[0] > t.intercept[t.intercept.size() - 1]);
}

TEST_CASE("noiseless generation returns the linear predictor") {
    auto t = default_sim_truth(50);
    t.eigenvalues.setZero();
    t.noise_variance = 0.0;
    const auto d = generate_dataset_detailed(t, 40, 1);
    REQUIRE(d.samples.size() == 40);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const auto& s = d.samples[i];
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            Index g = 0;
            while (t.grid[g] != s.times[j]) ++g;
            CHECK(s.values[j] == d.linear_part(static_cast<Index>(i), g));
        }
        // linear predictor from covariates
        for (Index g = 0; g < t.grid.size(); ++g) {
            double v = t.intercept[g];
            for (const auto& [name, curve] : t.varying) v += s.covariate(name) * curve[g];
            for (const auto& [name, b] : t.invariant) v += s.covariate(name) * b;
            CHECK(d.linear_part(static_cast<Index>(i), g) == doctest::Approx(v).epsilon(1e-14));
        }
    }
}

TEST_CASE("missingness pattern is copied from the donor") {
    auto t = default_sim_truth(20);
    for (auto& row : t.pool) {
        row.observed.assign(static_cast<std::size_t>(t.grid.size()), true);
        row.observed[2] = row.observed[6] = false;
    }
    for (const auto& s : generate_dataset(t, 30, 2)) {
        CHECK(s.times.size() == static_cast<std::size_t>(t.grid.size()) - 2);
        CHECK(!s.value_at(3.0));
        CHECK(!s.value_at(7.0));
        CHECK(s.value_at(4.0));
    }
}

TEST_CASE("generated moments match the truth") {
    const auto t = default_sim_truth();
    const auto d = generate_dataset_detailed(t, 2000, 3);
    for (Index k = 0; k < 2; ++k) {
        const VectorXd c = d.scores.col(k).array() - d.scores.col(k).mean();
        const double v = c.squaredNorm() / 1999.0;
        CHECK(v == doctest::Approx(t.eigenvalues[k]).epsilon(0.05));
    }
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        const auto& s = d.samples[i];
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            Index g = 0;
            while (t.grid[g] != s.times[j]) ++g;
            const double e = s.values[j] - d.linear_part(static_cast<Index>(i), g) -
                             d.scores.row(static_cast<Index>(i)).dot(t.eigenfunctions.row(g));
            sq += e * e;
            ++n;
        }
    }
    CHECK(sq / static_cast<double>(n) == doctest::Approx(t.noise_variance).epsilon(0.05));
}

TEST_CASE("per-subject missing counts follow the donor pool") {
    const auto t = default_sim_truth();
    const Index G = t.grid.size();
    std::vector<double> pool(static_cast<std::size_t>(G + 1), 0.0), gen(static_cast<std::size_t>(G + 1), 0.0);
    for (const auto& row : t.pool) pool[static_cast<std::size_t>(std::count(row.observed.begin(), row.observed.end(), false))] += 1;
    const int N = 20000;
    for (const auto& s : generate_dataset(t, N, 4)) gen[static_cast<std::size_t>(G) - s.times.size()] += 1;
    // merge sparse bins so each expected count is at least 5
    double stat = 0.0, exp_acc = 0.0, obs_acc = 0.0;
    int bins = 0;
    for (std::size_t m = 0; m < pool.size(); ++m) {
        exp_acc += pool[m] / static_cast<double>(t.pool.size()) * N;
        obs_acc += gen[m];
        if (exp_acc >= 5.0 || m + 1 == pool.size()) {
            if (exp_acc > 0) {
                stat += std::pow(obs_acc - exp_acc, 2) / exp_acc;
                ++bins;
            }
            exp_acc = obs_acc = 0.0;
        }
    }
    REQUIRE(bins >= 2);
    CHECK(chi_square_upper(stat, bins - 1) >= 0.01);
}

TEST_CASE("generation is seed-deterministic") {
    const auto t = default_sim_truth(100);
    const auto a = generate_dataset(t, 25, 5), b = generate_dataset(t, 25, 5), c = generate_dataset(t, 25, 6);
    bool same = true, differ = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        same = same && a[i].values == b[i].values && a[i].covariates == b[i].covariates && a[i].subject_id == b[i].subject_id;
        differ = differ || a[i].values != c[i].values;
    }
    CHECK(same);
    CHECK(differ);
    CHECK_THROWS_AS(generate_dataset(t, 0, 1), InvalidArgument);
}

TEST_CASE("integrated squared error") {
    const VectorXd g = linspace(0, 1, 11);
    CHECK(ise(VectorXd::Ones(11), VectorXd::Zero(11), g) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ise(g, g, g) == 0.0);
    const VectorXd f = linspace(0, 1, 1001);
    CHECK(std::abs(ise(f, VectorXd::Zero(1001), f) - 1.0 / 3.0) <= 1e-5);
    const VectorXd a = (3.0 * g.array()).sin(), b = g.array().square();
    CHECK(ise(a, b, g) == ise(b, a, g));
    CHECK(ise(a, b, g) > 0);
    CHECK_THROWS_AS(ise(a, VectorXd::Zero(3), g), InvalidArgument);
}

TEST_CASE("truth json round trip and validation") {
    const auto t = default_sim_truth(30);
    const auto back = sim_truth_from_json(to_json(t));
    CHECK(back.grid == t.grid);
    CHECK(back.intercept == t.intercept);
    CHECK(back.eigenfunctions == t.eigenfunctions);
    CHECK(back.varying_names() == t.varying_names());
    CHECK(back.invariant_names() == t.invariant_names());
    CHECK(back.pool.size() == t.pool.size());
    CHECK(to_json(back).dump() == to_json(t).dump());
    auto bad = t;
    bad.noise_variance = -1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = t;
    bad.pool.clear();
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("single-replicate benchmark is deterministic across reruns and threads") {
    const auto t = default_sim_truth(200);
    BenchmarkConfig cfg;
    cfg.sizes = {60};
    cfg.replicates = 2;
    cfg.num_basis = 10;
    auto run = [&](int threads) {
        cfg.threads = threads;
        const auto r = run_benchmark(t, cfg);
        std::ostringstream a, b;
        write_benchmark_csv(a, r);
        write_mean_curves_csv(b, r);
        return a.str() + b.str() + benchmark_summary_json(r).dump();
    };
    const std::string one = run(1);
    CHECK(one == run(1));
    CHECK(one == run(4));
    CHECK(one.rfind("method,N,replicate,coefficient,ise", 0) == 0);
    cfg.replicates = 1;
    cfg.threads = 1;
    const auto r = run_benchmark(t, cfg);
    CHECK(r.records.size() == 2 * r.coefficients.size());
    CHECK_THROWS_AS(r.summary("fosr", 999, "intercept"), LookupError);
}

}

#pragma once

#include "funreg/fosr.hpp"
#include "funreg/fpca.hpp"
#include "funreg/sample.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace funreg {

/// One resampling donor: covariates plus an observation pattern on the grid.
struct PoolRow {
    std::map<std::string, double> covariates;
    std::string arm;
    std::string stratum;
    std::vector<bool> observed;  // aligned with SimTruth::grid
};

struct SimTruth {
    VectorXd grid;
    VectorXd intercept;
    std::vector<std::pair<std::string, VectorXd>> varying;     // beta_m(t) on grid
    std::vector<std::pair<std::string, double>> invariant;     // b_m
    MatrixXd eigenfunctions;                                   // |grid| x K
    VectorXd eigenvalues;
    double noise_variance = 0.0;
    std::vector<PoolRow> pool;

    std::vector<std::string> varying_names() const;
    std::vector<std::string> invariant_names() const;
    void validate() const;
};

/// Synthetic default truth: weekly grid 1..24, decreasing intercept on the log
/// scale, three arm effects with different decay, four scalar covariates and a
/// donor pool with rising missingness.
SimTruth default_sim_truth(int pool_size = 600, std::uint64_t pool_seed = 20180212);

/// Same as the default truth but with arm effects that oscillate, so they sit
/// outside the span of a few smooth eigenfunctions.
SimTruth curvature_sim_truth(int pool_size = 600, std::uint64_t pool_seed = 20180212);

nlohmann::json to_json(const SimTruth& truth);
SimTruth sim_truth_from_json(const nlohmann::json& j);

struct SimDataset {
    std::vector<FunctionalSample> samples;
    MatrixXd scores;       // N x K latent zeta
    MatrixXd linear_part;  // N x |grid| noiseless fixed-effect predictor
};

SimDataset generate_dataset_detailed(const SimTruth& truth, int N, std::uint64_t seed);
std::vector<FunctionalSample> generate_dataset(const SimTruth& truth, int N, std::uint64_t seed);

/// Trapezoidal integral of (estimate - truth)^2.
double ise(const VectorXd& estimate, const VectorXd& truth, const VectorXd& grid);

struct BenchmarkConfig {
    std::vector<int> sizes{100, 250};
    int replicates = 200;
    std::uint64_t seed = 11;
    int threads = 1;
    int num_basis = 20;
    FpcaConfig fpca;
    LambdaSearch lambda_search = LambdaSearch::defaults();
};

struct BenchmarkRecord {
    std::string method;  // "fosr" or "twostep"
    int N = 0;
    int replicate = 0;
    std::string coefficient;
    double ise = 0.0;
};

struct BenchmarkSummary {
    std::string method;
    int N = 0;
    std::string coefficient;
    double median = 0.0, q1 = 0.0, q3 = 0.0;
    VectorXd mean_curve;
};

struct BenchmarkResult {
    VectorXd grid;
    std::vector<std::string> coefficients;  // intercept then varying names
    std::vector<BenchmarkRecord> records;
    std::vector<BenchmarkSummary> summaries;
    std::map<std::string, VectorXd> truth_curves;

    const BenchmarkSummary& summary(const std::string& method, int N, const std::string& coefficient) const;
};

struct ReplicateEstimates {
    MatrixXd fosr;     // |grid| x coefficients
    MatrixXd twostep;  // |grid| x coefficients
};

/// Fits both estimators to one data set on the truth grid.
ReplicateEstimates estimate_both(const SimTruth& truth, std::span<const FunctionalSample> data,
                                 const BenchmarkConfig& config);

BenchmarkResult run_benchmark(const SimTruth& truth, const BenchmarkConfig& config);

void write_benchmark_csv(std::ostream& out, const BenchmarkResult& result);
void write_mean_curves_csv(std::ostream& out, const BenchmarkResult& result);
nlohmann::json benchmark_summary_json(const BenchmarkResult& result);

}  // namespace funreg

#pragma once

#include "funreg/fofr.hpp"
#include "funreg/fosr.hpp"
#include "funreg/fpca.hpp"
#include "funreg/rng.hpp"
#include "funreg/twostep.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace funreg {

/// Bootstrap summary of one functional estimand on its evaluation points.
/// For surfaces the points are (t, u) pairs with t varying slowest.
struct BootstrapBand {
    std::string term;
    VectorXd t;
    VectorXd u;                 // empty for curves
    VectorXd estimate;
    MatrixXd replicate_curves;  // B x |points|
    VectorXd se;
    VectorXd wald_lo, wald_hi;
    double cma_quantile = 0.0;
    VectorXd cma_lo, cma_hi;
    VectorXd pointwise_p;
    double global_p = 1.0;
    int B = 0;
    double alpha = 0.05;
    Index degenerate_points = 0;  // points excluded from the max statistic
    bool degenerate = false;      // every point had zero SE

    Index size() const { return estimate.size(); }
};

/// Max-statistic joint band. Throws DegenerateBandError when every point has
/// zero SE.
BootstrapBand cma_band(const MatrixXd& replicate_curves, const VectorXd& estimate, double alpha);

/// cma_band with the all-degenerate case mapped to a flagged zero-width band.
BootstrapBand cma_band_or_degenerate(const MatrixXd& replicate_curves, const VectorXd& estimate, double alpha);

/// Band for beta_m1 - beta_m2 from aligned replicate sets.
BootstrapBand contrast_band(const MatrixXd& replicates_m1, const MatrixXd& replicates_m2, const VectorXd& estimate_m1,
                            const VectorXd& estimate_m2, double alpha);

enum class Resampling { plain, stratified };
const char* to_string(Resampling r);
Resampling resampling_from_string(const std::string& name);

/// Indices of a stratified/cohort bootstrap draw: arms whose subjects carry
/// cohort labels are resampled by whole cohorts, the other arms in groups of
/// `group_size` from one (stratum, arm) cell. Arm counts are preserved.
/// group_size 0 uses the modal cohort size (3 when there are no cohorts).
std::vector<std::size_t> stratified_indices(std::span<const FunctionalSample> samples, Rng& rng, int group_size = 0);
std::vector<std::size_t> plain_indices(std::size_t n, Rng& rng);

/// Materialises a draw; repeated subjects get distinct ids ("id#k").
std::vector<FunctionalSample> take(std::span<const FunctionalSample> samples, const std::vector<std::size_t>& idx);

std::vector<FunctionalSample> stratified_resample(std::span<const FunctionalSample> samples, Rng& rng,
                                                  int group_size = 0);

struct BootstrapConfig {
    int B = 300;
    std::uint64_t seed = 1;
    Resampling resampling = Resampling::plain;
    int group_size = 0;
    double alpha = 0.05;
    int threads = 1;
    double max_failure_fraction = 0.10;
};

struct ReplicateSet {
    MatrixXd values;     // B x D
    int failures = 0;    // re-drawn replicates
    std::vector<std::string> failure_messages;
};

/// Runs `statistic` on B resampled index sets. Replicate b draws from the
/// stream (seed, b, attempt); failed fits are re-drawn with the next attempt.
ReplicateSet run_replicates(std::span<const FunctionalSample> samples, const BootstrapConfig& config, Index dim,
                            const std::function<VectorXd(const std::vector<std::size_t>&)>& statistic);

struct ScalarBootstrap {
    std::string name;
    double estimate = 0.0;
    double std_error = 0.0;
    double p_value = 1.0;  // percentile bootstrap, floored at 1/B
    double lo = 0.0, hi = 0.0;
};

ScalarBootstrap percentile_summary(const std::string& name, double estimate, const VectorXd& replicates, double alpha);

struct FosrBootstrap {
    FosrFit fit;
    FpcaResult fpca;
    std::vector<BootstrapBand> bands;  // one per functional term
    std::vector<ScalarBootstrap> scalars;
    int failures = 0;
    BootstrapConfig config;

    const BootstrapBand& band(const std::string& term) const;
};

FosrBootstrap bootstrap_fosr(std::span<const FunctionalSample> samples, const FosrSpec& spec,
                             const FpcaConfig& fpca_config, const VectorXd& fpca_grid, const VectorXd& eval_grid,
                             const BootstrapConfig& config);

struct TwoStepBootstrap {
    TwoStepFit fit;
    std::vector<BootstrapBand> bands;  // intercept then covariates
    int failures = 0;
    BootstrapConfig config;
};

TwoStepBootstrap bootstrap_twostep(std::span<const FunctionalSample> samples, const std::vector<std::string>& covariates,
                                   const FpcaConfig& fpca_config, const VectorXd& grid, const BootstrapConfig& config);

struct FofrBootstrap {
    FofrFit fit;
    std::vector<BootstrapBand> surface_bands;  // per arm over (t, u) pairs
    std::vector<BootstrapBand> varying_bands;  // mu(u) and beta_m(u)
    std::vector<ScalarBootstrap> scalars;
    int failures = 0;
    BootstrapConfig config;
};

struct FofrData {
    std::span<const FunctionalSample> predictor_period;
    std::span<const FunctionalSample> response_period;
    VectorXd predictor_grid;
    VectorXd response_grid;
    FpcaConfig predictor_fpca;
    FpcaConfig response_fpca;
};

/// Fits imputation FPCA, response FPCA and the FoFR model on one data set.
FofrFit fit_fofr_pipeline(const FofrData& data, const FofrSpec& spec, FpcaResult* predictor_fpca = nullptr,
                          FpcaResult* response_fpca = nullptr);

FofrBootstrap bootstrap_fofr(const FofrData& data, const FofrSpec& spec, const VectorXd& eval_t, const VectorXd& eval_u,
                             const BootstrapConfig& config);

/// Columns: term, t[, u], estimate, se, wald_lo, wald_hi, cma_lo, cma_hi, pointwise_p.
void write_bands_csv(std::ostream& out, const std::vector<BootstrapBand>& bands);
/// Surface long CSV: arm, t, u, estimate, se, cma_lo, cma_hi, significant.
void write_surface_csv(std::ostream& out, const std::vector<BootstrapBand>& bands);
void write_scalar_bootstrap_csv(std::ostream& out, const std::vector<ScalarBootstrap>& table);
nlohmann::json band_summary(const std::vector<BootstrapBand>& bands);

}  // namespace funreg

#pragma once

#include "funreg/numerics.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace funreg {

inline constexpr const char* kIntercept = "intercept";

/// One subject's irregularly observed trajectory. Missing time points are
/// simply absent from `times`/`values`.
struct FunctionalSample {
    std::string subject_id;
    std::vector<double> times;   // strictly increasing
    std::vector<double> values;  // aligned with times, finite
    std::map<std::string, double> covariates;
    std::string arm;
    std::string stratum;
    std::optional<std::string> cohort;

    std::size_t num_observed() const { return times.size(); }

    /// Value at time t if observed (|time - t| <= tol).
    std::optional<double> value_at(double t, double tol = 1e-9) const;

    /// Numeric covariate lookup; throws LookupError naming the subject.
    double covariate(const std::string& name) const;
};

/// Checks ordering, finiteness and length invariants; throws InputError.
void validate_sample(const FunctionalSample& sample);

/// Keeps only observations with lo <= t <= hi.
FunctionalSample restrict_to_domain(const FunctionalSample& sample, double lo, double hi);

/// Row-aligned covariate matrix (n x names.size()).
MatrixXd covariate_matrix(std::span<const FunctionalSample> samples, const std::vector<std::string>& names);

}  // namespace funreg

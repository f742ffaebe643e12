#include "funreg/sample.hpp"

#include "funreg/errors.hpp"

#include <algorithm>
#include <cmath>

namespace funreg {

std::optional<double> FunctionalSample::value_at(double t, double tol) const {
    auto it = std::lower_bound(times.begin(), times.end(), t - tol);
    if (it != times.end() && std::abs(*it - t) <= tol) {
        return values[static_cast<std::size_t>(it - times.begin())];
    }
    return std::nullopt;
}

double FunctionalSample::covariate(const std::string& name) const {
    auto it = covariates.find(name);
    if (it == covariates.end()) {
        throw LookupError("subject '" + subject_id + "' has no covariate '" + name + "'");
    }
    return it->second;
}

void validate_sample(const FunctionalSample& sample) {
    if (sample.times.size() != sample.values.size()) {
        throw InputError("subject '" + sample.subject_id + "': times and values differ in length");
    }
    if (!is_strictly_increasing(sample.times)) {
        throw InputError("subject '" + sample.subject_id + "': observation times must be strictly increasing");
    }
    for (double v : sample.values) {
        if (!std::isfinite(v)) throw InputError("subject '" + sample.subject_id + "': non-finite value");
    }
}

FunctionalSample restrict_to_domain(const FunctionalSample& sample, double lo, double hi) {
    FunctionalSample out = sample;
    out.times.clear();
    out.values.clear();
    for (std::size_t i = 0; i < sample.times.size(); ++i) {
        if (sample.times[i] >= lo && sample.times[i] <= hi) {
            out.times.push_back(sample.times[i]);
            out.values.push_back(sample.values[i]);
        }
    }
    return out;
}

MatrixXd covariate_matrix(std::span<const FunctionalSample> samples, const std::vector<std::string>& names) {
    MatrixXd X(static_cast<Index>(samples.size()), static_cast<Index>(names.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t m = 0; m < names.size(); ++m) {
            X(static_cast<Index>(i), static_cast<Index>(m)) = samples[i].covariate(names[m]);
        }
    }
    return X;
}

}  // namespace funreg

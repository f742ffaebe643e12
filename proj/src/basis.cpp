#include "funreg/basis.hpp"

#include "funreg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace funreg {

BasisSystem::BasisSystem(double domain_lo, double domain_hi, int num_basis, int degree, int penalty_order)
    : lo_(domain_lo), hi_(domain_hi), num_basis_(num_basis), degree_(degree), penalty_order_(penalty_order) {
    if (!(std::isfinite(lo_) && std::isfinite(hi_) && hi_ > lo_)) {
        throw InvalidArgument("basis domain must satisfy domain_lo < domain_hi");
    }
    if (degree_ < 0) throw InvalidArgument("basis degree must be non-negative");
    if (num_basis_ < degree_ + 1) {
        throw InvalidArgument("num_basis must be at least degree + 1 (got " + std::to_string(num_basis_) + ")");
    }
    if (penalty_order_ < 1 || penalty_order_ >= num_basis_) {
        throw InvalidArgument("penalty_order must satisfy 1 <= order < num_basis");
    }
    const int interior = num_basis_ - degree_ - 1;
    knots_.resize(num_basis_ + degree_ + 1);
    Index k = 0;
    for (int i = 0; i <= degree_; ++i) knots_[k++] = lo_;
    for (int i = 1; i <= interior; ++i) {
        knots_[k++] = lo_ + (hi_ - lo_) * static_cast<double>(i) / static_cast<double>(interior + 1);
    }
    for (int i = 0; i <= degree_; ++i) knots_[k++] = hi_;
}

VectorXd BasisSystem::evaluate(double t) const {
    const double tol = 1e-12 * (hi_ - lo_);
    if (!(t >= lo_ - tol && t <= hi_ + tol)) {
        std::ostringstream msg;
        msg << "basis evaluation point " << t << " outside domain [" << lo_ << ", " << hi_ << "]";
        throw DomainError(msg.str());
    }
    t = std::clamp(t, lo_, hi_);

    // Span index s with knots[s] <= t < knots[s+1]; the right endpoint
    // belongs to the last non-empty span.
    const int p = degree_;
    int span = p;
    const int last = num_basis_ - 1;
    if (t >= knots_[last + 1]) {
        span = last;
    } else {
        auto begin = knots_.data() + p;
        auto end = knots_.data() + last + 2;
        span = static_cast<int>(std::upper_bound(begin, end, t) - knots_.data()) - 1;
        span = std::clamp(span, p, last);
    }

    // Non-zero basis functions N_{span-p..span} via the triangular scheme.
    std::vector<double> n(static_cast<std::size_t>(p + 1), 0.0);
    std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
    n[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - knots_[span + 1 - j];
        right[j] = knots_[span + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom > 0 ? n[r] / denom : 0.0;
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }

    VectorXd row = VectorXd::Zero(num_basis_);
    for (int j = 0; j <= p; ++j) row[span - p + j] = n[j];
    return row;
}

bool BasisSystem::operator==(const BasisSystem& other) const {
    return lo_ == other.lo_ && hi_ == other.hi_ && num_basis_ == other.num_basis_ && degree_ == other.degree_ &&
           penalty_order_ == other.penalty_order_;
}

MatrixXd evaluate_basis(const BasisSystem& basis, const VectorXd& t) {
    MatrixXd out(t.size(), basis.num_basis());
    for (Index r = 0; r < t.size(); ++r) out.row(r) = basis.evaluate(t[r]).transpose();
    return out;
}

PenaltyMatrix difference_penalty(int num_basis, int order) {
    if (num_basis < 1) throw InvalidArgument("difference_penalty: num_basis must be positive");
    if (order < 1 || order >= num_basis) {
        throw InvalidArgument("difference_penalty: order must satisfy 1 <= order < num_basis (order=" +
                              std::to_string(order) + ", num_basis=" + std::to_string(num_basis) + ")");
    }
    // Row pattern: (-1)^(order-j) * C(order, j), so order 1 gives (-1, 1).
    std::vector<double> pattern(static_cast<std::size_t>(order + 1));
    double binom = 1.0;
    for (int j = 0; j <= order; ++j) {
        pattern[j] = ((order - j) % 2 == 0 ? 1.0 : -1.0) * binom;
        binom = binom * static_cast<double>(order - j) / static_cast<double>(j + 1);
    }
    PenaltyMatrix pm;
    pm.dim = num_basis;
    pm.order = order;
    pm.entries = MatrixXd::Zero(num_basis - order, num_basis);
    for (int r = 0; r < num_basis - order; ++r) {
        for (int j = 0; j <= order; ++j) pm.entries(r, r + j) = pattern[j];
    }
    return pm;
}

VectorXd tensor_basis(const BasisSystem& basis_t, const BasisSystem& basis_u, double t, double u) {
    const VectorXd bt = basis_t.evaluate(t);
    const VectorXd bu = basis_u.evaluate(u);
    VectorXd out(bt.size() * bu.size());
    for (Index k1 = 0; k1 < bt.size(); ++k1) {
        out.segment(k1 * bu.size(), bu.size()) = bt[k1] * bu;
    }
    return out;
}

void to_json(nlohmann::json& j, const BasisSystem& basis) {
    j = nlohmann::json{{"domain", {basis.domain_lo(), basis.domain_hi()}},
                       {"num_basis", basis.num_basis()},
                       {"degree", basis.degree()},
                       {"penalty_order", basis.penalty_order()}};
}

BasisSystem basis_from_json(const nlohmann::json& j) {
    try {
        const auto& dom = j.at("domain");
        return BasisSystem(dom.at(0).get<double>(), dom.at(1).get<double>(), j.at("num_basis").get<int>(),
                           j.value("degree", 3), j.value("penalty_order", 2));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid basis specification: ") + e.what());
    }
}

void write_penalty_csv(std::ostream& out, const PenaltyMatrix& penalty) {
    const auto& d = penalty.entries;
    for (Index r = 0; r < d.rows(); ++r) {
        for (Index c = 0; c < d.cols(); ++c) {
            if (c) out << ',';
            out << d(r, c);
        }
        out << '\n';
    }
}

}  // namespace funreg

#pragma once

#include "funreg/numerics.hpp"

#include "json.hpp"

#include <iosfwd>

namespace funreg {

/// Univariate B-spline basis on [domain_lo, domain_hi] with equally spaced
/// interior knots and degree+1 replicated boundary knots. Immutable.
class BasisSystem {
public:
    BasisSystem(double domain_lo, double domain_hi, int num_basis, int degree = 3, int penalty_order = 2);

    double domain_lo() const { return lo_; }
    double domain_hi() const { return hi_; }
    int num_basis() const { return num_basis_; }
    int degree() const { return degree_; }
    int penalty_order() const { return penalty_order_; }
    const VectorXd& knots() const { return knots_; }

    /// Row of basis values at a single point.
    VectorXd evaluate(double t) const;

    bool operator==(const BasisSystem& other) const;

private:
    double lo_;
    double hi_;
    int num_basis_;
    int degree_;
    int penalty_order_;
    VectorXd knots_;
};

/// Difference matrix D of shape (dim - order) x dim; D b gives the
/// order-th finite differences of b.
struct PenaltyMatrix {
    int dim = 0;
    int order = 0;
    MatrixXd entries;

    /// D^T D
    MatrixXd gram() const { return entries.transpose() * entries; }
};

/// Basis matrix with row r holding B_l(t_r). Throws DomainError for points
/// outside the domain.
MatrixXd evaluate_basis(const BasisSystem& basis, const VectorXd& t);

PenaltyMatrix difference_penalty(int num_basis, int order);

/// Tensor-product basis vector at (t, u), flattened row-major over (k1, k2).
VectorXd tensor_basis(const BasisSystem& basis_t, const BasisSystem& basis_u, double t, double u);

void to_json(nlohmann::json& j, const BasisSystem& basis);
BasisSystem basis_from_json(const nlohmann::json& j);

void write_penalty_csv(std::ostream& out, const PenaltyMatrix& penalty);

}  // namespace funreg

#pragma once

// Dense SPD linear algebra and quadratic-form moment identities.

#include <Eigen/Dense>
#include <cstddef>
#include <utility>

namespace stclt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense symmetric matrix. Construction rejects inputs whose relative
/// asymmetry exceeds 1e-12 and stores the exact symmetrization.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(const Matrix& m);

    /// Symmetrizes without the asymmetry check.
    static SymMatrix from_symmetrized(const Matrix& m);
    static SymMatrix identity(Eigen::Index n);
    static SymMatrix diagonal(const Vector& d);

    Eigen::Index order() const { return m_.rows(); }
    const Matrix& matrix() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
    Matrix m_;
};

/// Lower-triangular Cholesky factor L with Q = L L^T.
class SpdFactor {
public:
    SpdFactor(Matrix lower, double log_det) : l_(std::move(lower)), log_det_(log_det) {}

    const Matrix& lower() const { return l_; }
    double log_det() const { return log_det_; }
    Eigen::Index order() const { return l_.rows(); }

    /// Solves L^T x = z. When z ~ N(0, I), x ~ N(0, Q^{-1}).
    Vector solve_upper(const Vector& z) const;
    /// Solves Q x = b.
    Vector solve(const Vector& b) const;
    Matrix inverse() const;
    Matrix reconstruct() const { return l_ * l_.transpose(); }

private:
    Matrix l_;
    double log_det_;
};

/// Throws NotSpdError with the index of the first non-positive pivot.
SpdFactor cholesky(const SymMatrix& m);

/// Symmetric S with S m S = I, via eigendecomposition.
/// Throws SingularError when an eigenvalue is <= 1e-12 * lambda_max.
SymMatrix spd_inv_sqrt(const SymMatrix& m);

/// Symmetric square root via eigendecomposition (m must be PSD).
SymMatrix spd_sqrt(const SymMatrix& m);

/// (E[Z^T M Z], Var[Z^T M Z]) for Z ~ N(0, I): (trace M, 2 trace M^2).
std::pair<double, double> quad_form_moments(const SymMatrix& m);

/// Largest eigenvalue modulus of a general square matrix.
double spectral_radius(const Matrix& m);

double frobenius_norm(const Matrix& m);

double inf_norm(const Matrix& m);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const SymMatrix& m);

}  // namespace stclt

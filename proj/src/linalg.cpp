#include "stclt/linalg.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "stclt/error.hpp"

namespace stclt {

SymMatrix::SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("SymMatrix requires a square matrix");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale)
        throw DomainError("matrix not symmetric (max asymmetry " + std::to_string(asym) + ")");
    m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::from_symmetrized(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("SymMatrix requires a square matrix");
    SymMatrix s;
    s.m_ = 0.5 * (m + m.transpose());
    return s;
}

SymMatrix SymMatrix::identity(Eigen::Index n) {
    SymMatrix s;
    s.m_ = Matrix::Identity(n, n);
    return s;
}

SymMatrix SymMatrix::diagonal(const Vector& d) {
    SymMatrix s;
    s.m_ = d.asDiagonal();
    return s;
}

Vector SpdFactor::solve_upper(const Vector& z) const {
    if (z.size() != l_.rows()) throw DimensionError("solve_upper: length mismatch");
    return l_.transpose().triangularView<Eigen::Upper>().solve(z);
}

Vector SpdFactor::solve(const Vector& b) const {
    if (b.size() != l_.rows()) throw DimensionError("solve: length mismatch");
    Vector y = l_.triangularView<Eigen::Lower>().solve(b);
    return l_.transpose().triangularView<Eigen::Upper>().solve(y);
}

Matrix SpdFactor::inverse() const {
    const Eigen::Index n = l_.rows();
    Matrix linv = l_.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
    return linv.transpose() * linv;
}

SpdFactor cholesky(const SymMatrix& sym) {
    const Matrix& a = sym.matrix();
    const Eigen::Index n = a.rows();
    Matrix l = Matrix::Zero(n, n);
    double log_det = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
        if (!(pivot > 0.0) || !std::isfinite(pivot))
            throw NotSpdError(static_cast<std::size_t>(j), pivot);
        const double ljj = std::sqrt(pivot);
        l(j, j) = ljj;
        log_det += 2.0 * std::log(ljj);
        for (Eigen::Index i = j + 1; i < n; ++i)
            l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
    return SpdFactor(std::move(l), log_det);
}

namespace {

Eigen::SelfAdjointEigenSolver<Matrix> eigen_sym(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
    if (es.info() != Eigen::Success) throw ConvergenceError("symmetric eigensolver failed");
    return es;
}

}  // namespace

SymMatrix spd_inv_sqrt(const SymMatrix& m) {
    if (m.order() == 0) throw DimensionError("spd_inv_sqrt: empty matrix");
    auto es = eigen_sym(m);
    const Vector& ev = es.eigenvalues();
    const double lmax = ev.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (!(ev(i) > 1e-12 * lmax)) {
            const Vector v = es.eigenvectors().col(i);
            throw SingularError("matrix numerically singular: eigenvalue " +
                                    std::to_string(ev(i)) + " along eigenvector " +
                                    std::to_string(i),
                                std::vector<double>(v.data(), v.data() + v.size()));
        }
    }
    const Matrix& u = es.eigenvectors();
    Vector scale = ev.cwiseSqrt().cwiseInverse();
    return SymMatrix::from_symmetrized(u * scale.asDiagonal() * u.transpose());
}

SymMatrix spd_sqrt(const SymMatrix& m) {
    auto es = eigen_sym(m);
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Matrix& u = es.eigenvectors();
    return SymMatrix::from_symmetrized(u * root.asDiagonal() * u.transpose());
}

std::pair<double, double> quad_form_moments(const SymMatrix& m) {
    const Matrix& a = m.matrix();
    // trace(M^2) = sum_ij m_ij m_ji = squared Frobenius norm for symmetric M.
    return {a.trace(), 2.0 * a.cwiseProduct(a.transpose()).sum()};
}

double spectral_radius(const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("spectral_radius requires a square matrix");
    if (m.size() == 0) return 0.0;
    if (m.isZero(0.0)) return 0.0;
    Eigen::EigenSolver<Matrix> es;
    es.setMaxIterations(static_cast<Eigen::Index>(100 * m.rows()));
    es.compute(m, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw ConvergenceError("spectral_radius: QR iteration did not converge");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double frobenius_norm(const Matrix& m) { return m.norm(); }

double inf_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

double min_eigenvalue(const SymMatrix& m) { return eigen_sym(m).eigenvalues()(0); }

}  // namespace stclt

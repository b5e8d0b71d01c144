#include "stclt/car_model.hpp"

#include <cmath>
#include <sstream>

#include "stclt/error.hpp"

namespace stclt {

namespace {

Matrix raw_precision(const CarSpec& s, double gamma) {
    const auto n = static_cast<Eigen::Index>(s.nodes());
    Matrix q = Matrix::Identity(n, n) - gamma * s.b[0];
    return s.a.asDiagonal() * q;
}

std::vector<std::string> describe(const std::vector<CarIssue>& issues) {
    std::vector<std::string> out;
    out.reserve(issues.size());
    for (const auto& i : issues) out.push_back(i.message);
    return out;
}

}  // namespace

std::vector<CarIssue> validate_spec(const CarSpec& s) {
    std::vector<CarIssue> issues;
    const auto n = static_cast<Eigen::Index>(s.nodes());

    if (s.r < 1)
        issues.push_back({CarIssueKind::dimension, -1, static_cast<double>(s.r),
                          "temporal order r must be >= 1"});
    if (s.a.size() != n)
        issues.push_back({CarIssueKind::dimension, -1, static_cast<double>(s.a.size()),
                          "a has " + std::to_string(s.a.size()) + " entries, lattice has " +
                              std::to_string(n)});
    if (s.r >= 1 && s.b.size() != static_cast<std::size_t>(s.r) + 1)
        issues.push_back({CarIssueKind::dimension, -1, static_cast<double>(s.b.size()),
                          "expected r+1 = " + std::to_string(s.r + 1) + " coupling matrices, got " +
                              std::to_string(s.b.size())});
    for (std::size_t j = 0; j < s.b.size(); ++j)
        if (s.b[j].rows() != n || s.b[j].cols() != n)
            issues.push_back({CarIssueKind::dimension, static_cast<std::ptrdiff_t>(j), 0.0,
                              "B_" + std::to_string(j) + " is not " + std::to_string(n) + "x" +
                                  std::to_string(n)});
    if (!std::isfinite(s.beta) || !std::isfinite(s.gamma))
        issues.push_back({CarIssueKind::dimension, -1, 0.0, "beta and gamma must be finite"});
    if (!issues.empty()) return issues;

    for (Eigen::Index i = 0; i < n; ++i)
        if (!(s.a(i) > 0.0))
            issues.push_back({CarIssueKind::nonpositive_a, i, s.a(i),
                              "a must be positive (node " + std::to_string(i) + ")"});
    for (Eigen::Index i = 0; i < n; ++i)
        if (s.b[0](i, i) != 0.0)
            issues.push_back({CarIssueKind::nonzero_diagonal, i, s.b[0](i, i),
                              "B_0 has nonzero diagonal at node " + std::to_string(i)});

    const Matrix ab0 = s.a.asDiagonal() * s.b[0];
    const double scale = std::max(1.0, ab0.cwiseAbs().maxCoeff());
    Eigen::Index ai = 0, aj = 0;
    const double asym = (ab0 - ab0.transpose()).cwiseAbs().maxCoeff(&ai, &aj);
    if (asym > 1e-10 * scale)
        issues.push_back({CarIssueKind::asymmetric_ab0, ai, asym,
                          "A B_0 not symmetric (max asymmetry " + std::to_string(asym) + " at node " +
                              std::to_string(ai) + ")"});

    try {
        (void)cholesky(SymMatrix::from_symmetrized(raw_precision(s, s.gamma)));
    } catch (const NotSpdError& e) {
        issues.push_back({CarIssueKind::not_spd, static_cast<std::ptrdiff_t>(e.pivot()), e.value(),
                          "precision not positive definite (pivot " + std::to_string(e.pivot()) +
                              ")"});
    }

    const double radius = spectral_radius(companion_matrix(s));
    if (!(radius < 1.0)) {
        std::ostringstream msg;
        msg << "companion matrix unstable (spectral radius " << radius << " >= 1)";
        issues.push_back({CarIssueKind::unstable, -1, radius, msg.str()});
    }
    return issues;
}

CouplingStructure parse_coupling_structure(const std::string& name) {
    if (name == "rook") return CouplingStructure::rook;
    if (name == "queen") return CouplingStructure::queen;
    if (name == "complete") return CouplingStructure::complete;
    if (name == "exponential") return CouplingStructure::exponential;
    if (name == "identity") return CouplingStructure::identity;
    if (name == "uniform") return CouplingStructure::uniform;
    throw ConfigError("unknown coupling structure '" + name + "'");
}

Matrix coupling_matrix(const Lattice& lattice, CouplingStructure kind, double value, double decay,
                       int max_range) {
    const auto n = static_cast<Eigen::Index>(lattice.size());
    Matrix b = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto& p = lattice[static_cast<std::size_t>(i)];
            const auto& q = lattice[static_cast<std::size_t>(j)];
            const int d = chebyshev_dist(p, q);
            switch (kind) {
                case CouplingStructure::rook: {
                    int manhattan = 0;
                    for (std::size_t ax = 0; ax < p.dim(); ++ax)
                        manhattan += std::abs(p.coords[ax] - q.coords[ax]);
                    if (manhattan == 1) b(i, j) = value;
                    break;
                }
                case CouplingStructure::queen:
                    if (d == 1) b(i, j) = value;
                    break;
                case CouplingStructure::complete:
                    if (i != j) b(i, j) = value;
                    break;
                case CouplingStructure::exponential:
                    if (d >= 1 && (max_range < 0 || d <= max_range))
                        b(i, j) = value * std::pow(decay, d - 1);
                    break;
                case CouplingStructure::identity:
                    if (i == j) b(i, j) = value;
                    break;
                case CouplingStructure::uniform:
                    b(i, j) = value;
                    break;
            }
        }
    }
    return b;
}

SymMatrix build_precision(const CarSpec& s) { return build_precision(s, s.gamma); }

SymMatrix build_precision(const CarSpec& s, double gamma) {
    if (s.b.empty() || s.a.size() != static_cast<Eigen::Index>(s.nodes()))
        throw DimensionError("build_precision: inconsistent spec");
    SymMatrix q = SymMatrix::from_symmetrized(raw_precision(s, gamma));
    (void)cholesky(q);
    return q;
}

Matrix companion_matrix(const CarSpec& s) {
    const auto n = static_cast<Eigen::Index>(s.nodes());
    const Eigen::Index rn = s.r * n;
    Matrix f = Matrix::Zero(rn, rn);
    for (int j = 1; j <= s.r; ++j) f.block(0, (j - 1) * n, n, n) = s.beta * s.b[j];
    for (int j = 1; j < s.r; ++j) f.block(j * n, (j - 1) * n, n, n).setIdentity();
    return f;
}

Matrix propagator(const CarSpec& s, int j) {
    if (j < 0) throw DomainError("propagator lag must be >= 0");
    return propagators(s, j).back();
}

std::vector<Matrix> propagators(const CarSpec& s, int jmax) {
    if (jmax < 0) throw DomainError("propagator lag must be >= 0");
    const auto n = static_cast<Eigen::Index>(s.nodes());
    const Matrix f = companion_matrix(s);
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(jmax) + 1);
    // Only the first block column of F^j is needed: G_j = F^j H = F G_{j-1}.
    Matrix g = Matrix::Zero(f.rows(), n);
    g.topRows(n).setIdentity();
    out.push_back(g.topRows(n));
    for (int j = 1; j <= jmax; ++j) {
        g = f * g;
        out.push_back(g.topRows(n));
    }
    return out;
}

CarModel::CarModel(CarSpec spec) : spec_(std::move(spec)), chol_(Matrix(), 0.0) {
    auto issues = validate_spec(spec_);
    std::erase_if(issues, [](const CarIssue& i) { return i.kind == CarIssueKind::unstable; });
    if (!issues.empty()) throw ModelError("invalid CAR specification", describe(issues));
    q_ = build_precision(spec_);
    chol_ = cholesky(q_);
    q_inv_ = chol_.inverse();
    q_inv_ = 0.5 * (q_inv_ + q_inv_.transpose()).eval();
    f_ = companion_matrix(spec_);
    radius_ = spectral_radius(f_);
}

Vector temporal_regressor(const CarSpec& s, const std::vector<Vector>& x, int k) {
    const auto n = static_cast<Eigen::Index>(s.nodes());
    if (k < 1 || static_cast<std::size_t>(k) > x.size())
        throw DomainError("temporal_regressor: time " + std::to_string(k) + " out of range");
    Vector xi = Vector::Zero(n);
    for (int j = 1; j <= s.r; ++j) {
        const int t = k - j;
        if (t < 0) break;
        xi.noalias() += s.b[j] * x[static_cast<std::size_t>(t)];
    }
    return xi;
}

Vector simulate_step(const CarModel& m, const std::vector<Vector>& x, RngStream& rng) {
    const int k = static_cast<int>(x.size());
    const Vector mean = m.spec().beta * temporal_regressor(m.spec(), x, k);
    const Vector z = sample_std_normal(rng, static_cast<Eigen::Index>(m.nodes()));
    return mean + m.factor().solve_upper(z);
}

CarPath simulate_path(const CarModel& m, const Vector& x0, int K, const RngStream& rng) {
    if (x0.size() != static_cast<Eigen::Index>(m.nodes()))
        throw DimensionError("simulate_path: x0 length does not match the lattice");
    if (K < 1) throw DomainError("simulate_path: K must be >= 1");
    CarPath path;
    path.seed = rng.seed();
    path.stream_path = rng.path();
    path.x.reserve(static_cast<std::size_t>(K) + 1);
    path.x.push_back(x0);
    for (int k = 1; k <= K; ++k) {
        RngStream step = rng.child({static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(Purpose::noise)});
        path.x.push_back(simulate_step(m, path.x, step));
    }
    return path;
}

Vector companion_state(const CarSpec& s, const std::vector<Vector>& x, int l) {
    const auto n = static_cast<Eigen::Index>(s.nodes());
    if (l < 0 || static_cast<std::size_t>(l) >= x.size())
        throw DomainError("companion_state: time out of range");
    Vector st = Vector::Zero(s.r * n);
    for (int j = 0; j < s.r && l - j >= 0; ++j) st.segment(j * n, n) = x[static_cast<std::size_t>(l - j)];
    return st;
}

GaussianMoments conditional_moments(const CarModel& m, const Vector& state, int steps) {
    const auto n = static_cast<Eigen::Index>(m.nodes());
    if (steps < 1) throw DomainError("conditional_moments requires k > l");
    if (state.size() != m.companion().rows())
        throw DimensionError("conditional_moments: companion state has wrong length");
    Vector s = state;
    for (int i = 0; i < steps; ++i) s = m.companion() * s;
    const auto c = propagators(m.spec(), steps - 1);
    Matrix cov = Matrix::Zero(n, n);
    for (const Matrix& cj : c) cov.noalias() += cj * m.covariance() * cj.transpose();
    return {s.head(n), 0.5 * (cov + cov.transpose())};
}

GaussianMoments conditional_moments(const CarModel& m, const CarPath& path, int l, int k) {
    if (k <= l) throw DomainError("conditional_moments requires k > l");
    return conditional_moments(m, companion_state(m.spec(), path.x, l), k - l);
}

Matrix lagged_cov(const CarModel& m, int l, int k, int m_lag) {
    if (l > k) throw DomainError("lagged_cov requires l <= k");
    if (m_lag < 0) throw DomainError("lagged_cov requires m >= 0");
    const auto n = static_cast<Eigen::Index>(m.nodes());
    const auto c = propagators(m.spec(), std::max(k - l, m_lag));
    Matrix acc = Matrix::Zero(n, n);
    for (int j = 1; j <= k - l; ++j)
        acc.noalias() += c[static_cast<std::size_t>(j)] * m.covariance() *
                         c[static_cast<std::size_t>(j)].transpose();
    return acc * c[static_cast<std::size_t>(m_lag)].transpose();
}

Matrix lagged_cov_exact(const CarModel& m, int l, int k, int m_lag) {
    if (l > k) throw DomainError("lagged_cov_exact requires l <= k");
    if (m_lag < 0) throw DomainError("lagged_cov_exact requires m >= 0");
    const auto n = static_cast<Eigen::Index>(m.nodes());
    const Matrix& f = m.companion();
    // Companion-state covariance of s_k given H_{l-1}.
    Matrix g = Matrix::Zero(f.rows(), n);
    g.topRows(n).setIdentity();
    Matrix p = Matrix::Zero(f.rows(), f.rows());
    for (int j = 0; j <= k - l; ++j) {
        p.noalias() += g * m.covariance() * g.transpose();
        g = f * g;
    }
    Matrix fm = Matrix::Identity(f.rows(), f.rows());
    for (int i = 0; i < m_lag; ++i) fm = f * fm;
    return (p * fm.transpose()).topLeftCorner(n, n);
}

Matrix stationary_lagged_cov(const CarModel& m, int m_lag) {
    if (!m.stable()) throw DomainError("stationary covariance requires a stable companion matrix");
    if (m_lag < 0) throw DomainError("stationary_lagged_cov requires m >= 0");
    const auto n = static_cast<Eigen::Index>(m.nodes());
    const Matrix& f = m.companion();
    Matrix g = Matrix::Zero(f.rows(), n);
    g.topRows(n).setIdentity();
    Matrix p = Matrix::Zero(f.rows(), f.rows());
    for (int j = 0; j < 1000000; ++j) {
        const Matrix term = g * m.covariance() * g.transpose();
        p += term;
        if (term.cwiseAbs().maxCoeff() <= 1e-16 * p.cwiseAbs().maxCoeff()) break;
        g = f * g;
    }
    Matrix fm = Matrix::Identity(f.rows(), f.rows());
    for (int i = 0; i < m_lag; ++i) fm = f * fm;
    return (p * fm.transpose()).topLeftCorner(n, n);
}

}  // namespace stclt

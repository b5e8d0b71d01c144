#include "stclt/car_inference.hpp"

#include <cmath>

#include "stclt/error.hpp"

namespace stclt {
namespace {

void check_time(const CarPath& path, int k, const char* what) {
    if (k < 1 || k > path.K())
        throw DomainError(std::string(what) + ": time " + std::to_string(k) + " outside 1.." +
                          std::to_string(path.K()));
}

Matrix precision_at(const CarSpec& s, double gamma) {
    try {
        return build_precision(s, gamma).matrix();
    } catch (const NotSpdError& e) {
        throw DomainError("Q(gamma) not positive definite at gamma = " + std::to_string(gamma) +
                          " (pivot " + std::to_string(e.pivot()) + ")");
    }
}

// [B_1 ... B_r], mapping the companion state to xi_temp.
Matrix stacked_lags(const CarSpec& s) {
    const auto n = static_cast<Eigen::Index>(s.nodes());
    Matrix b(n, s.r * n);
    for (int j = 1; j <= s.r; ++j) b.block(0, (j - 1) * n, n, n) = s.b[static_cast<std::size_t>(j)];
    return b;
}

}  // namespace

Vector xi_temp(const CarSpec& s, const CarPath& path, int k) {
    check_time(path, k, "xi_temp");
    return temporal_regressor(s, path.x, k);
}

Vector xi_spat(const CarSpec& s, const CarPath& path, int k, double beta) {
    check_time(path, k, "xi_spat");
    return s.b[0] * (path.state(k) - beta * temporal_regressor(s, path.x, k));
}

Vector residual(const CarSpec& s, const CarPath& path, int k, CarParams params) {
    check_time(path, k, "residual");
    return precision_at(s, params.gamma) * (path.state(k) - params.beta * temporal_regressor(s, path.x, k));
}

ScoreField score_field(const CarSpec& s, const CarPath& path, CarParams params) {
    const Matrix q = precision_at(s, params.gamma);
    const auto n = s.nodes();
    ScoreField sf(path.K(), n, 2);
    for (int k = 1; k <= path.K(); ++k) {
        const Vector xt = temporal_regressor(s, path.x, k);
        const Vector r = path.state(k) - params.beta * xt;
        const Vector eps = q * r;
        const Vector xs = s.b[0] * r;
        for (std::size_t l = 0; l < n; ++l) {
            const auto i = static_cast<Eigen::Index>(l);
            sf.at(k, l, 0) = eps(i) * xt(i);
            sf.at(k, l, 1) = eps(i) * xs(i);
        }
    }
    return sf;
}

Vector score_statistic(const CarSpec& s, const CarPath& path, CarParams params) {
    const Matrix q = precision_at(s, params.gamma);
    const auto n = static_cast<Eigen::Index>(s.nodes());
    Vector t = Vector::Zero(2);
    for (int k = 1; k <= path.K(); ++k) {
        const Vector xt = temporal_regressor(s, path.x, k);
        const Vector r = path.state(k) - params.beta * xt;
        const Vector eps = q * r;
        const Vector xs = s.b[0] * r;
        // Same order as score_total over score_field: nodes within a step first.
        double s0 = 0.0;
        double s1 = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            s0 += eps(i) * xt(i);
            s1 += eps(i) * xs(i);
        }
        t(0) += s0;
        t(1) += s1;
    }
    return t;
}

double lambda1_by_recursion(const CarModel& m, const Vector& x0, int K) {
    const CarSpec& s = m.spec();
    const auto n = static_cast<Eigen::Index>(s.nodes());
    if (x0.size() != n) throw DimensionError("x0 length does not match the lattice");
    if (K < 1) throw DomainError("K must be >= 1");
    const Matrix& f = m.companion();
    const Matrix& q = m.precision().matrix();
    const Matrix b = stacked_lags(s);
    const Matrix bqb = b.transpose() * q * b;

    Vector mean = Vector::Zero(f.rows());
    mean.head(n) = x0;
    Matrix cov = Matrix::Zero(f.rows(), f.rows());
    double total = 0.0;
    for (int k = 1; k <= K; ++k) {
        // Moments of the companion state at time k-1.
        total += mean.dot(bqb * mean) + (bqb.cwiseProduct(cov)).sum();
        mean = f * mean;
        cov = f * cov * f.transpose();
        cov.topLeftCorner(n, n) += m.covariance();
    }
    return total;
}

CarSigma sigma_analytic(const CarModel& m, const Vector& x0, int K) {
    const CarSpec& s = m.spec();
    const auto n = static_cast<Eigen::Index>(s.nodes());
    if (x0.size() != n) throw DimensionError("x0 length does not match the lattice");
    if (K < 1) throw DomainError("K must be >= 1");
    if (!m.stable())
        throw DomainError("analytic covariance refused: companion matrix has spectral radius " +
                          std::to_string(m.companion_radius()) + " >= 1");

    CarSigma out;
    out.lambda2 = 2.0 * K * (s.b[0] * s.b[0]).trace();

    if (s.beta != 0.0) {
        const Matrix& q = m.precision().matrix();
        const Matrix& qi = m.covariance();
        const auto c = propagators(s, K);
        // sum_k sum_{j=1}^{k-1} t_j = sum_{j=1}^{K-1} (K - j) t_j
        double acc = 0.0;
        for (int j = 1; j <= K - 1; ++j) {
            const Matrix& cj = c[static_cast<std::size_t>(j)];
            acc += (K - j) * (q * cj * qi * cj.transpose()).trace();
        }
        for (int k = 1; k <= K; ++k) {
            const Vector v = c[static_cast<std::size_t>(k)] * x0;
            acc += v.dot(q * v);
        }
        out.lambda1 = acc / (s.beta * s.beta);
    } else {
        out.lambda1 = lambda1_by_recursion(m, x0, K);
    }

    if (s.r >= 1) out.lambda1_lower_bound = K * (s.b[1] * s.b[1]).trace();
    out.lower_bound_holds = out.lambda1 >= out.lambda1_lower_bound;
    Vector d(2);
    d << out.lambda1, out.lambda2;
    out.sigma = {SymMatrix::diagonal(d), SigmaProvenance::analytic};
    return out;
}

CarEstimate estimate_params(const CarSpec& s, const CarPath& path, CarParams init,
                            CarEstimate* failed) {
    if (path.K() < 1) throw DomainError("estimation needs K >= 1");
    NewtonOptions opts;
    opts.residual_tol = 1e-8 * path.K() * static_cast<double>(s.nodes());
    const ResidualFn f = [&](const Vector& x) {
        return score_statistic(s, path, {x(0), x(1)});
    };
    Vector x0(2);
    x0 << init.beta, init.gamma;

    auto to_estimate = [](const NewtonResult& r) {
        CarEstimate e;
        if (r.x.size() == 2) {
            e.beta_hat = r.x(0);
            e.gamma_hat = r.x(1);
        }
        e.iterations = r.iterations;
        e.score_norm = r.residual.size() > 0 ? r.residual.cwiseAbs().maxCoeff() : NAN;
        e.converged = r.converged;
        e.message = r.message;
        e.trace = r.trace;
        return e;
    };

    NewtonResult partial;
    try {
        return to_estimate(newton_solve(f, x0, opts, &partial));
    } catch (const SolverError&) {
        if (failed) *failed = to_estimate(partial);
        throw;
    }
}

}  // namespace stclt

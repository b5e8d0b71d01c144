#include "stclt/newton.hpp"

#include <cmath>

#include "stclt/error.hpp"

namespace stclt {

Matrix fd_jacobian(const ResidualFn& f, const Vector& x, double rel_step) {
    const Eigen::Index n = x.size();
    Matrix jac;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x(i)));
        Vector xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const Vector fp = f(xp);
        const Vector fm = f(xm);
        if (i == 0) jac.resize(fp.size(), n);
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

NewtonResult newton_solve(const ResidualFn& f, const Vector& x0, const NewtonOptions& opts,
                          NewtonResult* partial) {
    NewtonResult res;
    auto fail = [&](const std::string& why) {
        res.message = why;
        res.converged = false;
        if (partial) *partial = res;
        throw SolverError(why);
    };

    res.x = x0;
    try {
        res.residual = f(res.x);
    } catch (const DomainError& e) {
        fail(std::string("initial point outside the residual domain: ") + e.what());
    }
    res.trace.push_back({std::vector<double>(res.x.data(), res.x.data() + res.x.size()),
                         res.residual.lpNorm<Eigen::Infinity>(), 0.0, 0});

    for (int it = 0; it < opts.max_iterations; ++it) {
        const double fnorm = res.residual.lpNorm<Eigen::Infinity>();
        if (fnorm <= opts.residual_tol) {
            res.converged = true;
            res.message = "residual below tolerance";
            if (partial) *partial = res;
            return res;
        }
        Matrix jac;
        try {
            jac = fd_jacobian(f, res.x, opts.fd_rel_step);
        } catch (const DomainError&) {
            fail("finite-difference stencil left the residual domain");
        }
        Eigen::FullPivLU<Matrix> lu(jac);
        lu.setThreshold(1e-12);
        if (lu.rank() < jac.cols() || !jac.allFinite())
            fail("singular Jacobian at iteration " + std::to_string(it));
        const Vector dx = -lu.solve(res.residual);

        double t = 1.0;
        int halvings = 0;
        Vector x_new, f_new;
        for (;;) {
            x_new = res.x + t * dx;
            bool ok = true;
            try {
                f_new = f(x_new);
                ok = f_new.allFinite() &&
                     f_new.lpNorm<Eigen::Infinity>() <= 2.0 * fnorm + opts.residual_tol;
            } catch (const DomainError&) {
                ok = false;
            }
            if (ok) break;
            if (++halvings > opts.max_halvings)
                fail("step halving limit reached at iteration " + std::to_string(it));
            t *= 0.5;
        }
        const double step = (t * dx).lpNorm<Eigen::Infinity>();
        res.x = x_new;
        res.residual = f_new;
        res.iterations = it + 1;
        res.trace.push_back({std::vector<double>(res.x.data(), res.x.data() + res.x.size()),
                             res.residual.lpNorm<Eigen::Infinity>(), step, halvings});
        if (step < opts.step_tol) {
            res.converged = true;
            res.message = "step below tolerance";
            if (partial) *partial = res;
            return res;
        }
    }
    if (res.residual.lpNorm<Eigen::Infinity>() <= opts.residual_tol) {
        res.converged = true;
        res.message = "residual below tolerance";
        if (partial) *partial = res;
        return res;
    }
    fail("iteration limit reached");
    return res;
}

}  // namespace stclt

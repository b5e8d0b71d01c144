#pragma once

// Damped Newton iteration with a central finite-difference Jacobian.

#include <functional>
#include <string>
#include <vector>

#include "stclt/linalg.hpp"

namespace stclt {

struct NewtonOptions {
    int max_iterations = 200;
    int max_halvings = 30;
    double residual_tol = 1e-8;  // on ||F||_inf
    double step_tol = 1e-12;     // on ||dx||_inf
    double fd_rel_step = 1e-6;   // h = fd_rel_step * max(1, |x_i|)
};

struct NewtonIterate {
    std::vector<double> x;
    double residual_norm;
    double step_norm;
    int halvings;
};

struct NewtonResult {
    Vector x;
    Vector residual;
    int iterations = 0;
    bool converged = false;
    std::string message;
    std::vector<NewtonIterate> trace;
};

/// Residual function. Must throw DomainError when x is outside its domain;
/// the solver then halves the step.
using ResidualFn = std::function<Vector(const Vector&)>;

/// Solves F(x) = 0. Throws SolverError (carrying the partial trace in its
/// message) when the Jacobian is singular, the domain cannot be re-entered
/// within max_halvings, or the iteration budget runs out; the partial result
/// is also written to *partial when given.
NewtonResult newton_solve(const ResidualFn& f, const Vector& x0, const NewtonOptions& opts,
                          NewtonResult* partial = nullptr);

Matrix fd_jacobian(const ResidualFn& f, const Vector& x, double rel_step);

}  // namespace stclt

#pragma once

// Pseudo-likelihood score for the CAR model, its analytic covariance, and
// estimation of (beta, gamma) by solving the estimating equations.
//
// With r_k = X_k - beta xi_temp_{k-1} and eps_k = Q(gamma) r_k the score
// contribution at node l is E_k(l) = eps_k(l) (xi_temp_{k-1}(l), xi_spat_k(l)),
// xi_spat_k = B_0 r_k.

#include <optional>
#include <string>
#include <vector>

#include "stclt/car_model.hpp"
#include "stclt/newton.hpp"
#include "stclt/score_field.hpp"

namespace stclt {

struct CarParams {
    double beta;
    double gamma;
};

/// xi_temp_{k-1} = sum_{j=1..r} B_j X_{k-j}, for 1 <= k <= K.
Vector xi_temp(const CarSpec& s, const CarPath& path, int k);

/// B_0 (X_k - beta xi_temp_{k-1}).
Vector xi_spat(const CarSpec& s, const CarPath& path, int k, double beta);
inline Vector xi_spat(const CarSpec& s, const CarPath& path, int k) {
    return xi_spat(s, path, k, s.beta);
}

/// eps_k = Q(gamma) (X_k - beta xi_temp_{k-1}).
Vector residual(const CarSpec& s, const CarPath& path, int k, CarParams params);
inline Vector residual(const CarSpec& s, const CarPath& path, int k) {
    return residual(s, path, k, {s.beta, s.gamma});
}

/// All E_k(l) at the supplied parameters. Throws DomainError when Q(gamma)
/// is not positive definite.
ScoreField score_field(const CarSpec& s, const CarPath& path, CarParams params);

/// T(beta, gamma) without materializing the field.
Vector score_statistic(const CarSpec& s, const CarPath& path, CarParams params);

enum class SigmaProvenance { analytic, replicate };

struct SigmaMatrix {
    SymMatrix value;
    SigmaProvenance provenance = SigmaProvenance::analytic;

    /// Throws SingularError naming the null direction when not SPD.
    SymMatrix inv_sqrt() const { return spd_inv_sqrt(value); }
    Eigen::Index q() const { return value.order(); }
};

struct CarSigma {
    SigmaMatrix sigma;              // diag(lambda1, lambda2)
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double lambda1_lower_bound = 0.0;  // K trace(B_1^2)
    bool lower_bound_holds = false;
};

/// Analytic Var[T | H_0]. lambda2 = 2K trace(B_0^2). lambda1 follows the
/// propagator expansion divided by beta^2 when beta != 0, and the state
/// moment recursion when beta == 0. Refuses unstable models.
CarSigma sigma_analytic(const CarModel& m, const Vector& x0, int K);

/// lambda1 = sum_k E[xi_temp_{k-1}^T Q xi_temp_{k-1} | H_0] from the moment
/// recursion of the companion state; valid for every beta.
double lambda1_by_recursion(const CarModel& m, const Vector& x0, int K);

struct CarEstimate {
    double beta_hat = 0.0;
    double gamma_hat = 0.0;
    int iterations = 0;
    double score_norm = 0.0;
    bool converged = false;
    std::string message;
    std::vector<NewtonIterate> trace;
};

/// Solves T(beta, gamma) = 0 by damped Newton with a finite-difference
/// Jacobian. Converged when ||T||_inf <= 1e-8 K |D| or the step < 1e-12.
/// Throws SolverError on a singular Jacobian, on failing to re-enter the
/// positive-definite region within 30 halvings, or after 200 iterations;
/// `failed` receives the partial result in that case.
CarEstimate estimate_params(const CarSpec& s, const CarPath& path, CarParams init,
                            CarEstimate* failed = nullptr);

}  // namespace stclt

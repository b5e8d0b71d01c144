#pragma once

// Spatio-temporal conditional autoregressive (CAR) Gaussian model.
//
// Given the past, X_k ~ N(beta * xi_temp_{k-1}, Q^{-1}) with
//   xi_temp_{k-1} = sum_{j=1..r} B_j X_{k-j}   (X_i = 0 for i < 0),
//   Q = A (I - gamma B_0),  A = diag(a).
// The order-r recursion is also carried in companion (VAR(1)) form with the
// r|D| x r|D| block matrix F; the propagators C_j are the top-left blocks of
// F^j.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stclt/lattice.hpp"
#include "stclt/linalg.hpp"
#include "stclt/rng.hpp"

namespace stclt {

struct CarSpec {
    Lattice lattice;
    int r = 1;
    Vector a;                // a_n(l) > 0 per node
    std::vector<Matrix> b;   // B_0 .. B_r
    double beta = 0.0;
    double gamma = 0.0;

    std::size_t nodes() const { return lattice.size(); }
};

enum class CarIssueKind {
    dimension,
    nonpositive_a,
    nonzero_diagonal,
    asymmetric_ab0,
    not_spd,
    unstable,
};

struct CarIssue {
    CarIssueKind kind;
    std::ptrdiff_t index;  // offending node / pivot / matrix index, -1 if none
    double value;
    std::string message;
};

/// Every violated invariant, not just the first. `unstable` is reported but
/// does not prevent building a CarModel.
std::vector<CarIssue> validate_spec(const CarSpec& s);

/// Q = A (I - gamma B_0), symmetrized. Throws NotSpdError if not SPD.
SymMatrix build_precision(const CarSpec& s);

/// Same as build_precision with an overriding gamma.
SymMatrix build_precision(const CarSpec& s, double gamma);

Matrix companion_matrix(const CarSpec& s);

/// C_j = H^T F^j H.
Matrix propagator(const CarSpec& s, int j);

/// C_0 .. C_{jmax} by repeated multiplication of F.
std::vector<Matrix> propagators(const CarSpec& s, int jmax);

enum class CouplingStructure {
    rook,         // value on axis neighbours (Manhattan distance 1)
    queen,        // value on all Chebyshev-distance-1 neighbours
    complete,     // value on every off-diagonal pair
    exponential,  // value * decay^(d-1) at Chebyshev distance d >= 1, up to max_range
    identity,     // value on the diagonal
    uniform,      // value everywhere, diagonal included
};

CouplingStructure parse_coupling_structure(const std::string& name);

/// Structured coupling matrix on a lattice, indexed in lattice order.
Matrix coupling_matrix(const Lattice& lattice, CouplingStructure kind, double value,
                       double decay = 0.5, int max_range = -1);

/// A validated spec with its precision, Cholesky factor and companion matrix.
/// Immutable after construction.
class CarModel {
public:
    /// Throws ModelError listing every hard violation (all except instability).
    explicit CarModel(CarSpec spec);

    const CarSpec& spec() const { return spec_; }
    const SymMatrix& precision() const { return q_; }
    const SpdFactor& factor() const { return chol_; }
    /// Q^{-1}.
    const Matrix& covariance() const { return q_inv_; }
    const Matrix& companion() const { return f_; }
    double companion_radius() const { return radius_; }
    bool stable() const { return radius_ < 1.0; }
    std::size_t nodes() const { return spec_.nodes(); }

private:
    CarSpec spec_;
    SymMatrix q_;
    SpdFactor chol_;
    Matrix q_inv_;
    Matrix f_;
    double radius_;
};

/// Realized path: x[0] = X_0, x[k] = X_k for k = 1..K.
struct CarPath {
    std::vector<Vector> x;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> stream_path;

    int K() const { return static_cast<int>(x.size()) - 1; }
    const Vector& x0() const { return x.front(); }
    const Vector& state(int k) const { return x.at(static_cast<std::size_t>(k)); }
};

/// sum_{j=1..r} B_j X_{k-j} over the states x[0..k-1], zero before time 0.
Vector temporal_regressor(const CarSpec& s, const std::vector<Vector>& x, int k);

/// Draws X_k given x[0..k-1] (k = x.size()); noise from rng.
Vector simulate_step(const CarModel& m, const std::vector<Vector>& x, RngStream& rng);

/// X_1..X_K from x0. Step k draws its noise from rng.child({k, noise}).
CarPath simulate_path(const CarModel& m, const Vector& x0, int K, const RngStream& rng);

struct GaussianMoments {
    Vector mean;
    Matrix cov;
};

/// Law of X_k given the companion state (X_l, X_{l-1}, ..., X_{l-r+1}) at
/// time l; `steps` = k - l >= 1.
GaussianMoments conditional_moments(const CarModel& m, const Vector& companion_state, int steps);

/// Law of X_k given the path up to time l (zero history before time 0).
GaussianMoments conditional_moments(const CarModel& m, const CarPath& path, int l, int k);

/// Companion state at time l built from x[0..l], zero before time 0.
Vector companion_state(const CarSpec& s, const std::vector<Vector>& x, int l);

/// (sum_{j=1}^{k-l} C_j Q^{-1} C_j^T) C_m^T, exactly as printed in the
/// model's covariance derivation (the j = 0 term is absent).
Matrix lagged_cov(const CarModel& m, int l, int k, int m_lag);

/// Cov[X_k, X_{k+m} | H_{l-1}] for general r, via the companion chain.
/// For r = 1 this is (sum_{j=0}^{k-l} C_j Q^{-1} C_j^T) C_m^T.
Matrix lagged_cov_exact(const CarModel& m, int l, int k, int m_lag);

/// Stationary Cov[X_k, X_{k+m}] (the l -> -infinity limit). Requires stability.
Matrix stationary_lagged_cov(const CarModel& m, int m_lag);

}  // namespace stclt

#pragma once

// Discrete-time spatial birth-death point process on a buffered planar window.
//
// Generation k is X_k = S_k u B_k u I_k: survivors of X_{k-1} (each kept with
// probability logistic(theta_0 + theta_1 Z(u))), offspring (every u in X_{k-1}
// spawns Poisson(alpha_b pi omega^2) points uniform on the Euclidean disc
// b(u, omega)), and immigrants (homogeneous Poisson, intensity rho). Points
// falling outside the simulation region are dropped.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stclt/lattice.hpp"
#include "stclt/newton.hpp"
#include "stclt/rng.hpp"
#include "stclt/score_field.hpp"

namespace stclt {

enum class PointLabel { initial, survivor, offspring, immigrant };

const char* to_string(PointLabel l);
PointLabel parse_point_label(const std::string& s);

struct Point {
    std::uint64_t id = 0;
    std::int64_t parent = -1;  // -1 when the point has no parent
    double x = 0.0;
    double y = 0.0;
    int birth_time = 0;
    PointLabel label = PointLabel::initial;
};

struct PointPattern {
    std::vector<Point> points;
    std::uint64_t next_id = 0;  // first unused id

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    Point& add(double x, double y, int birth_time, PointLabel label, std::int64_t parent = -1);
};

/// Deterministic covariate field Z(x, y).
class Covariate {
public:
    static Covariate constant(double c);
    static Covariate linear(double c0, double cx, double cy);
    /// Regular grid (ascending xs, ys); z is row-major in y then x:
    /// z[iy * xs.size() + ix]. Bilinear inside, clamped outside.
    static Covariate grid(std::vector<double> xs, std::vector<double> ys, std::vector<double> z);

    double operator()(double x, double y) const;

    enum class Kind { constant, linear, grid };
    Kind kind() const { return kind_; }

private:
    Kind kind_ = Kind::constant;
    std::array<double, 3> coef_{0.0, 0.0, 0.0};
    std::vector<double> xs_, ys_, z_;
};

/// Grid covariate from CSV rows "x,y,z" (header optional) covering a full grid.
Covariate load_covariate_grid(std::istream& in);

struct BdSpec {
    Window window{{0.0, 0.0}, {1.0, 1.0}};
    double buffer_factor = 1.0;
    double omega = 1.0;
    double alpha_b = 0.0;
    double rho = 0.0;
    std::array<double, 2> survival{0.0, 0.0};
    Covariate covariate = Covariate::constant(0.0);
    int K = 1;
    int quadrature = 64;

    /// Cubes meeting the window (the lattice D_n).
    Lattice lattice() const;
    /// Cube hull of the lattice dilated by buffer_factor * omega * K.
    Window region() const;
    double survival_prob(double x, double y) const;
    double survival_prob(double x, double y, double theta0, double theta1) const;
};

/// Throws ModelError listing every violated invariant.
void validate_bd_spec(const BdSpec& s);

struct BdPath {
    PointPattern x0;
    std::vector<PointPattern> gen;  // X_1 .. X_K

    int K() const { return static_cast<int>(gen.size()); }
    /// X_k for 0 <= k <= K.
    const PointPattern& at(int k) const { return k == 0 ? x0 : gen.at(static_cast<std::size_t>(k - 1)); }
};

/// Poisson(intensity * area) points uniform on the region, labelled initial.
PointPattern initial_pattern(const BdSpec& s, double intensity, RngStream rng);

/// X_k from X_{k-1}. Randomness is keyed per parent: survival from
/// rng.child({k, survival, id}), offspring from ({k, offspring_count, id})
/// and ({k, offspring_location, id}), immigrants from ({k, immigrant}).
PointPattern simulate_step(const BdSpec& s, const PointPattern& prev, int k, const RngStream& rng);

BdPath simulate_path(const BdSpec& s, const PointPattern& x0, const RngStream& rng);

/// Lambda_k(v) = rho + alpha_b #{u in prev : |v - u|_2 <= omega}.
double birth_intensity(const BdSpec& s, const PointPattern& prev, double vx, double vy);

/// Area of cube intersect b(u, omega) by the midpoint rule on a G x G grid of
/// subcells. Exact for cells fully inside or outside the disc; the boundary
/// error is O(1/G) relative in the worst case and averages out over
/// continuously distributed centres.
double cube_disc_overlap(const CubeRegion& cube, double ux, double uy, double omega, int G);
double cube_disc_overlap(const BdSpec& s, const CubeRegion& cube, double ux, double uy);

/// Parameters of the birth-death score: (log alpha_b, theta_0, theta_1).
struct BdParams {
    double log_alpha_b;
    double theta0;
    double theta1;
};

/// Cube-decomposed likelihood score, q = 3, over the cubes of spec.lattice().
/// Component 0 (log alpha_b): sum over births x in c(l) of alpha n(x)/Lambda(x)
/// minus alpha sum_u |c(l) n b(u, omega)|. Components 1, 2: sum over u in
/// X_{k-1} n c(l) of (s_u - p(u)) (1, Z(u)). Points are assigned to the cube
/// whose half-open cell contains them. Throws ModelError when an observed
/// birth has Lambda = 0.
ScoreField score_field(const BdSpec& s, const BdPath& path, BdParams theta);

Vector score_statistic(const BdSpec& s, const BdPath& path, BdParams theta);

struct BdEstimate {
    BdParams theta{0.0, 0.0, 0.0};
    int iterations = 0;
    double score_norm = 0.0;
    bool converged = false;
    std::string message;
    std::vector<NewtonIterate> trace;
};

/// Root of the birth-death score by damped Newton (rho treated as known).
BdEstimate estimate_bd_params(const BdSpec& s, const BdPath& path, BdParams init,
                              BdEstimate* failed = nullptr);

/// Number of points of `p` inside the closed cube.
std::size_t count_in_cube(const PointPattern& p, const CubeRegion& c);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

struct RangeCheck {
    double far_separation = 0.0;   // Chebyshev gap between the far cubes
    double far_corr = 0.0;
    bool far_pass = false;         // |far_corr| <= band
    double near_separation = 0.0;
    double near_corr = 0.0;
    bool near_pass = false;        // near_corr > band (positive control)
    double band = 0.0;             // 4 / sqrt(R)
    std::size_t replicates = 0;
};

/// Correlation of time-K counts in unit cubes separated by more than
/// 2 K omega (expected independent) and by omega / 2 (positive control).
/// Needs >= 500 replicates sharing x0; throws ConfigError when the window
/// cannot hold the far pair.
RangeCheck independence_range_check(const BdSpec& s, const std::vector<BdPath>& paths);

/// CSV rows "id,parent_id,x,y,k,label", one per point per generation.
void write_points_csv(std::ostream& out, const BdPath& path);
/// Inverse of write_points_csv. Throws InputError on malformed rows.
BdPath read_points_csv(std::istream& in);

}  // namespace stclt

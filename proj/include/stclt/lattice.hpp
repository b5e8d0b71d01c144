#pragma once

// Integer-lattice geometry: Chebyshev metric, cubes, and window covers.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace stclt {

struct LatticePoint {
    std::vector<int> coords;

    std::size_t dim() const { return coords.size(); }
    auto operator<=>(const LatticePoint&) const = default;
    bool operator==(const LatticePoint&) const = default;
};

struct LatticePointHash {
    std::size_t operator()(const LatticePoint& p) const noexcept;
};

/// Closed axis-aligned cube of side `side` centred at `center`.
struct CubeRegion {
    std::vector<double> center;
    double side = 1.0;

    CubeRegion(std::vector<double> c, double s);
    static CubeRegion around(const LatticePoint& p, double side);

    std::vector<double> lower() const;
    std::vector<double> upper() const;
};

/// Nonempty box [lower, upper] in continuous coordinates.
struct Window {
    std::vector<double> lower;
    std::vector<double> upper;

    Window(std::vector<double> lo, std::vector<double> hi);
    static Window square(double side, std::size_t dim = 2);

    std::size_t dim() const { return lower.size(); }
    double volume() const;
    Window dilated(double by) const;
    bool contains(std::span<const double> x) const;
    bool contains_window(const Window& other) const;
};

/// Finite, duplicate-free, lexicographically ordered set of lattice points.
/// Position in `points()` is the row/column index used by every matrix.
class Lattice {
public:
    Lattice(std::size_t dim, std::vector<LatticePoint> points);

    /// Full grid {0..shape[0]-1} x ... x {0..shape[d-1]-1}.
    static Lattice grid(std::span<const int> shape);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return points_.size(); }
    const std::vector<LatticePoint>& points() const { return points_; }
    const LatticePoint& operator[](std::size_t i) const { return points_[i]; }

    /// Index of `p`, or -1 when absent.
    std::ptrdiff_t index_of(const LatticePoint& p) const;

    /// Largest Chebyshev distance between two members.
    int diameter() const;

    /// Box spanned by the closed unit cubes of all members.
    Window cube_hull() const;

    /// Ordered pairs (i, j, d) with d = chebyshev(i, j) <= max_dist, i-major.
    struct Pair {
        std::size_t i;
        std::size_t j;
        int dist;
    };
    std::vector<Pair> pairs_within(int max_dist) const;

private:
    std::size_t dim_;
    std::vector<LatticePoint> points_;
    std::unordered_map<LatticePoint, std::size_t, LatticePointHash> index_;
};

double chebyshev_dist(std::span<const double> x, std::span<const double> y);
int chebyshev_dist(const LatticePoint& a, const LatticePoint& b);

/// inf over cross pairs of chebyshev_dist; both sets must be nonempty.
double set_distance(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b);

/// Chebyshev distance between two closed cubes viewed as point sets.
double cube_distance(const CubeRegion& a, const CubeRegion& b);

/// All integer points whose unit cube overlaps the window with positive volume.
Lattice cover_window(const Window& w);

bool cube_contains(const CubeRegion& c, std::span<const double> x);

/// Lattice point whose half-open unit cell [l - 1/2, l + 1/2) holds x.
/// Used to assign each continuous point to exactly one cube.
LatticePoint lattice_cell_of(std::span<const double> x);

std::vector<double> to_real(const LatticePoint& p);

}  // namespace stclt

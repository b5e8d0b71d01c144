#include "stclt/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stclt/error.hpp"

namespace stclt {

std::size_t LatticePointHash::operator()(const LatticePoint& p) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int c : p.coords) {
        h ^= static_cast<std::uint32_t>(c);
        h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
}

CubeRegion::CubeRegion(std::vector<double> c, double s) : center(std::move(c)), side(s) {
    if (!(side > 0.0)) throw DomainError("cube side must be positive");
}

CubeRegion CubeRegion::around(const LatticePoint& p, double side) {
    return CubeRegion(to_real(p), side);
}

std::vector<double> CubeRegion::lower() const {
    std::vector<double> lo(center);
    for (double& v : lo) v -= side / 2.0;
    return lo;
}

std::vector<double> CubeRegion::upper() const {
    std::vector<double> hi(center);
    for (double& v : hi) v += side / 2.0;
    return hi;
}

Window::Window(std::vector<double> lo, std::vector<double> hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.empty() || lower.size() != upper.size())
        throw DimensionError("window bounds must be nonempty and of equal length");
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i]))
            throw DomainError("window requires lower < upper in every axis (axis " +
                              std::to_string(i) + ")");
    }
}

Window Window::square(double side, std::size_t dim) {
    return Window(std::vector<double>(dim, 0.0), std::vector<double>(dim, side));
}

double Window::volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lower.size(); ++i) v *= upper[i] - lower[i];
    return v;
}

Window Window::dilated(double by) const {
    std::vector<double> lo(lower), hi(upper);
    for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] -= by;
        hi[i] += by;
    }
    return Window(std::move(lo), std::move(hi));
}

bool Window::contains(std::span<const double> x) const {
    if (x.size() != lower.size()) throw DimensionError("point/window dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
}

bool Window::contains_window(const Window& other) const {
    if (other.dim() != dim()) throw DimensionError("window dimension mismatch");
    for (std::size_t i = 0; i < dim(); ++i)
        if (other.lower[i] < lower[i] || other.upper[i] > upper[i]) return false;
    return true;
}

Lattice::Lattice(std::size_t dim, std::vector<LatticePoint> points)
    : dim_(dim), points_(std::move(points)) {
    if (dim_ == 0) throw DimensionError("lattice dimension must be positive");
    for (const auto& p : points_)
        if (p.dim() != dim_) throw DimensionError("lattice point has wrong dimension");
    std::sort(points_.begin(), points_.end());
    if (std::adjacent_find(points_.begin(), points_.end()) != points_.end())
        throw DomainError("lattice contains duplicate points");
    index_.reserve(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) index_.emplace(points_[i], i);
}

Lattice Lattice::grid(std::span<const int> shape) {
    if (shape.empty()) throw DimensionError("grid shape must be nonempty");
    std::size_t total = 1;
    for (int s : shape) {
        if (s <= 0) throw DomainError("grid extents must be positive");
        total *= static_cast<std::size_t>(s);
    }
    std::vector<LatticePoint> pts;
    pts.reserve(total);
    std::vector<int> c(shape.size(), 0);
    for (std::size_t n = 0; n < total; ++n) {
        pts.push_back(LatticePoint{c});
        for (std::size_t ax = shape.size(); ax-- > 0;) {
            if (++c[ax] < shape[ax]) break;
            c[ax] = 0;
        }
    }
    return Lattice(shape.size(), std::move(pts));
}

std::ptrdiff_t Lattice::index_of(const LatticePoint& p) const {
    auto it = index_.find(p);
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

int Lattice::diameter() const {
    if (points_.empty()) return 0;
    // Chebyshev diameter is the largest per-axis extent.
    int best = 0;
    for (std::size_t ax = 0; ax < dim_; ++ax) {
        int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
        for (const auto& p : points_) {
            lo = std::min(lo, p.coords[ax]);
            hi = std::max(hi, p.coords[ax]);
        }
        best = std::max(best, hi - lo);
    }
    return best;
}

Window Lattice::cube_hull() const {
    if (points_.empty()) throw DomainError("empty lattice has no hull");
    std::vector<double> lo(dim_, std::numeric_limits<double>::infinity());
    std::vector<double> hi(dim_, -std::numeric_limits<double>::infinity());
    for (const auto& p : points_) {
        for (std::size_t ax = 0; ax < dim_; ++ax) {
            lo[ax] = std::min(lo[ax], p.coords[ax] - 0.5);
            hi[ax] = std::max(hi[ax], p.coords[ax] + 0.5);
        }
    }
    return Window(std::move(lo), std::move(hi));
}

std::vector<Lattice::Pair> Lattice::pairs_within(int max_dist) const {
    if (max_dist < 0) throw DomainError("pair distance must be nonnegative");
    std::vector<Pair> out;
    const int span = 2 * max_dist + 1;
    std::size_t offsets = 1;
    for (std::size_t ax = 0; ax < dim_; ++ax) offsets *= static_cast<std::size_t>(span);
    if (offsets >= points_.size()) {
        // Cheaper to scan all pairs.
        for (std::size_t i = 0; i < points_.size(); ++i)
            for (std::size_t j = 0; j < points_.size(); ++j) {
                int d = chebyshev_dist(points_[i], points_[j]);
                if (d <= max_dist) out.push_back({i, j, d});
            }
        return out;
    }
    std::vector<int> off(dim_);
    for (std::size_t i = 0; i < points_.size(); ++i) {
        std::vector<std::pair<std::size_t, int>> row;
        std::fill(off.begin(), off.end(), -max_dist);
        for (std::size_t n = 0; n < offsets; ++n) {
            LatticePoint q = points_[i];
            int d = 0;
            for (std::size_t ax = 0; ax < dim_; ++ax) {
                q.coords[ax] += off[ax];
                d = std::max(d, std::abs(off[ax]));
            }
            if (auto j = index_of(q); j >= 0) row.emplace_back(static_cast<std::size_t>(j), d);
            for (std::size_t ax = dim_; ax-- > 0;) {
                if (++off[ax] <= max_dist) break;
                off[ax] = -max_dist;
            }
        }
        std::sort(row.begin(), row.end());
        for (auto [j, d] : row) out.push_back({i, j, d});
    }
    return out;
}

double chebyshev_dist(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw DimensionError("chebyshev_dist: length mismatch (" + std::to_string(x.size()) +
                             " vs " + std::to_string(y.size()) + ")");
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d = std::max(d, std::abs(x[i] - y[i]));
    return d;
}

int chebyshev_dist(const LatticePoint& a, const LatticePoint& b) {
    if (a.dim() != b.dim()) throw DimensionError("chebyshev_dist: length mismatch");
    int d = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) d = std::max(d, std::abs(a.coords[i] - b.coords[i]));
    return d;
}

double set_distance(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw DomainError("set_distance: empty point set");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : a)
        for (const auto& y : b) best = std::min(best, chebyshev_dist(x, y));
    return best;
}

double cube_distance(const CubeRegion& a, const CubeRegion& b) {
    if (a.center.size() != b.center.size()) throw DimensionError("cube dimension mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < a.center.size(); ++i) {
        double gap = std::abs(a.center[i] - b.center[i]) - (a.side + b.side) / 2.0;
        d = std::max(d, gap);
    }
    return d;
}

Lattice cover_window(const Window& w) {
    const std::size_t d = w.dim();
    // Cubes count when they overlap the window with positive volume:
    // lo - 1/2 < l < hi + 1/2. Mere boundary contact does not add a layer.
    std::vector<int> first(d), last(d);
    std::size_t total = 1;
    for (std::size_t ax = 0; ax < d; ++ax) {
        first[ax] = static_cast<int>(std::floor(w.lower[ax] - 0.5)) + 1;
        last[ax] = static_cast<int>(std::ceil(w.upper[ax] + 0.5)) - 1;
        total *= static_cast<std::size_t>(last[ax] - first[ax] + 1);
    }
    std::vector<LatticePoint> pts;
    pts.reserve(total);
    std::vector<int> c(first);
    for (std::size_t n = 0; n < total; ++n) {
        pts.push_back(LatticePoint{c});
        for (std::size_t ax = d; ax-- > 0;) {
            if (++c[ax] <= last[ax]) break;
            c[ax] = first[ax];
        }
    }
    return Lattice(d, std::move(pts));
}

bool cube_contains(const CubeRegion& c, std::span<const double> x) {
    return chebyshev_dist(x, c.center) <= c.side / 2.0;
}

LatticePoint lattice_cell_of(std::span<const double> x) {
    LatticePoint p;
    p.coords.reserve(x.size());
    for (double v : x) p.coords.push_back(static_cast<int>(std::floor(v + 0.5)));
    return p;
}

std::vector<double> to_real(const LatticePoint& p) {
    return std::vector<double>(p.coords.begin(), p.coords.end());
}

}  // namespace stclt

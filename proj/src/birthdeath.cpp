#include "stclt/birthdeath.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "stclt/error.hpp"

namespace stclt {

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Bucket grid over the points of one generation, cell side >= omega, so a
// disc query only visits the 3x3 block of cells around the query point.
class GridIndex {
public:
    GridIndex(const PointPattern& p, double cell) : pts_(&p.points), cell_(cell) {
        if (p.empty()) return;
        double x0 = p.points[0].x, y0 = p.points[0].y, x1 = x0, y1 = y0;
        for (const auto& q : p.points) {
            x0 = std::min(x0, q.x);
            y0 = std::min(y0, q.y);
            x1 = std::max(x1, q.x);
            y1 = std::max(y1, q.y);
        }
        ox_ = x0;
        oy_ = y0;
        nx_ = static_cast<long>(std::floor((x1 - x0) / cell_)) + 1;
        ny_ = static_cast<long>(std::floor((y1 - y0) / cell_)) + 1;
        start_.assign(static_cast<std::size_t>(nx_ * ny_) + 1, 0);
        std::vector<std::size_t> cell_of(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            cell_of[i] = flat(cx(p.points[i].x), cy(p.points[i].y));
            ++start_[cell_of[i] + 1];
        }
        for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
        order_.resize(p.size());
        std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
        for (std::size_t i = 0; i < p.size(); ++i) order_[fill[cell_of[i]]++] = i;
    }

    // Number of points within Euclidean distance r <= cell of (x, y).
    int count_within(double x, double y, double r) const {
        if (order_.empty()) return 0;
        const long gx = static_cast<long>(std::floor((x - ox_) / cell_));
        const long gy = static_cast<long>(std::floor((y - oy_) / cell_));
        const double r2 = r * r;
        int n = 0;
        for (long ix = std::max(0L, gx - 1); ix <= std::min(nx_ - 1, gx + 1); ++ix)
            for (long iy = std::max(0L, gy - 1); iy <= std::min(ny_ - 1, gy + 1); ++iy) {
                const std::size_t c = static_cast<std::size_t>(ix * ny_ + iy);
                for (std::size_t t = start_[c]; t < start_[c + 1]; ++t) {
                    const Point& q = (*pts_)[order_[t]];
                    const double dx = q.x - x, dy = q.y - y;
                    if (dx * dx + dy * dy <= r2) ++n;
                }
            }
        return n;
    }

private:
    long cx(double x) const { return std::clamp(static_cast<long>(std::floor((x - ox_) / cell_)), 0L, nx_ - 1); }
    long cy(double y) const { return std::clamp(static_cast<long>(std::floor((y - oy_) / cell_)), 0L, ny_ - 1); }
    std::size_t flat(long ix, long iy) const { return static_cast<std::size_t>(ix * ny_ + iy); }

    const std::vector<Point>* pts_;
    double cell_;
    double ox_ = 0.0, oy_ = 0.0;
    long nx_ = 0, ny_ = 0;
    std::vector<std::size_t> start_;
    std::vector<std::size_t> order_;
};

std::uint64_t u64(int k) { return static_cast<std::uint64_t>(k); }
std::uint64_t u64(Purpose p) { return static_cast<std::uint64_t>(p); }

bool inside(const Window& w, double x, double y) {
    const double v[2] = {x, y};
    return w.contains(v);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <class T>
bool parse_num(const std::string& s, T& v) {
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && *b == ' ') ++b;
    while (e > b && e[-1] == ' ') --e;
    auto [p, ec] = std::from_chars(b, e, v);
    return ec == std::errc() && p == e;
}

}  // namespace

const char* to_string(PointLabel l) {
    switch (l) {
        case PointLabel::initial: return "initial";
        case PointLabel::survivor: return "survivor";
        case PointLabel::offspring: return "offspring";
        case PointLabel::immigrant: return "immigrant";
    }
    return "?";
}

PointLabel parse_point_label(const std::string& s) {
    if (s == "initial") return PointLabel::initial;
    if (s == "survivor") return PointLabel::survivor;
    if (s == "offspring") return PointLabel::offspring;
    if (s == "immigrant") return PointLabel::immigrant;
    throw InputError("unknown point label '" + s + "'");
}

Point& PointPattern::add(double x, double y, int birth_time, PointLabel label, std::int64_t parent) {
    points.push_back(Point{next_id++, parent, x, y, birth_time, label});
    return points.back();
}

Covariate Covariate::constant(double c) {
    Covariate z;
    z.kind_ = Kind::constant;
    z.coef_ = {c, 0.0, 0.0};
    return z;
}

Covariate Covariate::linear(double c0, double cx, double cy) {
    Covariate z;
    z.kind_ = Kind::linear;
    z.coef_ = {c0, cx, cy};
    return z;
}

Covariate Covariate::grid(std::vector<double> xs, std::vector<double> ys, std::vector<double> z) {
    if (xs.size() < 2 || ys.size() < 2) throw InputError("covariate grid needs >= 2 nodes per axis");
    if (z.size() != xs.size() * ys.size()) throw InputError("covariate grid size mismatch");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1])) throw InputError("covariate grid x nodes must increase");
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (!(ys[i] > ys[i - 1])) throw InputError("covariate grid y nodes must increase");
    Covariate c;
    c.kind_ = Kind::grid;
    c.xs_ = std::move(xs);
    c.ys_ = std::move(ys);
    c.z_ = std::move(z);
    return c;
}

double Covariate::operator()(double x, double y) const {
    switch (kind_) {
        case Kind::constant: return coef_[0];
        case Kind::linear: return coef_[0] + coef_[1] * x + coef_[2] * y;
        case Kind::grid: break;
    }
    auto locate = [](const std::vector<double>& g, double v, std::size_t& i, double& t) {
        v = std::clamp(v, g.front(), g.back());
        i = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), v) - g.begin());
        i = std::clamp<std::size_t>(i, 1, g.size() - 1) - 1;
        t = (v - g[i]) / (g[i + 1] - g[i]);
    };
    std::size_t ix, iy;
    double tx, ty;
    locate(xs_, x, ix, tx);
    locate(ys_, y, iy, ty);
    const std::size_t nx = xs_.size();
    const double z00 = z_[iy * nx + ix], z10 = z_[iy * nx + ix + 1];
    const double z01 = z_[(iy + 1) * nx + ix], z11 = z_[(iy + 1) * nx + ix + 1];
    return (1 - ty) * ((1 - tx) * z00 + tx * z10) + ty * ((1 - tx) * z01 + tx * z11);
}

Covariate load_covariate_grid(std::istream& in) {
    std::map<std::pair<double, double>, double> cells;  // (y, x) -> z
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_csv(line);
        double x, y, z;
        const bool ok = f.size() == 3 && parse_num(f[0], x) && parse_num(f[1], y) && parse_num(f[2], z);
        const bool header = first && !ok;
        first = false;
        if (header) continue;
        if (!ok) throw InputError("covariate grid: malformed row at line " + std::to_string(lineno));
        cells[{y, x}] = z;
    }
    std::vector<double> xs, ys;
    for (const auto& [k, v] : cells) {
        ys.push_back(k.first);
        xs.push_back(k.second);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    if (cells.size() != xs.size() * ys.size())
        throw InputError("covariate grid: rows do not form a complete rectangular grid");
    std::vector<double> z;
    z.reserve(cells.size());
    for (const auto& [k, v] : cells) z.push_back(v);  // ordered by y then x
    return Covariate::grid(std::move(xs), std::move(ys), std::move(z));
}

Lattice BdSpec::lattice() const { return cover_window(window); }

Window BdSpec::region() const { return lattice().cube_hull().dilated(buffer_factor * omega * K); }

double BdSpec::survival_prob(double x, double y) const {
    return survival_prob(x, y, survival[0], survival[1]);
}

double BdSpec::survival_prob(double x, double y, double theta0, double theta1) const {
    return logistic(theta0 + theta1 * covariate(x, y));
}

void validate_bd_spec(const BdSpec& s) {
    std::vector<std::string> issues;
    if (s.window.dim() != 2) issues.push_back("birth-death window must be planar");
    if (!(s.omega > 0.0) || !std::isfinite(s.omega)) issues.push_back("omega must be positive");
    if (!(s.alpha_b >= 0.0) || !std::isfinite(s.alpha_b)) issues.push_back("alpha_b must be >= 0");
    if (!(s.rho >= 0.0) || !std::isfinite(s.rho)) issues.push_back("rho must be >= 0");
    if (!(s.buffer_factor >= 0.0)) issues.push_back("buffer_factor must be >= 0");
    if (s.K < 1) issues.push_back("K must be >= 1");
    if (s.quadrature < 4) issues.push_back("quadrature must be >= 4 subcells per axis");
    if (!std::isfinite(s.survival[0]) || !std::isfinite(s.survival[1]))
        issues.push_back("survival coefficients must be finite");
    if (issues.empty()) {
        // Finite coefficients keep p in (0, 1); check the covariate is finite
        // at the region corners and centre.
        const Window r = s.region();
        const double xs[3] = {r.lower[0], 0.5 * (r.lower[0] + r.upper[0]), r.upper[0]};
        const double ys[3] = {r.lower[1], 0.5 * (r.lower[1] + r.upper[1]), r.upper[1]};
        bool finite = true;
        for (double x : xs)
            for (double y : ys) finite = finite && std::isfinite(s.survival_prob(x, y));
        if (!finite) issues.push_back("survival probability not finite on the region");
    }
    if (!issues.empty()) throw ModelError("invalid birth-death specification", issues);
}

PointPattern initial_pattern(const BdSpec& s, double intensity, RngStream rng) {
    if (!(intensity >= 0.0)) throw DomainError("initial intensity must be >= 0");
    const Window r = s.region();
    PointPattern p;
    const std::uint64_t n = rng.poisson(intensity * r.volume());
    for (std::uint64_t i = 0; i < n; ++i) {
        const double x = r.lower[0] + (r.upper[0] - r.lower[0]) * rng.uniform();
        const double y = r.lower[1] + (r.upper[1] - r.lower[1]) * rng.uniform();
        p.add(x, y, 0, PointLabel::initial);
    }
    return p;
}

PointPattern simulate_step(const BdSpec& s, const PointPattern& prev, int k, const RngStream& rng) {
    const Window region = s.region();
    PointPattern next;
    next.next_id = prev.next_id;
    const double mean_offspring = s.alpha_b * std::numbers::pi * s.omega * s.omega;

    for (const Point& u : prev.points) {
        RngStream sr = rng.child({u64(k), u64(Purpose::survival), u.id});
        if (sr.bernoulli(s.survival_prob(u.x, u.y))) {
            Point v = u;
            v.label = PointLabel::survivor;
            next.points.push_back(v);
        }
    }
    for (const Point& u : prev.points) {
        RngStream cr = rng.child({u64(k), u64(Purpose::offspring_count), u.id});
        const std::uint64_t n = cr.poisson(mean_offspring);
        if (n == 0) continue;
        RngStream lr = rng.child({u64(k), u64(Purpose::offspring_location), u.id});
        for (std::uint64_t i = 0; i < n; ++i) {
            const double rad = s.omega * std::sqrt(lr.uniform());
            const double ang = 2.0 * std::numbers::pi * lr.uniform();
            const double x = u.x + rad * std::cos(ang);
            const double y = u.y + rad * std::sin(ang);
            if (inside(region, x, y))
                next.add(x, y, k, PointLabel::offspring, static_cast<std::int64_t>(u.id));
        }
    }
    RngStream ir = rng.child({u64(k), u64(Purpose::immigrant)});
    const std::uint64_t m = ir.poisson(s.rho * region.volume());
    for (std::uint64_t i = 0; i < m; ++i) {
        const double x = region.lower[0] + (region.upper[0] - region.lower[0]) * ir.uniform();
        const double y = region.lower[1] + (region.upper[1] - region.lower[1]) * ir.uniform();
        next.add(x, y, k, PointLabel::immigrant);
    }
    return next;
}

BdPath simulate_path(const BdSpec& s, const PointPattern& x0, const RngStream& rng) {
    const Window region = s.region();
    for (const Point& p : x0.points)
        if (!inside(region, p.x, p.y))
            throw DomainError("initial point " + std::to_string(p.id) + " outside the simulation region");
    BdPath path;
    path.x0 = x0;
    path.gen.reserve(static_cast<std::size_t>(s.K));
    for (int k = 1; k <= s.K; ++k) path.gen.push_back(simulate_step(s, path.at(k - 1), k, rng));
    return path;
}

double birth_intensity(const BdSpec& s, const PointPattern& prev, double vx, double vy) {
    const double r2 = s.omega * s.omega;
    int n = 0;
    for (const Point& u : prev.points) {
        const double dx = u.x - vx, dy = u.y - vy;
        if (dx * dx + dy * dy <= r2) ++n;
    }
    return s.rho + s.alpha_b * n;
}

double cube_disc_overlap(const CubeRegion& cube, double ux, double uy, double omega, int G) {
    if (cube.center.size() != 2) throw DimensionError("cube_disc_overlap is planar");
    if (G < 1) throw DomainError("quadrature needs G >= 1");
    const double h = cube.side / G;
    const double lx = cube.center[0] - 0.5 * cube.side;
    const double ly = cube.center[1] - 0.5 * cube.side;
    long hits = 0;
    for (int j = 0; j < G; ++j) {
        const double dy = ly + (j + 0.5) * h - uy;
        const double rem = omega * omega - dy * dy;
        if (rem < 0.0) continue;
        const double half = std::sqrt(rem);
        // Midpoints lx + (i + 1/2) h with |x - ux| <= half.
        const double lo = (ux - half - lx) / h - 0.5;
        const double hi = (ux + half - lx) / h - 0.5;
        const long i0 = std::max(0L, static_cast<long>(std::ceil(lo)));
        const long i1 = std::min(static_cast<long>(G) - 1, static_cast<long>(std::floor(hi)));
        if (i1 >= i0) hits += i1 - i0 + 1;
    }
    return static_cast<double>(hits) * h * h;
}

double cube_disc_overlap(const BdSpec& s, const CubeRegion& cube, double ux, double uy) {
    return cube_disc_overlap(cube, ux, uy, s.omega, s.quadrature);
}

ScoreField score_field(const BdSpec& s, const BdPath& path, BdParams theta) {
    const Lattice lat = s.lattice();
    const double alpha = std::exp(theta.log_alpha_b);
    ScoreField sf(path.K(), lat.size(), 3);
    auto cube_index = [&](double x, double y) {
        const double v[2] = {x, y};
        return lat.index_of(lattice_cell_of(v));
    };

    for (int k = 1; k <= path.K(); ++k) {
        const PointPattern& prev = path.at(k - 1);
        const PointPattern& cur = path.at(k);

        std::unordered_set<std::uint64_t> survived;
        for (const Point& v : cur.points)
            if (v.label == PointLabel::survivor) survived.insert(v.id);

        for (const Point& u : prev.points) {
            const auto idx = cube_index(u.x, u.y);
            if (idx < 0) continue;
            const double p = s.survival_prob(u.x, u.y, theta.theta0, theta.theta1);
            const double r = (survived.count(u.id) ? 1.0 : 0.0) - p;
            const auto l = static_cast<std::size_t>(idx);
            sf.at(k, l, 1) += r;
            sf.at(k, l, 2) += r * s.covariate(u.x, u.y);
        }

        const GridIndex index(prev, s.omega);
        for (const Point& x : cur.points) {
            if (x.label == PointLabel::survivor) continue;
            const auto idx = cube_index(x.x, x.y);
            if (idx < 0) continue;
            const int n = index.count_within(x.x, x.y, s.omega);
            const double lambda = s.rho + alpha * n;
            if (!(lambda > 0.0))
                throw ModelError("birth at (" + std::to_string(x.x) + ", " + std::to_string(x.y) +
                                 ") at time " + std::to_string(k) +
                                 " has zero intensity: no parent within omega and rho = 0");
            sf.at(k, static_cast<std::size_t>(idx), 0) += alpha * n / lambda;
        }

        for (const Point& u : prev.points) {
            const int x0 = static_cast<int>(std::floor(u.x - s.omega + 0.5));
            const int x1 = static_cast<int>(std::floor(u.x + s.omega + 0.5));
            const int y0 = static_cast<int>(std::floor(u.y - s.omega + 0.5));
            const int y1 = static_cast<int>(std::floor(u.y + s.omega + 0.5));
            for (int cx = x0; cx <= x1; ++cx)
                for (int cy = y0; cy <= y1; ++cy) {
                    const auto idx = lat.index_of(LatticePoint{{cx, cy}});
                    if (idx < 0) continue;
                    const double a = cube_disc_overlap(CubeRegion({double(cx), double(cy)}, 1.0), u.x,
                                                       u.y, s.omega, s.quadrature);
                    if (a > 0.0) sf.at(k, static_cast<std::size_t>(idx), 0) -= alpha * a;
                }
        }
    }
    return sf;
}

Vector score_statistic(const BdSpec& s, const BdPath& path, BdParams theta) {
    return score_total(score_field(s, path, theta));
}

BdEstimate estimate_bd_params(const BdSpec& s, const BdPath& path, BdParams init, BdEstimate* failed) {
    NewtonOptions opts;
    opts.residual_tol = 1e-8 * std::max(1, path.K()) * static_cast<double>(s.lattice().size());
    const ResidualFn f = [&](const Vector& x) {
        const Vector t = score_statistic(s, path, {x(0), x(1), x(2)});
        if (!t.allFinite()) throw DomainError("non-finite birth-death score");
        return t;
    };
    Vector x0(3);
    x0 << init.log_alpha_b, init.theta0, init.theta1;
    auto to_estimate = [](const NewtonResult& r) {
        BdEstimate e;
        if (r.x.size() == 3) e.theta = {r.x(0), r.x(1), r.x(2)};
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

std::size_t count_in_cube(const PointPattern& p, const CubeRegion& c) {
    std::size_t n = 0;
    for (const Point& q : p.points) {
        const double v[2] = {q.x, q.y};
        if (cube_contains(c, v)) ++n;
    }
    return n;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("correlation: length mismatch");
    if (a.size() < 2) throw InputError("correlation needs >= 2 samples");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

RangeCheck independence_range_check(const BdSpec& s, const std::vector<BdPath>& paths) {
    if (paths.size() < 500) throw InputError("independence check needs >= 500 replicates");
    const Window& w = s.window;
    const double far_gap = 2.0 * s.K * s.omega + 2.0;
    const double near_gap = 0.5 * s.omega;
    const double ymid = 0.5 * (w.lower[1] + w.upper[1]);
    const double xmid = 0.5 * (w.lower[0] + w.upper[0]);
    if (w.upper[0] - w.lower[0] < 2.0 + far_gap || w.upper[1] - w.lower[1] < 1.0)
        throw ConfigError("window too small for the far cube pair: needs width >= " +
                          std::to_string(2.0 + far_gap));

    const CubeRegion fa({w.lower[0] + 0.5, ymid}, 1.0);
    const CubeRegion fb({w.lower[0] + 1.5 + far_gap, ymid}, 1.0);
    const CubeRegion na({xmid - 0.5 - 0.5 * near_gap, ymid}, 1.0);
    const CubeRegion nb({xmid + 0.5 + 0.5 * near_gap, ymid}, 1.0);

    std::vector<double> a, b, c, d;
    for (const BdPath& p : paths) {
        const PointPattern& last = p.at(p.K());
        a.push_back(static_cast<double>(count_in_cube(last, fa)));
        b.push_back(static_cast<double>(count_in_cube(last, fb)));
        c.push_back(static_cast<double>(count_in_cube(last, na)));
        d.push_back(static_cast<double>(count_in_cube(last, nb)));
    }
    RangeCheck r;
    r.replicates = paths.size();
    r.band = 4.0 / std::sqrt(static_cast<double>(paths.size()));
    r.far_separation = cube_distance(fa, fb);
    r.near_separation = cube_distance(na, nb);
    r.far_corr = pearson_correlation(a, b);
    r.near_corr = pearson_correlation(c, d);
    r.far_pass = std::abs(r.far_corr) <= r.band;
    r.near_pass = r.near_corr > r.band;
    return r;
}

void write_points_csv(std::ostream& out, const BdPath& path) {
    // Generations may be empty, so the horizon is recorded explicitly.
    out << "# generations=" << path.K() << "\n";
    out << "id,parent_id,x,y,k,label\n";
    char buf[160];
    for (int k = 0; k <= path.K(); ++k)
        for (const Point& p : path.at(k).points) {
            std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%.17g,%d,%s\n",
                          static_cast<unsigned long long>(p.id),
                          p.parent < 0 ? "" : std::to_string(p.parent).c_str(), p.x, p.y, k,
                          to_string(p.label));
            out << buf;
        }
}

BdPath read_points_csv(std::istream& in) {
    std::map<int, PointPattern> gens;
    std::map<std::uint64_t, int> first_seen;
    std::uint64_t max_id = 0;
    bool any = false;
    std::string line;
    std::size_t lineno = 0;
    bool header_done = false;
    int horizon = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.rfind("# generations=", 0) == 0) {
            if (!parse_num(line.substr(14), horizon) || horizon < 0)
                throw InputError("points CSV: bad generations line");
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        if (!header_done) {
            header_done = true;
            if (line.rfind("id,", 0) == 0) continue;
        }
        const auto f = split_csv(line);
        auto bad = [&](const std::string& why) {
            return InputError("points CSV line " + std::to_string(lineno) + ": " + why);
        };
        if (f.size() != 6) throw bad("expected 6 fields");
        Point p;
        int k = 0;
        if (!parse_num(f[0], p.id)) throw bad("bad id");
        if (f[1].empty()) {
            p.parent = -1;
        } else if (!parse_num(f[1], p.parent) || p.parent < 0) {
            throw bad("bad parent_id");
        }
        if (!parse_num(f[2], p.x) || !parse_num(f[3], p.y) || !std::isfinite(p.x) || !std::isfinite(p.y))
            throw bad("bad coordinate");
        if (!parse_num(f[4], k) || k < 0) throw bad("bad generation index");
        p.label = parse_point_label(f[5]);
        auto [it, fresh] = first_seen.emplace(p.id, k);
        if (!fresh && it->second > k) it->second = k;
        gens[k].points.push_back(p);
        max_id = std::max(max_id, p.id);
        any = true;
    }
    if (horizon >= 0) {
        gens[0];
        for (int k = 1; k <= horizon; ++k) gens[k];
        if (gens.rbegin()->first > horizon) throw InputError("points CSV has rows beyond its horizon");
    }
    if (gens.empty() || gens.begin()->first != 0) throw InputError("points CSV has no generation 0");
    int expect = 0;
    for (const auto& [k, g] : gens)
        if (k != expect++) throw InputError("points CSV generations are not contiguous");
    BdPath path;
    for (auto& [k, g] : gens) {
        for (Point& p : g.points) p.birth_time = first_seen[p.id];
        g.next_id = any ? max_id + 1 : 0;
        if (k == 0)
            path.x0 = std::move(g);
        else
            path.gen.push_back(std::move(g));
    }
    return path;
}

}  // namespace stclt

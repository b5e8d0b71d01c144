#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "stclt/birthdeath.hpp"
#include "stclt/error.hpp"

using namespace stclt;

namespace {

BdSpec small_spec() {
    BdSpec s;
    s.window = Window::square(6.0);
    s.omega = 0.7;
    s.alpha_b = 0.8;
    s.rho = 0.3;
    s.survival = {0.2, 0.4};
    s.covariate = Covariate::linear(-0.5, 0.1, 0.05);
    s.K = 2;
    s.quadrature = 32;
    return s;
}

// Area of the disc inside an axis-aligned box by composite Simpson on the
// chord length, which is smooth between the finitely many kinks we split at.
double exact_overlap(double lx, double ly, double side, double ux, double uy, double r) {
    auto chord = [&](double y) {
        const double rem = r * r - (y - uy) * (y - uy);
        if (rem <= 0) return 0.0;
        const double h = std::sqrt(rem);
        return std::max(0.0, std::min(lx + side, ux + h) - std::max(lx, ux - h));
    };
    std::vector<double> cuts{ly, ly + side};
    for (double c : {uy - r, uy + r}) cuts.push_back(c);
    for (double x : {lx, lx + side}) {
        const double dx = x - ux;
        if (std::abs(dx) < r) {
            cuts.push_back(uy - std::sqrt(r * r - dx * dx));
            cuts.push_back(uy + std::sqrt(r * r - dx * dx));
        }
    }
    std::sort(cuts.begin(), cuts.end());
    double area = 0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double a = std::max(cuts[i], ly), b = std::min(cuts[i + 1], ly + side);
        if (b <= a) continue;
        const int n = 20000;
        const double h = (b - a) / n;
        double acc = chord(a) + chord(b);
        for (int j = 1; j < n; ++j) acc += chord(a + j * h) * (j % 2 ? 4 : 2);
        area += acc * h / 3;
    }
    return area;
}

struct Stats {
    double mean, var;
};

Stats stats(const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) s += (x - m) * (x - m);
    return {m, s / (v.size() - 1)};
}

}  // namespace

TEST(BdSpec, RegionAndValidation) {
    BdSpec s = small_spec();
    const Window r = s.region();
    EXPECT_DOUBLE_EQ(r.lower[0], -0.5 - 1.4);
    EXPECT_DOUBLE_EQ(r.upper[1], 6.5 + 1.4);
    EXPECT_EQ(s.lattice().size(), 49u);
    EXPECT_NO_THROW(validate_bd_spec(s));
    s.omega = 0;
    s.rho = -1;
    s.quadrature = 2;
    try {
        validate_bd_spec(s);
        FAIL();
    } catch (const ModelError& e) {
        EXPECT_EQ(e.issues().size(), 3u);
    }
}

TEST(BdSimulate, FrozenDynamicsReproducePattern) {
    BdSpec s = small_spec();
    s.alpha_b = 0;
    s.rho = 0;
    s.survival = {50.0, 0.0};
    const PointPattern x0 = initial_pattern(s, 1.0, RngStream(1));
    ASSERT_GT(x0.size(), 10u);
    const PointPattern x1 = simulate_step(s, x0, 1, RngStream(2));
    ASSERT_EQ(x1.size(), x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        EXPECT_EQ(x1.points[i].id, x0.points[i].id);
        EXPECT_EQ(x1.points[i].x, x0.points[i].x);
        EXPECT_EQ(x1.points[i].y, x0.points[i].y);
        EXPECT_EQ(x1.points[i].label, PointLabel::survivor);
    }
}

TEST(BdSimulate, PureImmigrationCount) {
    BdSpec s = small_spec();
    s.alpha_b = 0;
    s.rho = 0.4;
    s.survival = {-50.0, 0.0};
    const PointPattern x0 = initial_pattern(s, 1.0, RngStream(3));
    const double mu = s.rho * s.region().volume();
    std::vector<double> counts;
    for (int t = 0; t < 10000; ++t) {
        const PointPattern x1 = simulate_step(s, x0, 1, RngStream(4, {static_cast<std::uint64_t>(t)}));
        for (const Point& p : x1.points) ASSERT_EQ(p.label, PointLabel::immigrant);
        counts.push_back(static_cast<double>(x1.size()));
    }
    const Stats st = stats(counts);
    EXPECT_LE(std::abs(st.mean - mu), 4 * std::sqrt(mu / counts.size()));
}

TEST(BdSimulate, FairCoinSurvival) {
    BdSpec s = small_spec();
    s.alpha_b = 0;
    s.rho = 0;
    s.survival = {0.0, 0.0};
    const PointPattern x0 = initial_pattern(s, 0.5, RngStream(5));
    const double n = static_cast<double>(x0.size());
    std::vector<double> counts;
    for (int t = 0; t < 10000; ++t)
        counts.push_back(static_cast<double>(simulate_step(s, x0, 1, RngStream(6, {static_cast<std::uint64_t>(t)})).size()));
    const Stats st = stats(counts);
    EXPECT_LE(std::abs(st.mean - 0.5 * n), 4 * std::sqrt(0.25 * n / counts.size()));
    EXPECT_LE(std::abs(st.var - 0.25 * n), 4 * 0.25 * n * std::sqrt(2.0 / counts.size()));
}

TEST(BdSimulate, LabelsPartitionAndIdsStable) {
    const BdSpec s = small_spec();
    const PointPattern x0 = initial_pattern(s, 1.0, RngStream(7));
    const BdPath p = simulate_path(s, x0, RngStream(8));
    const Window region = s.region();
    for (int k = 1; k <= p.K(); ++k) {
        std::set<std::uint64_t> prev_ids, ids;
        for (const Point& u : p.at(k - 1).points) prev_ids.insert(u.id);
        for (const Point& v : p.at(k).points) {
            EXPECT_TRUE(ids.insert(v.id).second) << "duplicate id";
            const double xy[2] = {v.x, v.y};
            EXPECT_TRUE(region.contains(xy));
            switch (v.label) {
                case PointLabel::survivor: EXPECT_TRUE(prev_ids.count(v.id)); break;
                case PointLabel::offspring:
                    EXPECT_FALSE(prev_ids.count(v.id));
                    EXPECT_TRUE(prev_ids.count(static_cast<std::uint64_t>(v.parent)));
                    EXPECT_EQ(v.birth_time, k);
                    break;
                case PointLabel::immigrant:
                    EXPECT_FALSE(prev_ids.count(v.id));
                    EXPECT_EQ(v.parent, -1);
                    break;
                case PointLabel::initial: ADD_FAILURE() << "initial label after time 0";
            }
        }
    }
}

TEST(BdSimulate, OffspringCountsArePoisson) {
    BdSpec s = small_spec();
    s.window = Window::square(10.0);
    s.rho = 0;
    s.alpha_b = 1.3;
    PointPattern x0;
    x0.add(5.0, 5.0, 0, PointLabel::initial);
    x0.add(2.0, 7.5, 0, PointLabel::initial);
    const double mu = s.alpha_b * std::numbers::pi * s.omega * s.omega;
    std::vector<double> counts;
    for (int t = 0; t < 10000; ++t) {
        const PointPattern x1 = simulate_step(s, x0, 1, RngStream(9, {static_cast<std::uint64_t>(t)}));
        double c[2] = {0, 0};
        for (const Point& v : x1.points)
            if (v.label == PointLabel::offspring) {
                c[v.parent] += 1;
                EXPECT_LE(std::hypot(v.x - x0.points[v.parent].x, v.y - x0.points[v.parent].y), s.omega);
            }
        counts.push_back(c[0]);
        counts.push_back(c[1]);
    }
    const Stats st = stats(counts);
    const double R = counts.size();
    EXPECT_LE(std::abs(st.mean - mu), 4 * std::sqrt(mu / R));
    EXPECT_LE(std::abs(st.var - mu), 4 * std::sqrt((mu + 2 * mu * mu) / R));
}

TEST(BirthIntensity, Examples) {
    BdSpec s = small_spec();
    s.omega = 1.0;
    s.alpha_b = 2.0;
    s.rho = 0.1;
    PointPattern p;
    p.add(10, 10, 0, PointLabel::initial);
    EXPECT_DOUBLE_EQ(birth_intensity(s, p, 0, 0), 0.1);
    EXPECT_DOUBLE_EQ(birth_intensity(s, p, 10.5, 10), 2.1);
    s.rho = 0;
    p.add(10.4, 10, 0, PointLabel::initial);
    EXPECT_DOUBLE_EQ(birth_intensity(s, p, 10.2, 10.1), 4.0);
}

TEST(CubeDiscOverlap, Examples) {
    const CubeRegion c({0.0, 0.0}, 1.0);
    EXPECT_DOUBLE_EQ(cube_disc_overlap(c, 0.1, -0.2, 2.0, 64), 1.0);
    EXPECT_NEAR(cube_disc_overlap(c, 0.0, 0.0, 0.1, 64), std::numbers::pi * 0.01, 0.05 * std::numbers::pi * 0.01);
    EXPECT_EQ(cube_disc_overlap(c, 3.0, 0.0, 1.0, 64), 0.0);
}

TEST(CubeDiscOverlap, ConvergesToExactArea) {
    RngStream rng(10);
    double worst64 = 0, worst256 = 0;
    for (int t = 0; t < 40; ++t) {
        const double ux = -1 + 2 * rng.uniform(), uy = -1 + 2 * rng.uniform(), r = 0.2 + rng.uniform();
        const double exact = exact_overlap(-0.5, -0.5, 1.0, ux, uy, r);
        const CubeRegion c({0.0, 0.0}, 1.0);
        worst64 = std::max(worst64, std::abs(cube_disc_overlap(c, ux, uy, r, 64) - exact));
        worst256 = std::max(worst256, std::abs(cube_disc_overlap(c, ux, uy, r, 256) - exact));
    }
    // Boundary subcells number O(G), each of area 1/G^2.
    EXPECT_LE(worst64, 4.0 / 64);
    EXPECT_LE(worst256, 4.0 / 256);
}

TEST(BdScore, EmptyPatternScoresZero) {
    BdSpec s = small_spec();
    s.rho = 0;
    BdPath p;
    p.gen.resize(2);
    const ScoreField sf = score_field(s, p, {std::log(s.alpha_b), 0.0, 0.0});
    for (double v : sf.values()) EXPECT_EQ(v, 0.0);
}

TEST(BdScore, NoParentsGivesZeroBirthComponent) {
    BdSpec s = small_spec();
    s.K = 1;
    BdPath p;
    p.gen.push_back(initial_pattern(s, 2.0, RngStream(11)));
    for (Point& q : p.gen[0].points) q.label = PointLabel::immigrant;
    const ScoreField sf = score_field(s, p, {std::log(s.alpha_b), 0.2, 0.4});
    for (std::size_t l = 0; l < sf.nodes(); ++l) EXPECT_EQ(sf.at(1, l, 0), 0.0);
}

TEST(BdScore, SurvivalComponentByHand) {
    BdSpec s = small_spec();
    s.K = 1;
    s.alpha_b = 0;
    s.rho = 0;
    s.survival = {0.3, 0.0};
    s.covariate = Covariate::constant(2.0);
    BdPath p;
    p.x0.add(1.1, 1.2, 0, PointLabel::initial);
    p.x0.add(0.9, 0.8, 0, PointLabel::initial);
    p.x0.add(4.0, 2.0, 0, PointLabel::initial);
    p.gen.push_back(p.x0);
    for (Point& q : p.gen[0].points) q.label = PointLabel::survivor;
    const double q = 1 - 1 / (1 + std::exp(-0.3));
    const Vector t = score_statistic(s, p, {0.0, 0.3, 0.0});
    EXPECT_NEAR(t(1), 3 * q, 1e-14);
    EXPECT_NEAR(t(2), 6 * q, 1e-14);
    const ScoreField sf = score_field(s, p, {0.0, 0.3, 0.0});
    const auto idx = s.lattice().index_of(LatticePoint{{1, 1}});
    EXPECT_NEAR(sf.at(1, static_cast<std::size_t>(idx), 1), 2 * q, 1e-14);
}

TEST(BdScore, ZeroIntensityBirthIsModelError) {
    BdSpec s = small_spec();
    s.rho = 0;
    s.K = 1;
    BdPath p;
    p.gen.emplace_back();
    p.gen[0].add(2.0, 2.0, 1, PointLabel::immigrant);
    EXPECT_THROW(score_field(s, p, {0.0, 0.0, 0.0}), ModelError);
}

TEST(BdScore, CubeValueDependsOnlyOnNeighbourhood) {
    const BdSpec s = small_spec();
    const BdPath p = simulate_path(s, initial_pattern(s, 1.5, RngStream(12)), RngStream(13));
    const BdParams th{std::log(s.alpha_b), s.survival[0], s.survival[1]};
    const ScoreField full = score_field(s, p, th);
    const Lattice lat = s.lattice();
    for (std::size_t l = 0; l < lat.size(); l += 5) {
        const double cx = lat[l].coords[0], cy = lat[l].coords[1];
        auto restrict = [&](const PointPattern& pp) {
            PointPattern out;
            out.next_id = pp.next_id;
            for (const Point& q : pp.points)
                if (std::max(std::abs(q.x - cx), std::abs(q.y - cy)) <= 0.5 + s.omega) out.points.push_back(q);
            return out;
        };
        BdPath local;
        local.x0 = restrict(p.x0);
        for (const auto& g : p.gen) local.gen.push_back(restrict(g));
        const ScoreField part = score_field(s, local, th);
        for (int k = 1; k <= p.K(); ++k)
            for (int i = 0; i < 3; ++i) EXPECT_EQ(part.at(k, l, i), full.at(k, l, i)) << l << " " << k << " " << i;
    }
}

TEST(BdScore, CenteredAtGeneratingParameters) {
    const BdSpec s = small_spec();
    const PointPattern x0 = initial_pattern(s, 1.0, RngStream(14));
    const BdParams th{std::log(s.alpha_b), s.survival[0], s.survival[1]};
    const int R = 3000;
    std::vector<std::vector<double>> comps(3);
    for (int t = 0; t < R; ++t) {
        const BdPath p = simulate_path(s, x0, RngStream(15, {static_cast<std::uint64_t>(t)}));
        const ScoreField sf = score_field(s, p, th);
        for (int k = 1; k <= s.K; ++k) {
            const Vector st = sf.step_sum(k);
            if (k == s.K)
                for (int i = 0; i < 3; ++i) comps[i].push_back(st(i));
        }
    }
    for (int i = 0; i < 3; ++i) {
        const Stats st = stats(comps[i]);
        EXPECT_LE(std::abs(st.mean), 4 * std::sqrt(st.var / R)) << "component " << i;
    }
}

TEST(IndependenceRange, FarPairIndependentNearPairCorrelated) {
    BdSpec s;
    s.window = Window({0.0, 0.0}, {20.0, 6.0});
    s.omega = 1.0;
    // Strong clustering: a time-1 point between the near cubes feeds both
    // with intensity alpha_b, so their counts share a random component.
    s.alpha_b = 5.0;
    s.rho = 0.05;
    s.survival = {0.0, 0.0};
    s.K = 2;
    s.quadrature = 16;
    const PointPattern x0 = initial_pattern(s, 0.1, RngStream(16));
    std::vector<BdPath> paths;
    for (int t = 0; t < 1000; ++t) paths.push_back(simulate_path(s, x0, RngStream(17, {static_cast<std::uint64_t>(t)})));
    const RangeCheck r = independence_range_check(s, paths);
    EXPECT_GT(r.far_separation, 2 * s.K * s.omega);
    EXPECT_TRUE(r.far_pass) << r.far_corr;
    EXPECT_TRUE(r.near_pass) << r.near_corr << " band " << r.band;

    const std::vector<double> a{1, 2, 3, 5};
    EXPECT_DOUBLE_EQ(pearson_correlation(a, a), 1.0);

    BdSpec tiny = s;
    tiny.window = Window::square(4.0);
    EXPECT_THROW(independence_range_check(tiny, paths), ConfigError);
}

TEST(PointsCsv, RoundTrip) {
    const BdSpec s = small_spec();
    const BdPath p = simulate_path(s, initial_pattern(s, 1.0, RngStream(18)), RngStream(19));
    std::stringstream buf;
    write_points_csv(buf, p);
    const BdPath q = read_points_csv(buf);
    ASSERT_EQ(q.K(), p.K());
    for (int k = 0; k <= p.K(); ++k) {
        ASSERT_EQ(q.at(k).size(), p.at(k).size());
        for (std::size_t i = 0; i < p.at(k).size(); ++i) {
            const Point &a = p.at(k).points[i], &b = q.at(k).points[i];
            EXPECT_EQ(a.id, b.id);
            EXPECT_EQ(a.parent, b.parent);
            EXPECT_EQ(a.x, b.x);
            EXPECT_EQ(a.y, b.y);
            EXPECT_EQ(a.label, b.label);
            EXPECT_EQ(a.birth_time, b.birth_time);
        }
    }
    const BdParams th{0.1, 0.2, 0.3};
    EXPECT_EQ(score_statistic(s, p, th), score_statistic(s, q, th));
}

TEST(PointsCsv, MalformedRowsRejected) {
    std::stringstream a("id,parent_id,x,y,k,label\n1,,0.5,abc,0,initial\n");
    EXPECT_THROW(read_points_csv(a), InputError);
    std::stringstream b("id,parent_id,x,y,k,label\n1,,0.5,0.5,0,alien\n");
    EXPECT_THROW(read_points_csv(b), InputError);
    std::stringstream c("id,parent_id,x,y,k,label\n1,,0.5,0.5,0,initial\n2,,1,1,2,immigrant\n");
    EXPECT_THROW(read_points_csv(c), InputError);
}

TEST(CovariateGrid, BilinearAndLoad) {
    std::stringstream in("x,y,z\n0,0,0\n1,0,1\n0,1,2\n1,1,3\n");
    const Covariate z = load_covariate_grid(in);
    EXPECT_DOUBLE_EQ(z(0.5, 0.5), 1.5);
    EXPECT_DOUBLE_EQ(z(1.0, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(z(5.0, 5.0), 3.0);
    std::stringstream bad("x,y,z\n0,0,0\n1,0,1\n0,1,2\n");
    EXPECT_THROW(load_covariate_grid(bad), InputError);
}

TEST(BdEstimate, RecoversParametersOnLargeWindow) {
    BdSpec s = small_spec();
    s.window = Window::square(30.0);
    s.K = 3;
    const PointPattern x0 = initial_pattern(s, 1.0, RngStream(20));
    const BdPath p = simulate_path(s, x0, RngStream(21));
    const BdEstimate e = estimate_bd_params(s, p, {0.0, 0.0, 0.0});
    EXPECT_TRUE(e.converged) << e.message;
    EXPECT_NEAR(std::exp(e.theta.log_alpha_b), s.alpha_b, 0.2);
    EXPECT_NEAR(e.theta.theta0, s.survival[0], 0.5);
    EXPECT_NEAR(e.theta.theta1, s.survival[1], 0.3);
}

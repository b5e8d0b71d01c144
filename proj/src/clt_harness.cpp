#include "stclt/clt_harness.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <ostream>
#include <thread>

#include "stclt/error.hpp"

namespace stclt {

namespace {

constexpr std::size_t kBlock = 32;

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace

// ------------------------------------------------------------ schedules

Truncation schedule_truncation(std::size_t lattice_size, int K, int d, double a, double b) {
    if (d < 1) throw ConfigError("dimension must be >= 1");
    if (!(a > 0.0 && a < 1.0 / (4.0 * d)))
        throw ConfigError("spatial truncation exponent a must lie in (0, 1/(4d)) = (0, " +
                          std::to_string(1.0 / (4.0 * d)) + ")");
    if (!(b > 0.0 && b < 0.5)) throw ConfigError("temporal truncation exponent b must lie in (0, 1/2)");
    if (lattice_size < 1 || K < 1) throw ConfigError("lattice size and K must be positive");
    // Guard against pow landing a hair above an exact integer.
    auto up = [](double v) { return static_cast<int>(std::ceil(v * (1.0 - 1e-12))); };
    return {std::max(1, up(std::pow(static_cast<double>(lattice_size), a))),
            std::max(1, up(std::pow(static_cast<double>(K), b)))};
}

const char* to_string(Regime r) {
    switch (r) {
        case Regime::space: return "space";
        case Regime::time: return "time";
        case Regime::both: return "both";
    }
    return "?";
}

Regime parse_regime(const std::string& s) {
    if (s == "space" || s == "i") return Regime::space;
    if (s == "time" || s == "ii") return Regime::time;
    if (s == "both" || s == "iii") return Regime::both;
    throw ConfigError("unknown regime '" + s + "' (expected space, time or both)");
}

double effective_a(const RegimeSchedule& s, int d) { return s.a > 0.0 ? s.a : 1.0 / (8.0 * d); }

void validate_schedule(const RegimeSchedule& s, int d) {
    if (s.levels.empty()) throw ConfigError("regime needs at least one level");
    if (s.replicates < 10) throw ConfigError("regime needs at least 10 replicates per level");
    for (const Level& l : s.levels)
        if (l.K < 1 || l.size < 1) throw ConfigError("level K and size must be positive");
    (void)schedule_truncation(1, 1, d, effective_a(s, d), s.b);
    for (std::size_t i = 1; i < s.levels.size(); ++i) {
        const Level& p = s.levels[i - 1];
        const Level& c = s.levels[i];
        const std::string at = " (levels " + std::to_string(i - 1) + " and " + std::to_string(i) + ")";
        switch (s.regime) {
            case Regime::space:
                if (c.K != p.K) throw ConfigError("regime space keeps K fixed" + at);
                if (c.size <= p.size) throw ConfigError("regime space needs growing sizes" + at);
                break;
            case Regime::time:
                if (c.size != p.size) throw ConfigError("regime time keeps the lattice fixed" + at);
                if (c.K <= p.K) throw ConfigError("regime time needs growing K" + at);
                break;
            case Regime::both:
                if (c.K <= p.K || c.size <= p.size)
                    throw ConfigError("regime both grows K and size together" + at);
                break;
        }
    }
}

// ----------------------------------------------------------- replicates

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& work) {
    const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                work(i);
            } catch (...) {
                std::lock_guard lock(mu);
                // Keep the lowest failing index so the reported error is stable.
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (std::size_t t = 0; t < w; ++t) threads.emplace_back(body);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

ReplicateSet run_replicates(const ReplicateFn& fn, std::size_t R, const RngStream& master, int workers,
                            TruncatedVarianceAccumulator* tv, MomentAccumulator* mom) {
    if (R < 1) throw DomainError("need at least one replicate");
    ReplicateSet out;
    const std::size_t blocks = (R + kBlock - 1) / kBlock;
    std::vector<std::optional<TruncatedVarianceAccumulator>> tv_blocks(blocks);
    std::vector<std::optional<MomentAccumulator>> mom_blocks(blocks);
    std::vector<Vector> rows(R);
    std::vector<std::pair<std::size_t, int>> shape(blocks, {0, 0});

    parallel_for(blocks, workers, [&](std::size_t b) {
        if (tv) tv_blocks[b].emplace(tv->empty_like());
        if (mom) mom_blocks[b].emplace(mom->empty_like());
        for (std::size_t r = b * kBlock; r < std::min(R, (b + 1) * kBlock); ++r) {
            ScoreField sf = [&] {
                try {
                    return fn(r, master.child(static_cast<std::uint64_t>(r)));
                } catch (const ModelError& e) {
                    throw ModelError("replicate " + std::to_string(r) + ": " + e.what(), e.issues());
                } catch (const DomainError& e) {
                    throw DomainError("replicate " + std::to_string(r) + ": " + e.what());
                }
            }();
            rows[r] = score_total(sf);
            shape[b] = {sf.nodes(), sf.K()};
            if (tv) tv_blocks[b]->add(sf);
            if (mom) mom_blocks[b]->add(sf);
        }
    });

    const auto q = rows.front().size();
    out.T.resize(static_cast<Eigen::Index>(R), q);
    for (std::size_t r = 0; r < R; ++r) out.T.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    out.nodes = shape.front().first;
    out.K = shape.front().second;
    for (std::size_t b = 0; b < blocks; ++b) {
        if (tv) tv->merge(*tv_blocks[b]);
        if (mom) mom->merge(*mom_blocks[b]);
    }
    return out;
}

ReplicateFn car_replicate(const CarModel& m, const Vector& x0, int K) {
    return [&m, x0, K](std::size_t, const RngStream& stream) {
        const CarPath p = simulate_path(m, x0, K, stream);
        return score_field(m.spec(), p, {m.spec().beta, m.spec().gamma});
    };
}

ReplicateFn bd_replicate(const BdSpec& s, const PointPattern& x0) {
    return [&s, x0](std::size_t, const RngStream& stream) {
        const BdPath p = simulate_path(s, x0, stream);
        return score_field(s, p, {std::log(s.alpha_b), s.survival[0], s.survival[1]});
    };
}

// --------------------------------------------------------- standardizing

Matrix standardize(const Matrix& T, const SigmaMatrix& sigma) {
    if (T.cols() != sigma.q()) throw DimensionError("standardize: T has wrong number of columns");
    const Matrix s = sigma.inv_sqrt().matrix();
    return T * s;  // rows t^T S = (S t)^T since S is symmetric
}

SymMatrix sample_covariance(const Matrix& X) {
    if (X.rows() < 2) throw InputError("sample covariance needs >= 2 rows");
    const Matrix c = X.rowwise() - X.colwise().mean();
    return SymMatrix::from_symmetrized(c.transpose() * c / static_cast<double>(X.rows() - 1));
}

// ------------------------------------------------------------- normality

double kolmogorov_pvalue(double D, std::size_t n) {
    const double lambda = std::sqrt(static_cast<double>(n)) * D;
    if (lambda <= 0.0) return 1.0;
    double p;
    if (lambda < 1.0) {
        // Theta-function form converges fast for small lambda.
        double s = 0.0;
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        for (int k = 1; k <= 100; ++k) s += std::exp(-(2.0 * k - 1) * (2.0 * k - 1) * c);
        p = 1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s;
    } else {
        double s = 0.0;
        for (int k = 1; k <= 100; ++k) s += (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
        p = 2.0 * s;
    }
    return std::clamp(p, 0.0, 1.0);
}

KsResult ks_statistic(const std::vector<double>& samples) {
    if (samples.size() < 3) throw InputError("KS needs at least 3 samples");
    std::vector<double> x = samples;
    for (double v : x)
        if (!std::isfinite(v)) throw InputError("KS samples must be finite");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = std_normal_cdf(x[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    return {d, kolmogorov_pvalue(d, x.size())};
}

std::vector<Vector> projection_directions(int q) {
    if (q < 1) throw DomainError("projection directions need q >= 1");
    std::vector<Vector> out;
    for (int j = 0; j < 8; ++j) {
        Vector v(q);
        if (q == 1) {
            v(0) = j % 2 ? -1.0 : 1.0;
        } else if (q == 2) {
            const double t = j * std::numbers::pi / 8.0;
            v << std::cos(t), std::sin(t);
        } else {
            RngStream r(0xD12EC7105ULL, {static_cast<std::uint64_t>(q), static_cast<std::uint64_t>(j)});
            v = sample_std_normal(r, q);
        }
        out.push_back(v / v.norm());
    }
    return out;
}

MardiaResult mardia(const Matrix& X) {
    const Eigen::Index R = X.rows(), q = X.cols();
    if (q < 1 || R < q + 1) throw InputError("Mardia needs at least q + 1 rows");
    const Matrix c = X.rowwise() - X.colwise().mean();
    const SymMatrix S = SymMatrix::from_symmetrized(c.transpose() * c / static_cast<double>(R));
    const double top = S.matrix().diagonal().cwiseAbs().maxCoeff();
    if (!(min_eigenvalue(S) > 1e-12 * top)) throw SingularError("Mardia: empirical covariance is singular");
    const SpdFactor L = cholesky(S);
    // Whitened rows y_i = L^{-1} (x_i - mean).
    const Matrix Y = L.lower().triangularView<Eigen::Lower>().solve(c.transpose()).transpose();

    double b2 = 0.0;
    for (Eigen::Index i = 0; i < R; ++i) b2 += std::pow(Y.row(i).squaredNorm(), 2);
    b2 /= static_cast<double>(R);

    // b1 = R^{-2} sum_{i,j} (y_i' y_j)^3 = R^{-2} sum_{a,b,c} M_abc^2.
    double b1 = 0.0;
    for (Eigen::Index a = 0; a < q; ++a)
        for (Eigen::Index b = 0; b < q; ++b)
            for (Eigen::Index cc = 0; cc < q; ++cc) {
                const double m = (Y.col(a).array() * Y.col(b).array() * Y.col(cc).array()).sum();
                b1 += m * m;
            }
    b1 /= static_cast<double>(R) * static_cast<double>(R);

    MardiaResult out;
    out.skewness = b1;
    out.kurtosis = b2;
    out.expected_kurtosis = static_cast<double>(q * (q + 2));
    const double df = static_cast<double>(q * (q + 1) * (q + 2)) / 6.0;
    const double stat = static_cast<double>(R) * b1 / 6.0;
    out.skew_p = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), stat));
    out.kurt_z = (b2 - out.expected_kurtosis) / std::sqrt(8.0 * out.expected_kurtosis / static_cast<double>(R));
    out.flagged = out.skew_p < 1e-3 || std::abs(out.kurt_z) > 4.0 ||
                  std::abs(b2 / out.expected_kurtosis - 1.0) > 0.5;
    return out;
}

// ---------------------------------------------------- truncated variances

TruncatedVarianceAccumulator::TruncatedVarianceAccumulator(const Lattice& lattice, int q, int max_dist)
    : q_(q), max_dist_(max_dist), diameter_(lattice.diameter()) {
    if (max_dist < 0) throw DomainError("truncation distance must be >= 0");
    if (q < 1) throw DomainError("q must be >= 1");
    const int eff = std::min(max_dist, diameter_);
    pairs_ = lattice.pairs_within(eff);
    pair_count_.assign(static_cast<std::size_t>(eff) + 1, 0);
    for (const auto& p : pairs_) ++pair_count_[static_cast<std::size_t>(p.dist)];
    by_dist_.assign(pair_count_.size() * static_cast<std::size_t>(q), 0.0);
    total_.assign(static_cast<std::size_t>(q), 0.0);
}

TruncatedVarianceAccumulator TruncatedVarianceAccumulator::empty_like() const {
    TruncatedVarianceAccumulator t = *this;
    std::fill(t.by_dist_.begin(), t.by_dist_.end(), 0.0);
    std::fill(t.total_.begin(), t.total_.end(), 0.0);
    t.count_ = 0;
    t.K_ = 0;
    return t;
}

void TruncatedVarianceAccumulator::add(const ScoreField& sf) {
    if (sf.q() != q_) throw DimensionError("accumulator: component count mismatch");
    if (K_ != 0 && sf.K() != K_) throw DimensionError("accumulator: K mismatch");
    K_ = sf.K();
    std::vector<double> by(by_dist_.size(), 0.0), tot(total_.size(), 0.0);
    for (int k = 1; k <= sf.K(); ++k) {
        for (const auto& p : pairs_)
            for (int i = 0; i < q_; ++i)
                by[static_cast<std::size_t>(p.dist * q_ + i)] += sf.at(k, p.i, i) * sf.at(k, p.j, i);
        const Vector s = sf.step_sum(k);
        for (int i = 0; i < q_; ++i) tot[static_cast<std::size_t>(i)] += s(i) * s(i);
    }
    for (std::size_t t = 0; t < by.size(); ++t) by_dist_[t] += by[t];
    for (std::size_t t = 0; t < tot.size(); ++t) total_[t] += tot[t];
    ++count_;
}

void TruncatedVarianceAccumulator::merge(const TruncatedVarianceAccumulator& o) {
    if (o.count_ == 0) return;
    if (o.by_dist_.size() != by_dist_.size() || o.q_ != q_) throw DimensionError("accumulator merge mismatch");
    if (K_ != 0 && o.K_ != K_) throw DimensionError("accumulator merge: K mismatch");
    K_ = o.K_;
    for (std::size_t t = 0; t < by_dist_.size(); ++t) by_dist_[t] += o.by_dist_[t];
    for (std::size_t t = 0; t < total_.size(); ++t) total_[t] += o.total_[t];
    count_ += o.count_;
}

double TruncatedVarianceAccumulator::total(int comp) const {
    if (count_ == 0) throw InputError("no replicates accumulated");
    return total_.at(static_cast<std::size_t>(comp)) / static_cast<double>(count_);
}

double TruncatedVarianceAccumulator::truncated(int comp, int m) const {
    if (m < 0) throw DomainError("truncation distance must be >= 0");
    if (count_ == 0) throw InputError("no replicates accumulated");
    if (m >= diameter_) return total(comp);
    if (m > max_dist_) throw DomainError("truncation distance beyond the accumulated range");
    double s = 0.0;
    for (int d = 0; d <= m; ++d) s += by_dist_[static_cast<std::size_t>(d * q_ + comp)];
    return s / static_cast<double>(count_);
}

std::vector<double> TruncatedVarianceAccumulator::mean_by_distance(int comp) const {
    std::vector<double> out;
    for (std::size_t d = 0; d < pair_count_.size(); ++d) {
        const double denom = static_cast<double>(count_) * static_cast<double>(pair_count_[d]) * K_;
        out.push_back(denom > 0 ? by_dist_[d * static_cast<std::size_t>(q_) + static_cast<std::size_t>(comp)] / denom
                                : 0.0);
    }
    return out;
}

TruncationRatio truncated_variance(const TruncatedVarianceAccumulator& acc, int m_n) {
    TruncationRatio r{m_n, {}};
    for (int i = 0; i < acc.q(); ++i) r.ratio.push_back(acc.truncated(i, m_n) / acc.total(i));
    return r;
}

// ------------------------------------------------------------------ decay

DecayFit decay_fit(const std::vector<std::pair<double, double>>& series, double threshold) {
    std::vector<double> x, y;
    DecayFit f;
    f.threshold = threshold;
    for (const auto& [lag, v] : series) {
        if (!(v > 0.0) || !(lag > 0.0) || !std::isfinite(v)) {
            ++f.dropped;
            continue;
        }
        x.push_back(std::log(lag));
        y.push_back(std::log(v));
    }
    f.used = x.size();
    if (f.used < 5) throw InputError("decay fit needs at least 5 positive magnitudes, got " + std::to_string(f.used));
    const double n = static_cast<double>(f.used);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0)) throw InputError("decay fit needs at least two distinct lags");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        sse += e * e;
    }
    const double se = std::sqrt(sse / (n - 2) / sxx);
    const double t = boost::math::quantile(boost::math::students_t_distribution<double>(n - 2), 0.975);
    f.ci_low = f.slope - t * se;
    f.ci_high = f.slope + t * se;
    f.passes = f.ci_high < threshold;
    return f;
}

std::vector<std::pair<double, double>> car_lag_norms(const CarModel& m, int k_base, int max_lag) {
    std::vector<std::pair<double, double>> out;
    for (int lag = 1; lag <= max_lag; ++lag)
        out.emplace_back(lag, frobenius_norm(lagged_cov(m, 1, k_base, lag)));
    return out;
}

// ---------------------------------------------------------------- moments

MomentAccumulator::MomentAccumulator(int K, std::size_t nodes, int q, double power)
    : K_(K), nodes_(nodes), q_(q), power_(power),
      sums_(static_cast<std::size_t>(K) * nodes * static_cast<std::size_t>(q), 0.0) {}

void MomentAccumulator::add(const ScoreField& sf) {
    if (sf.K() != K_ || sf.nodes() != nodes_ || sf.q() != q_)
        throw DimensionError("moment accumulator: field shape mismatch");
    const auto& v = sf.values();
    for (std::size_t t = 0; t < v.size(); ++t) sums_[t] += std::pow(std::abs(v[t]), power_);
    ++count_;
}

void MomentAccumulator::merge(const MomentAccumulator& o) {
    if (o.sums_.size() != sums_.size()) throw DimensionError("moment accumulator merge mismatch");
    for (std::size_t t = 0; t < sums_.size(); ++t) sums_[t] += o.sums_[t];
    count_ += o.count_;
}

double MomentAccumulator::sup() const {
    if (count_ == 0 || sums_.empty()) return 0.0;
    return *std::max_element(sums_.begin(), sums_.end()) / static_cast<double>(count_);
}

double MomentAccumulator::cell_mean() const {
    if (count_ == 0 || sums_.empty()) return 0.0;
    double s = 0.0;
    for (double v : sums_) s += v;
    return s / static_cast<double>(sums_.size()) / static_cast<double>(count_);
}

double moment_diagnostic(const std::vector<ScoreField>& fields, double epsilon) {
    if (fields.empty()) return 0.0;
    MomentAccumulator acc(fields[0].K(), fields[0].nodes(), fields[0].q(), 6.0 + epsilon);
    for (const auto& f : fields) acc.add(f);
    return acc.sup();
}

// ---------------------------------------------------------------- reports

void summarize_level(LevelResult& out, const Matrix& T, const SigmaMatrix& sigma) {
    const Matrix Z = standardize(T, sigma);
    const Eigen::Index q = Z.cols();
    const auto n = static_cast<std::size_t>(Z.rows());
    out.replicates = n;
    out.sigma_provenance = sigma.provenance == SigmaProvenance::analytic ? "analytic" : "replicate";
    out.sigma.assign(static_cast<std::size_t>(q), std::vector<double>(static_cast<std::size_t>(q)));
    for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j < q; ++j) out.sigma[i][j] = sigma.value(i, j);

    out.components.assign(static_cast<std::size_t>(q), {});
    out.qq_theoretical.assign(static_cast<std::size_t>(q), {});
    out.qq_empirical.assign(static_cast<std::size_t>(q), {});
    for (Eigen::Index i = 0; i < q; ++i) {
        std::vector<double> col(Z.col(i).data(), Z.col(i).data() + Z.rows());
        auto& c = out.components[static_cast<std::size_t>(i)];
        c.ks = ks_statistic(col);
        c.mean = Z.col(i).mean();
        c.variance = (Z.col(i).array() - c.mean).square().sum() / static_cast<double>(n - 1);
        std::sort(col.begin(), col.end());
        auto& th = out.qq_theoretical[static_cast<std::size_t>(i)];
        for (std::size_t r = 0; r < n; ++r) th.push_back(std_normal_quantile((r + 0.5) / static_cast<double>(n)));
        out.qq_empirical[static_cast<std::size_t>(i)] = std::move(col);
    }
    out.directional.clear();
    for (const Vector& a : projection_directions(static_cast<int>(q))) {
        const Vector proj = Z * a;
        out.directional.push_back(ks_statistic(std::vector<double>(proj.data(), proj.data() + proj.size())));
    }
    try {
        out.mardia = mardia(Z);
    } catch (const Error&) {
        out.mardia = {NAN, NAN, static_cast<double>(q * (q + 2)), NAN, NAN, true};
    }
    out.cov_error = (sample_covariance(Z).matrix() - Matrix::Identity(q, q)).cwiseAbs().maxCoeff();
}

std::vector<Verdict> ladder_verdicts(const std::vector<LevelResult>& levels, double ks_max, double inversion_tol) {
    std::vector<Verdict> out;
    if (levels.empty()) return out;
    const std::size_t q = levels.front().components.size();
    for (std::size_t i = 0; i < q; ++i) {
        Verdict v{static_cast<int>(i), true, 0, false};
        for (std::size_t l = 1; l < levels.size(); ++l) {
            const double rise = levels[l].components[i].ks.D - levels[l - 1].components[i].ks.D;
            if (rise > 0) {
                ++v.inversions;
                if (rise > inversion_tol) v.ladder_ok = false;
            }
        }
        if (v.inversions > 1) v.ladder_ok = false;
        v.final_ok = levels.back().components[i].ks.D < ks_max;
        out.push_back(v);
    }
    return out;
}

CltReport assemble_report(std::string model, const RegimeSchedule& schedule, std::vector<LevelResult> levels) {
    if (levels.empty()) throw InputError("report needs at least one completed level");
    CltReport r;
    r.model = std::move(model);
    r.regime = schedule.regime;
    r.ks_max = schedule.ks_max;
    r.inversion_tol = schedule.inversion_tol;
    r.levels = std::move(levels);
    r.verdicts = ladder_verdicts(r.levels, r.ks_max, r.inversion_tol);
    r.passed = std::all_of(r.verdicts.begin(), r.verdicts.end(),
                           [](const Verdict& v) { return v.ladder_ok && v.final_ok; });
    return r;
}

namespace {

using nlohmann::json;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num(const json& j) { return j.is_null() ? NAN : j.get<double>(); }

json opt(const std::optional<double>& v) { return v && std::isfinite(*v) ? json(*v) : json(nullptr); }
std::optional<double> opt(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

json ks_json(const KsResult& k) { return {{"D", num(k.D)}, {"p", num(k.p)}}; }
KsResult ks_from(const json& j) { return {num(j.at("D")), num(j.at("p"))}; }

json vec_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}
std::vector<double> vec_from(const json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(num(x));
    return v;
}

json level_json(const LevelResult& l) {
    json comps = json::array();
    for (const auto& c : l.components)
        comps.push_back({{"ks", ks_json(c.ks)},
                         {"mean", num(c.mean)},
                         {"variance", num(c.variance)},
                         {"var_ratio", num(c.var_ratio)}});
    json dirs = json::array();
    for (const auto& d : l.directional) dirs.push_back(ks_json(d));
    json sigma = json::array();
    for (const auto& row : l.sigma) sigma.push_back(vec_json(row));
    json qt = json::array(), qe = json::array();
    for (const auto& v : l.qq_theoretical) qt.push_back(vec_json(v));
    for (const auto& v : l.qq_empirical) qe.push_back(vec_json(v));
    return {{"level", l.level},
            {"K", l.K},
            {"size", l.size},
            {"nodes", l.nodes},
            {"replicates", l.replicates},
            {"m_n", l.truncation.m_n},
            {"l_K", l.truncation.l_K},
            {"sigma_provenance", l.sigma_provenance},
            {"sigma", sigma},
            {"components", comps},
            {"directional_ks", dirs},
            {"mardia",
             {{"skewness", num(l.mardia.skewness)},
              {"kurtosis", num(l.mardia.kurtosis)},
              {"expected_kurtosis", num(l.mardia.expected_kurtosis)},
              {"skew_p", num(l.mardia.skew_p)},
              {"kurt_z", num(l.mardia.kurt_z)},
              {"flagged", l.mardia.flagged}}},
            {"cov_error", num(l.cov_error)},
            {"decay_slope", opt(l.decay_slope)},
            {"decay_ci_low", opt(l.decay_ci_low)},
            {"decay_ci_high", opt(l.decay_ci_high)},
            {"moment_sup", num(l.moment_sup)},
            {"lambda_min_per_nodes", num(l.lambda_min_per_nodes)},
            {"lambda_min_per_K", num(l.lambda_min_per_K)},
            {"lambda_min_per_volume", num(l.lambda_min_per_volume)},
            {"sigma_crosscheck", vec_json(l.sigma_crosscheck)},
            {"qq_theoretical", qt},
            {"qq_empirical", qe}};
}

LevelResult level_from(const json& j) {
    LevelResult l;
    l.level = j.at("level").get<int>();
    l.K = j.at("K").get<int>();
    l.size = j.at("size").get<int>();
    l.nodes = j.at("nodes").get<std::size_t>();
    l.replicates = j.at("replicates").get<std::size_t>();
    l.truncation = {j.at("m_n").get<int>(), j.at("l_K").get<int>()};
    l.sigma_provenance = j.at("sigma_provenance").get<std::string>();
    for (const auto& row : j.at("sigma")) l.sigma.push_back(vec_from(row));
    for (const auto& c : j.at("components"))
        l.components.push_back({ks_from(c.at("ks")), num(c.at("mean")), num(c.at("variance")), num(c.at("var_ratio"))});
    for (const auto& d : j.at("directional_ks")) l.directional.push_back(ks_from(d));
    const json& m = j.at("mardia");
    l.mardia = {num(m.at("skewness")), num(m.at("kurtosis")), num(m.at("expected_kurtosis")),
                num(m.at("skew_p")),   num(m.at("kurt_z")),   m.at("flagged").get<bool>()};
    l.cov_error = num(j.at("cov_error"));
    l.decay_slope = opt(j.at("decay_slope"));
    l.decay_ci_low = opt(j.at("decay_ci_low"));
    l.decay_ci_high = opt(j.at("decay_ci_high"));
    l.moment_sup = num(j.at("moment_sup"));
    l.lambda_min_per_nodes = num(j.at("lambda_min_per_nodes"));
    l.lambda_min_per_K = num(j.at("lambda_min_per_K"));
    l.lambda_min_per_volume = num(j.at("lambda_min_per_volume"));
    l.sigma_crosscheck = vec_from(j.at("sigma_crosscheck"));
    for (const auto& v : j.at("qq_theoretical")) l.qq_theoretical.push_back(vec_from(v));
    for (const auto& v : j.at("qq_empirical")) l.qq_empirical.push_back(vec_from(v));
    return l;
}

void fmt(std::ostream& out, double v) {
    if (!std::isfinite(v)) {
        out << "nan";
        return;
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    out << buf;
}

}  // namespace

nlohmann::json to_json(const CltReport& r) {
    json levels = json::array();
    for (const auto& l : r.levels) levels.push_back(level_json(l));
    json verdicts = json::array();
    for (const auto& v : r.verdicts)
        verdicts.push_back({{"component", v.component},
                            {"ladder_ok", v.ladder_ok},
                            {"inversions", v.inversions},
                            {"final_ok", v.final_ok}});
    return {{"model", r.model},
            {"regime", to_string(r.regime)},
            {"ks_max", r.ks_max},
            {"inversion_tol", r.inversion_tol},
            {"levels", levels},
            {"verdicts", verdicts},
            {"passed", r.passed}};
}

CltReport report_from_json(const nlohmann::json& j) {
    CltReport r;
    r.model = j.at("model").get<std::string>();
    r.regime = parse_regime(j.at("regime").get<std::string>());
    r.ks_max = j.at("ks_max").get<double>();
    r.inversion_tol = j.at("inversion_tol").get<double>();
    for (const auto& l : j.at("levels")) r.levels.push_back(level_from(l));
    for (const auto& v : j.at("verdicts"))
        r.verdicts.push_back({v.at("component").get<int>(), v.at("ladder_ok").get<bool>(),
                              v.at("inversions").get<int>(), v.at("final_ok").get<bool>()});
    r.passed = j.at("passed").get<bool>();
    return r;
}

void write_summary_csv(std::ostream& out, const CltReport& r) {
    out << "regime,level,component,ks_D,ks_p,mardia_skew,mardia_kurt,var_ratio,decay_slope\n";
    for (const auto& l : r.levels)
        for (std::size_t i = 0; i < l.components.size(); ++i) {
            const auto& c = l.components[i];
            out << to_string(r.regime) << ',' << l.level << ',' << i << ',';
            fmt(out, c.ks.D);
            out << ',';
            fmt(out, c.ks.p);
            out << ',';
            fmt(out, l.mardia.skewness);
            out << ',';
            fmt(out, l.mardia.kurtosis);
            out << ',';
            fmt(out, c.var_ratio);
            out << ',';
            fmt(out, l.decay_slope.value_or(NAN));
            out << '\n';
        }
}

void write_qq_csv(std::ostream& out, const CltReport& r) {
    out << "level,component,theoretical_q,empirical_q\n";
    for (const auto& l : r.levels)
        for (std::size_t i = 0; i < l.qq_empirical.size(); ++i)
            for (std::size_t t = 0; t < l.qq_empirical[i].size(); ++t) {
                out << l.level << ',' << i << ',';
                fmt(out, l.qq_theoretical[i][t]);
                out << ',';
                fmt(out, l.qq_empirical[i][t]);
                out << '\n';
            }
}

// ------------------------------------------------------------- level runs

namespace {

void fill_lambda_ratios(LevelResult& out, const SymMatrix& sigma) {
    const double lmin = min_eigenvalue(sigma);
    const double n = static_cast<double>(out.nodes);
    out.lambda_min_per_nodes = lmin / n;
    out.lambda_min_per_K = lmin / out.K;
    out.lambda_min_per_volume = lmin / (n * out.K);
}

}  // namespace

LevelResult run_car_level(const CarLevelSetup& setup, int level, const RegimeSchedule& schedule,
                          const RngStream& master, int workers, double moment_epsilon) {
    const CarModel& m = *setup.model;
    if (!m.stable())
        throw ModelError("CAR level refused: companion matrix unstable",
                         {"spectral radius " + std::to_string(m.companion_radius()) + " >= 1"});
    const Lattice& lat = m.spec().lattice;
    const int d = static_cast<int>(lat.dim());
    LevelResult out;
    out.level = level;
    out.K = setup.K;
    out.size = setup.size;
    out.nodes = lat.size();
    out.truncation = schedule_truncation(lat.size(), setup.K, d, effective_a(schedule, d), schedule.b);

    TruncatedVarianceAccumulator tv(lat, 2, out.truncation.m_n);
    MomentAccumulator mom(setup.K, lat.size(), 2, 6.0 + moment_epsilon);
    const ReplicateSet reps =
        run_replicates(car_replicate(m, setup.x0, setup.K), static_cast<std::size_t>(schedule.replicates), master,
                       workers, &tv, &mom);

    const CarSigma sig = sigma_analytic(m, setup.x0, setup.K);
    summarize_level(out, reps.T, sig.sigma);
    const SymMatrix emp = sample_covariance(reps.T);
    for (int i = 0; i < 2; ++i) out.sigma_crosscheck.push_back(emp(i, i) / sig.sigma.value(i, i));
    const TruncationRatio tr = truncated_variance(tv, out.truncation.m_n);
    for (int i = 0; i < 2; ++i) out.components[static_cast<std::size_t>(i)].var_ratio = tr.ratio[static_cast<std::size_t>(i)];
    try {
        const DecayFit f = decay_fit(car_lag_norms(m, setup.K, 30), -1.0);
        out.decay_slope = f.slope;
        out.decay_ci_low = f.ci_low;
        out.decay_ci_high = f.ci_high;
    } catch (const InputError&) {
    }
    out.moment_sup = mom.sup();
    fill_lambda_ratios(out, sig.sigma.value);
    return out;
}

LevelResult run_bd_level(const BdLevelSetup& setup, int level, const RegimeSchedule& schedule,
                         const RngStream& master, int workers, double moment_epsilon) {
    const BdSpec& s = *setup.spec;
    const Lattice lat = s.lattice();
    LevelResult out;
    out.level = level;
    out.K = s.K;
    out.size = setup.size;
    out.nodes = lat.size();
    out.truncation = schedule_truncation(lat.size(), s.K, 2, effective_a(schedule, 2), schedule.b);

    TruncatedVarianceAccumulator tv(lat, 3, out.truncation.m_n);
    MomentAccumulator mom(s.K, lat.size(), 3, 6.0 + moment_epsilon);
    const ReplicateSet reps = run_replicates(bd_replicate(s, setup.x0), static_cast<std::size_t>(schedule.replicates),
                                             master, workers, &tv, &mom);
    const Eigen::Index pilot = reps.T.rows() / 5;
    if (pilot < 4 || reps.T.rows() - pilot < 3) throw ConfigError("too few replicates for a pilot split");
    const SigmaMatrix sigma{sample_covariance(reps.T.topRows(pilot)), SigmaProvenance::replicate};
    summarize_level(out, reps.T.bottomRows(reps.T.rows() - pilot), sigma);
    const TruncationRatio tr = truncated_variance(tv, out.truncation.m_n);
    for (int i = 0; i < 3; ++i) out.components[static_cast<std::size_t>(i)].var_ratio = tr.ratio[static_cast<std::size_t>(i)];
    out.moment_sup = mom.sup();
    fill_lambda_ratios(out, sigma.value);
    return out;
}

}  // namespace stclt

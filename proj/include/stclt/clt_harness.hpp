#pragma once

// Monte Carlo checks of the central limit theorem for conditionally centred
// score statistics: replicate generation, standardization, normality
// diagnostics, truncated variances, decay fits and report assembly.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stclt/birthdeath.hpp"
#include "stclt/car_inference.hpp"
#include "stclt/lattice.hpp"
#include "stclt/linalg.hpp"
#include "stclt/rng.hpp"
#include "stclt/score_field.hpp"

namespace stclt {

// ---------------------------------------------------------------- schedules

struct Truncation {
    int m_n;  // spatial truncation distance
    int l_K;  // temporal truncation lag
};

/// m_n = ceil(|D|^a), l_K = ceil(K^b). Requires 0 < a < 1/(4d), 0 < b < 1/2.
Truncation schedule_truncation(std::size_t lattice_size, int K, int d, double a, double b);

enum class Regime { space, time, both };

const char* to_string(Regime r);
Regime parse_regime(const std::string& s);

struct Level {
    int K;
    int size;  // lattice side per axis (CAR) or window side (birth-death)
};

struct RegimeSchedule {
    Regime regime = Regime::time;
    std::vector<Level> levels;
    int replicates = 1000;
    double a = 0.0;  // 0 selects 1/(8d)
    double b = 0.25;
    double ks_max = 0.04;
    double inversion_tol = 0.005;
};

/// Throws ConfigError unless the ladder matches the regime: space keeps K
/// fixed and grows the size, time keeps the size fixed and grows K, both
/// grows both. Also checks the truncation exponents for dimension d.
void validate_schedule(const RegimeSchedule& s, int d);

/// Spatial exponent actually used (the 1/(8d) default when a == 0).
double effective_a(const RegimeSchedule& s, int d);

// --------------------------------------------------------------- replicates

/// Runs `work(i)` for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; callers write results into slot i only.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& work);

/// Score field of replicate r, drawn from its own substream.
using ReplicateFn = std::function<ScoreField(std::size_t r, const RngStream& stream)>;

class TruncatedVarianceAccumulator;
class MomentAccumulator;

struct ReplicateSet {
    Matrix T;  // R x q, row r = T of replicate r
    std::size_t nodes = 0;
    int K = 0;
};

/// Row r uses master.child(r). When accumulators are given, every score
/// field is also folded into them; fields are grouped in fixed blocks of 32
/// replicates and blocks are merged in index order, so results do not depend
/// on the worker count.
ReplicateSet run_replicates(const ReplicateFn& fn, std::size_t R, const RngStream& master, int workers,
                            TruncatedVarianceAccumulator* tv = nullptr, MomentAccumulator* mom = nullptr);

/// CAR replicate: simulate from x0 for K steps and score at the generating
/// parameters.
ReplicateFn car_replicate(const CarModel& m, const Vector& x0, int K);

/// Birth-death replicate from a shared x0, scored at the generating values.
ReplicateFn bd_replicate(const BdSpec& s, const PointPattern& x0);

// ----------------------------------------------------------- standardizing

/// Row-wise Sigma^{-1/2} t. Throws SingularError naming the null direction.
Matrix standardize(const Matrix& T, const SigmaMatrix& sigma);

/// Sample covariance of the rows (divisor R - 1).
SymMatrix sample_covariance(const Matrix& X);

// --------------------------------------------------------------- normality

struct KsResult {
    double D;
    double p;
};

/// One-sample KS distance to N(0,1) and its asymptotic Kolmogorov p-value.
/// Requires n >= 3 finite samples.
KsResult ks_statistic(const std::vector<double>& samples);

/// P(K > sqrt(n) D) from the Kolmogorov limit law (100-term series).
double kolmogorov_pvalue(double D, std::size_t n);

/// Eight fixed unit directions in R^q used for projected KS tests.
std::vector<Vector> projection_directions(int q);

struct MardiaResult {
    double skewness;           // b_{1,q}
    double kurtosis;           // b_{2,q}
    double expected_kurtosis;  // q (q + 2)
    double skew_p;             // chi-square tail of R b1 / 6
    double kurt_z;             // (b2 - q(q+2)) / sqrt(8 q (q+2) / R)
    bool flagged;              // skew_p < 0.001, |kurt_z| > 4 or b2 off by more than half
};

/// Mardia statistics with biased covariance. Needs R >= q + 1 rows and a
/// nonsingular covariance.
MardiaResult mardia(const Matrix& X);

// ---------------------------------------------------- truncated variances

/// Replicate sums of E_k(l)_i E_k(j)_i grouped by lattice distance d(l, j)
/// up to max_dist, plus the full same-time sums, for every component i.
class TruncatedVarianceAccumulator {
public:
    TruncatedVarianceAccumulator(const Lattice& lattice, int q, int max_dist);

    void add(const ScoreField& sf);
    void merge(const TruncatedVarianceAccumulator& other);
    TruncatedVarianceAccumulator empty_like() const;

    std::size_t replicates() const { return count_; }
    int max_dist() const { return max_dist_; }
    int q() const { return q_; }

    /// V^2_i restricted to pairs with d <= m (m <= max_dist, or any m >= the
    /// lattice diameter, which returns sigma^2 exactly).
    double truncated(int comp, int m) const;
    /// sigma^2_i = replicate mean of sum_k (sum_l E_k(l)_i)^2.
    double total(int comp) const;
    /// Mean replicate product per distance: sum / (R * #pairs at d * K).
    std::vector<double> mean_by_distance(int comp) const;

private:
    std::vector<Lattice::Pair> pairs_;
    std::vector<std::size_t> pair_count_;  // per distance
    int q_;
    int max_dist_;
    int diameter_;
    std::size_t count_ = 0;
    int K_ = 0;
    std::vector<double> by_dist_;  // [d * q + i]
    std::vector<double> total_;    // [i]
};

struct TruncationRatio {
    int m_n;
    std::vector<double> ratio;  // V^2 / sigma^2 per component
};

TruncationRatio truncated_variance(const TruncatedVarianceAccumulator& acc, int m_n);

// ----------------------------------------------------------------- decay

struct DecayFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t used = 0;
    std::size_t dropped = 0;
    double threshold = -1.0;  // -1 for temporal, -d for spatial
    bool passes = false;      // ci_high < threshold
};

/// OLS of log|value| on log(lag) with a 95% t interval for the slope.
/// Nonpositive values are dropped; fewer than 5 left is an InputError.
DecayFit decay_fit(const std::vector<std::pair<double, double>>& series, double threshold = -1.0);

/// Frobenius norms of lagged_cov(m, 1, k_base, lag) for lag = 1..max_lag.
std::vector<std::pair<double, double>> car_lag_norms(const CarModel& m, int k_base, int max_lag);

// ---------------------------------------------------------------- moments

/// Replicate means of |E_k(l)_i|^p per (k, l, i).
class MomentAccumulator {
public:
    MomentAccumulator(int K, std::size_t nodes, int q, double power);

    void add(const ScoreField& sf);
    void merge(const MomentAccumulator& other);
    MomentAccumulator empty_like() const { return MomentAccumulator(K_, nodes_, q_, power_); }
    std::size_t replicates() const { return count_; }
    double power() const { return power_; }

    /// sup over (k, l, i) of the replicate mean; 0 without replicates.
    double sup() const;
    /// Average over (k, l, i) of the replicate mean.
    double cell_mean() const;

private:
    int K_;
    std::size_t nodes_;
    int q_;
    double power_;
    std::size_t count_ = 0;
    std::vector<double> sums_;
};

/// d_hat = sup_{k,l,i} mean_r |E|^{6 + epsilon} over a set of fields.
double moment_diagnostic(const std::vector<ScoreField>& fields, double epsilon);

// ----------------------------------------------------------------- reports

struct ComponentResult {
    KsResult ks{0.0, 1.0};
    double mean = 0.0;      // of the standardized component
    double variance = 0.0;  // of the standardized component
    double var_ratio = 0.0; // V^2 / sigma^2
};

struct LevelResult {
    int level = 0;
    int K = 0;
    int size = 0;
    std::size_t nodes = 0;
    std::size_t replicates = 0;  // rows used for the normality tests
    Truncation truncation{1, 1};
    std::string sigma_provenance;
    std::vector<std::vector<double>> sigma;
    std::vector<ComponentResult> components;
    std::vector<KsResult> directional;
    MardiaResult mardia{};
    double cov_error = 0.0;  // ||empirical cov of standardized T - I||_inf
    std::optional<double> decay_slope;
    std::optional<double> decay_ci_low;
    std::optional<double> decay_ci_high;
    double moment_sup = 0.0;
    double lambda_min_per_nodes = 0.0;
    double lambda_min_per_K = 0.0;
    double lambda_min_per_volume = 0.0;
    std::vector<double> sigma_crosscheck;  // replicate / analytic diagonal (CAR)
    std::vector<std::vector<double>> qq_theoretical;  // per component
    std::vector<std::vector<double>> qq_empirical;
};

struct Verdict {
    int component;
    bool ladder_ok;
    int inversions;
    bool final_ok;
};

struct CltReport {
    std::string model;
    Regime regime = Regime::time;
    double ks_max = 0.04;
    double inversion_tol = 0.005;
    std::vector<LevelResult> levels;
    std::vector<Verdict> verdicts;
    bool passed = false;
};

/// KS ladder check: per component the statistic may rise at most once, by at
/// most `inversion_tol`, and must end below `ks_max`.
std::vector<Verdict> ladder_verdicts(const std::vector<LevelResult>& levels, double ks_max,
                                     double inversion_tol);

/// Fills the standardized-sample parts of a LevelResult from T and Sigma.
void summarize_level(LevelResult& out, const Matrix& T, const SigmaMatrix& sigma);

CltReport assemble_report(std::string model, const RegimeSchedule& schedule, std::vector<LevelResult> levels);

nlohmann::json to_json(const CltReport& r);
CltReport report_from_json(const nlohmann::json& j);

/// Summary rows: regime,level,component,ks_D,ks_p,mardia_skew,mardia_kurt,var_ratio,decay_slope
void write_summary_csv(std::ostream& out, const CltReport& r);
/// Rows: level,component,theoretical_q,empirical_q
void write_qq_csv(std::ostream& out, const CltReport& r);

// ------------------------------------------------------------- level runs

struct CarLevelSetup {
    const CarModel* model;
    Vector x0;
    int K;
    int size;
};

/// One CAR level: replicates, analytic Sigma, diagnostics. The replicate
/// covariance is cross-checked against the analytic Sigma.
///
/// Replicate r draws from master.child(r) at every level, so a longer path
/// extends the shorter one step for step (common random numbers across the
/// ladder).
LevelResult run_car_level(const CarLevelSetup& setup, int level, const RegimeSchedule& schedule,
                          const RngStream& master, int workers, double moment_epsilon = 0.5);

struct BdLevelSetup {
    const BdSpec* spec;
    PointPattern x0;
    int size;
};

/// One birth-death level. The first R/5 replicates estimate Sigma; the rest
/// are standardized with it.
LevelResult run_bd_level(const BdLevelSetup& setup, int level, const RegimeSchedule& schedule,
                         const RngStream& master, int workers, double moment_epsilon = 0.5);

}  // namespace stclt

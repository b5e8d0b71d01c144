#pragma once

// Counter-based random streams keyed by (seed, path).
//
// A stream is a Philox4x32-10 counter sequence whose key is a hash of the
// master seed and a path of 64-bit indices (replicate, time step, purpose,
// ...). The same (seed, path) always reproduces the same variates, and child
// streams are derived by value, so parallel replicates share no state.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "stclt/linalg.hpp"

namespace stclt {

enum class Purpose : std::uint64_t {
    noise = 1,
    survival = 2,
    offspring_count = 3,
    offspring_location = 4,
    immigrant = 5,
    initial = 6,
    pilot = 7,
};

class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::vector<std::uint64_t> path = {});

    /// Stream for path + {index}.
    RngStream child(std::uint64_t index) const;
    RngStream child(Purpose p) const { return child(static_cast<std::uint64_t>(p)); }
    RngStream child(std::initializer_list<std::uint64_t> indices) const;

    std::uint64_t seed() const { return seed_; }
    const std::vector<std::uint64_t>& path() const { return path_; }

    std::uint64_t next_u64();
    /// Uniform on the open interval (0, 1).
    double uniform();
    double normal();
    std::uint64_t poisson(double mean);
    bool bernoulli(double p) { return uniform() < p; }

private:
    void refill();

    std::uint64_t seed_;
    std::vector<std::uint64_t> path_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

/// n i.i.d. standard normal variates.
Vector sample_std_normal(RngStream& rng, Eigen::Index n);

}  // namespace stclt

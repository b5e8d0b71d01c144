#pragma once

// Experiment configuration and the command-line front end.
//
// Exit codes: 0 ok, 2 configuration or input, 3 model validation, 4 strict
// acceptance failure, 5 solver failure.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "stclt/birthdeath.hpp"
#include "stclt/car_model.hpp"
#include "stclt/clt_harness.hpp"

namespace stclt {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
    exit_ok = 0,
    exit_config = 2,
    exit_model = 3,
    exit_strict = 4,
    exit_solver = 5,
};

struct CouplingStanza {
    std::optional<Matrix> matrix;  // explicit matrix, otherwise the structure below
    CouplingStructure kind = CouplingStructure::rook;
    double value = 0.0;
    double decay = 0.5;
    int max_range = -1;
};

struct CarX0 {
    std::string type = "constant";  // constant | normal | values | file
    double value = 0.0;
    double sd = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> values;
};

struct CarConfig {
    std::vector<int> shape;               // grid lattice, or empty when points are given
    std::vector<LatticePoint> points;
    std::size_t dim = 0;
    int r = 1;
    std::vector<double> a{1.0};           // one value broadcasts to every node
    std::vector<CouplingStanza> b;        // B_0 .. B_r
    double beta = 0.0;
    double gamma = 0.0;
    int K = 0;                            // path length for simulate / estimate / diagnose
    CarX0 x0;
};

struct BdX0 {
    double intensity = 0.0;
    std::optional<std::uint64_t> seed;
    std::optional<PointPattern> pattern;  // loaded from a points file
};

struct BdConfig {
    BdSpec spec;
    BdX0 x0;
};

struct ExperimentConfig {
    std::string model;  // "car" | "birthdeath"
    std::optional<CarConfig> car;
    std::optional<BdConfig> bd;
    std::optional<RegimeSchedule> regime;
    std::uint64_t seed = 0;
    std::string output = ".";
    int workers = 1;
    std::vector<double> init;  // estimation starting point, may be empty
    std::uint64_t hash = 0;    // FNV-1a of the canonical config text
};

std::uint64_t fnv1a(std::string_view bytes);

/// Schema-checked config. Unknown keys and type mismatches raise ConfigError
/// naming the offending key path. Relative file paths resolve against
/// `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".");

/// Reads and parses a JSON config file; syntax errors report line and column.
ExperimentConfig load_config(const std::string& path);

/// CAR spec for the configured lattice (size 0) or for a grid of side `size`
/// per axis. Structured couplings are rebuilt on the new grid; explicit
/// matrices and per-node vectors must already have the right order.
CarSpec build_car_spec(const CarConfig& c, int size = 0);
Vector build_car_x0(const CarConfig& c, std::size_t nodes);

/// Birth-death spec; with `level` the window becomes [0, size]^2 and K = level.K.
BdSpec build_bd_spec(const BdConfig& c, const std::optional<Level>& level = std::nullopt);
PointPattern build_bd_x0(const BdConfig& c, const BdSpec& s, std::uint64_t master_seed);

/// CAR path CSV: metadata header, an "# x0=" line, then "k,node,value" rows
/// for k = 1..K.
void write_car_path_csv(std::ostream& out, const CarPath& p, const std::vector<std::string>& meta);
/// Returns the path; x0 comes from the "# x0=" line when present, otherwise
/// from `fallback_x0`.
CarPath read_car_path_csv(std::istream& in, std::size_t nodes, const Vector& fallback_x0);

/// Runs the tool with the given arguments (argv[0] is the program name).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stclt

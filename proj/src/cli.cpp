#include "stclt/cli.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "stclt/car_inference.hpp"
#include "stclt/error.hpp"

namespace stclt {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ------------------------------------------------------------ config schema

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void bad(const std::string& path, const std::string& why) { throw ConfigError(path + ": " + why); }

void check_object(const json& o, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!o.is_object()) bad(path.empty() ? "config" : path, "expected an object");
    for (auto it = o.begin(); it != o.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) bad(join(path, it.key()), "unknown key");
    }
}

double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) bad(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(path, "expected a finite number");
    return d;
}

std::int64_t as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) bad(path, "expected an integer");
    return v.get<std::int64_t>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) bad(path, "expected a non-negative integer");
    bad(path, "expected an integer");
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) bad(path, "expected a string");
    return v.get<std::string>();
}

std::vector<double> as_numbers(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

template <class F>
void opt(const json& o, const char* key, const std::string& path, F&& f) {
    if (o.contains(key)) f(o.at(key), join(path, key));
}

const json& req(const json& o, const char* key, const std::string& path) {
    if (!o.contains(key)) bad(join(path, key), "missing required key");
    return o.at(key);
}

int positive_int(const json& v, const std::string& path) {
    const auto i = as_int(v, path);
    if (i < 1 || i > 1'000'000'000) bad(path, "expected a positive integer");
    return static_cast<int>(i);
}

std::string resolve(const std::string& base, const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? p : (fs::path(base) / fp).string();
}

std::vector<double> load_numbers(const std::string& file, const std::string& path) {
    std::ifstream in(file);
    if (!in) bad(path, "cannot open '" + file + "'");
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            char* end = nullptr;
            const double d = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || !std::isfinite(d))
                throw InputError(file + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
            out.push_back(d);
        }
    }
    return out;
}

CouplingStanza parse_coupling(const json& v, const std::string& path) {
    check_object(v, path, {"matrix", "structure"});
    CouplingStanza c;
    if (v.contains("matrix") == v.contains("structure")) bad(path, "give exactly one of 'matrix' or 'structure'");
    if (v.contains("matrix")) {
        const json& m = v.at("matrix");
        const std::string mp = join(path, "matrix");
        if (!m.is_array() || m.empty()) bad(mp, "expected a square array of rows");
        const auto n = static_cast<Eigen::Index>(m.size());
        Matrix mat(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto row = as_numbers(m[static_cast<std::size_t>(i)], mp + "[" + std::to_string(i) + "]");
            if (static_cast<Eigen::Index>(row.size()) != n) bad(mp, "matrix is not square");
            for (Eigen::Index j = 0; j < n; ++j) mat(i, j) = row[static_cast<std::size_t>(j)];
        }
        c.matrix = mat;
        return c;
    }
    const json& s = v.at("structure");
    const std::string sp = join(path, "structure");
    check_object(s, sp, {"type", "value", "decay", "max_range"});
    try {
        c.kind = parse_coupling_structure(as_string(req(s, "type", sp), join(sp, "type")));
    } catch (const Error& e) {
        bad(join(sp, "type"), e.what());
    }
    c.value = as_number(req(s, "value", sp), join(sp, "value"));
    opt(s, "decay", sp, [&](const json& x, const std::string& p) { c.decay = as_number(x, p); });
    opt(s, "max_range", sp, [&](const json& x, const std::string& p) { c.max_range = static_cast<int>(as_int(x, p)); });
    return c;
}

CarConfig parse_car(const json& v, const std::string& base) {
    const std::string path = "car";
    check_object(v, path, {"lattice", "r", "a", "b", "beta", "gamma", "K", "x0"});
    CarConfig c;
    const json& lat = req(v, "lattice", path);
    const std::string lp = "car.lattice";
    check_object(lat, lp, {"shape", "points", "dim"});
    if (lat.contains("shape") == lat.contains("points")) bad(lp, "give exactly one of 'shape' or 'points'");
    if (lat.contains("shape")) {
        const json& sh = lat.at("shape");
        if (!sh.is_array() || sh.empty()) bad(lp + ".shape", "expected a non-empty array");
        for (std::size_t i = 0; i < sh.size(); ++i)
            c.shape.push_back(positive_int(sh[i], lp + ".shape[" + std::to_string(i) + "]"));
        c.dim = c.shape.size();
    } else {
        const json& pts = lat.at("points");
        if (!pts.is_array() || pts.empty()) bad(lp + ".points", "expected a non-empty array");
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const std::string pp = lp + ".points[" + std::to_string(i) + "]";
            if (!pts[i].is_array() || pts[i].empty()) bad(pp, "expected integer coordinates");
            LatticePoint p;
            for (std::size_t k = 0; k < pts[i].size(); ++k) p.coords.push_back(static_cast<int>(as_int(pts[i][k], pp)));
            c.points.push_back(std::move(p));
        }
        c.dim = c.points.front().dim();
    }
    opt(lat, "dim", lp, [&](const json& x, const std::string& p) {
        if (static_cast<std::size_t>(positive_int(x, p)) != c.dim) bad(p, "does not match the coordinates");
    });
    opt(v, "r", path, [&](const json& x, const std::string& p) { c.r = positive_int(x, p); });
    opt(v, "a", path, [&](const json& x, const std::string& p) {
        c.a = x.is_array() ? as_numbers(x, p) : std::vector<double>{as_number(x, p)};
        if (c.a.empty()) bad(p, "expected at least one value");
    });
    const json& b = req(v, "b", path);
    if (!b.is_array()) bad("car.b", "expected an array of coupling stanzas");
    for (std::size_t i = 0; i < b.size(); ++i) c.b.push_back(parse_coupling(b[i], "car.b[" + std::to_string(i) + "]"));
    if (static_cast<int>(c.b.size()) != c.r + 1)
        bad("car.b", "expected r + 1 = " + std::to_string(c.r + 1) + " stanzas, got " + std::to_string(c.b.size()));
    c.beta = as_number(req(v, "beta", path), "car.beta");
    c.gamma = as_number(req(v, "gamma", path), "car.gamma");
    opt(v, "K", path, [&](const json& x, const std::string& p) { c.K = positive_int(x, p); });
    opt(v, "x0", path, [&](const json& x, const std::string& p) {
        check_object(x, p, {"type", "value", "sd", "seed", "values", "path"});
        c.x0.type = as_string(req(x, "type", p), p + ".type");
        if (c.x0.type == "constant") {
            c.x0.value = as_number(req(x, "value", p), p + ".value");
        } else if (c.x0.type == "normal") {
            c.x0.seed = as_u64(req(x, "seed", p), p + ".seed");
            opt(x, "sd", p, [&](const json& y, const std::string& q) { c.x0.sd = as_number(y, q); });
        } else if (c.x0.type == "values") {
            c.x0.values = as_numbers(req(x, "values", p), p + ".values");
        } else if (c.x0.type == "file") {
            c.x0.values = load_numbers(resolve(base, as_string(req(x, "path", p), p + ".path")), p + ".path");
        } else {
            bad(p + ".type", "expected constant, normal, values or file");
        }
    });
    return c;
}

BdConfig parse_bd(const json& v, const std::string& base) {
    const std::string path = "birthdeath";
    check_object(v, path, {"window", "buffer_factor", "omega", "alpha_b", "rho", "survival", "covariate", "K",
                           "quadrature", "x0"});
    BdConfig c;
    BdSpec& s = c.spec;
    const json& w = req(v, "window", path);
    if (w.is_number()) {
        s.window = Window::square(as_number(w, "birthdeath.window"));
    } else {
        if (!w.is_array() || w.size() != 2) bad("birthdeath.window", "expected a side length or [[x0, y0], [x1, y1]]");
        const auto lo = as_numbers(w[0], "birthdeath.window[0]");
        const auto hi = as_numbers(w[1], "birthdeath.window[1]");
        if (lo.size() != 2 || hi.size() != 2) bad("birthdeath.window", "corners must be planar");
        try {
            s.window = Window(lo, hi);
        } catch (const Error& e) {
            bad("birthdeath.window", e.what());
        }
    }
    opt(v, "buffer_factor", path, [&](const json& x, const std::string& p) { s.buffer_factor = as_number(x, p); });
    opt(v, "omega", path, [&](const json& x, const std::string& p) { s.omega = as_number(x, p); });
    s.alpha_b = as_number(req(v, "alpha_b", path), "birthdeath.alpha_b");
    s.rho = as_number(req(v, "rho", path), "birthdeath.rho");
    opt(v, "survival", path, [&](const json& x, const std::string& p) {
        const auto t = as_numbers(x, p);
        if (t.size() != 2) bad(p, "expected [theta0, theta1]");
        s.survival = {t[0], t[1]};
    });
    opt(v, "covariate", path, [&](const json& x, const std::string& p) {
        check_object(x, p, {"type", "value", "coef", "path"});
        const std::string type = as_string(req(x, "type", p), p + ".type");
        if (type == "constant") {
            s.covariate = Covariate::constant(as_number(req(x, "value", p), p + ".value"));
        } else if (type == "linear") {
            const auto k = as_numbers(req(x, "coef", p), p + ".coef");
            if (k.size() != 3) bad(p + ".coef", "expected [c0, cx, cy]");
            s.covariate = Covariate::linear(k[0], k[1], k[2]);
        } else if (type == "grid") {
            const std::string file = resolve(base, as_string(req(x, "path", p), p + ".path"));
            std::ifstream in(file);
            if (!in) bad(p + ".path", "cannot open '" + file + "'");
            s.covariate = load_covariate_grid(in);
        } else {
            bad(p + ".type", "expected constant, linear or grid");
        }
    });
    opt(v, "K", path, [&](const json& x, const std::string& p) { s.K = positive_int(x, p); });
    opt(v, "quadrature", path, [&](const json& x, const std::string& p) { s.quadrature = positive_int(x, p); });
    opt(v, "x0", path, [&](const json& x, const std::string& p) {
        check_object(x, p, {"intensity", "seed", "file"});
        if (x.contains("file")) {
            if (x.contains("intensity")) bad(p, "give either 'file' or 'intensity'");
            const std::string file = resolve(base, as_string(x.at("file"), p + ".file"));
            std::ifstream in(file);
            if (!in) bad(p + ".file", "cannot open '" + file + "'");
            c.x0.pattern = read_points_csv(in).x0;
        } else {
            c.x0.intensity = as_number(req(x, "intensity", p), p + ".intensity");
            if (c.x0.intensity < 0) bad(p + ".intensity", "must be >= 0");
        }
        opt(x, "seed", p, [&](const json& y, const std::string& q) { c.x0.seed = as_u64(y, q); });
    });
    return c;
}

RegimeSchedule parse_regime_stanza(const json& v) {
    const std::string path = "regime";
    check_object(v, path, {"type", "levels", "replicates", "a", "b", "acceptance"});
    RegimeSchedule s;
    try {
        s.regime = parse_regime(as_string(req(v, "type", path), "regime.type"));
    } catch (const ConfigError& e) {
        bad("regime.type", e.what());
    }
    const json& lv = req(v, "levels", path);
    if (!lv.is_array() || lv.empty()) bad("regime.levels", "expected a non-empty array");
    for (std::size_t i = 0; i < lv.size(); ++i) {
        const std::string p = "regime.levels[" + std::to_string(i) + "]";
        check_object(lv[i], p, {"K", "size"});
        s.levels.push_back({positive_int(req(lv[i], "K", p), p + ".K"), positive_int(req(lv[i], "size", p), p + ".size")});
    }
    opt(v, "replicates", path, [&](const json& x, const std::string& p) { s.replicates = positive_int(x, p); });
    opt(v, "a", path, [&](const json& x, const std::string& p) { s.a = as_number(x, p); });
    opt(v, "b", path, [&](const json& x, const std::string& p) { s.b = as_number(x, p); });
    opt(v, "acceptance", path, [&](const json& x, const std::string& p) {
        check_object(x, p, {"ks_max", "inversion_tol"});
        opt(x, "ks_max", p, [&](const json& y, const std::string& q) { s.ks_max = as_number(y, q); });
        opt(x, "inversion_tol", p, [&](const json& y, const std::string& q) { s.inversion_tol = as_number(y, q); });
    });
    return s;
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::string& base_dir) {
    check_object(j, "", {"model", "car", "birthdeath", "regime", "seed", "output", "workers", "estimate"});
    ExperimentConfig c;
    c.hash = fnv1a(j.dump());
    c.model = as_string(req(j, "model", ""), "model");
    if (c.model == "car") {
        if (j.contains("birthdeath")) bad("birthdeath", "stanza given for model 'car'");
        c.car = parse_car(req(j, "car", ""), base_dir);
    } else if (c.model == "birthdeath") {
        if (j.contains("car")) bad("car", "stanza given for model 'birthdeath'");
        c.bd = parse_bd(req(j, "birthdeath", ""), base_dir);
    } else {
        bad("model", "expected 'car' or 'birthdeath'");
    }
    opt(j, "regime", "", [&](const json& x, const std::string&) {
        c.regime = parse_regime_stanza(x);
        const int d = c.car ? static_cast<int>(c.car->dim) : 2;
        try {
            validate_schedule(*c.regime, d);
        } catch (const ConfigError& e) {
            bad("regime", e.what());
        }
    });
    opt(j, "seed", "", [&](const json& x, const std::string& p) { c.seed = as_u64(x, p); });
    opt(j, "output", "", [&](const json& x, const std::string& p) { c.output = resolve(base_dir, as_string(x, p)); });
    opt(j, "workers", "", [&](const json& x, const std::string& p) { c.workers = positive_int(x, p); });
    opt(j, "estimate", "", [&](const json& x, const std::string& p) {
        check_object(x, p, {"init"});
        opt(x, "init", p, [&](const json& y, const std::string& q) { c.init = as_numbers(y, q); });
    });
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error");
    }
    const std::string base = fs::path(path).parent_path().string();
    return parse_config(j, base.empty() ? "." : base);
}

// ------------------------------------------------------------ model builders

CarSpec build_car_spec(const CarConfig& c, int size) {
    Lattice lat = [&] {
        if (size > 0) {
            const std::vector<int> shape(c.dim, size);
            return Lattice::grid(shape);
        }
        if (!c.shape.empty()) return Lattice::grid(c.shape);
        return Lattice(c.dim, c.points);
    }();
    const auto n = static_cast<Eigen::Index>(lat.size());
    Vector a(n);
    if (c.a.size() == 1) {
        a.setConstant(c.a.front());
    } else if (static_cast<Eigen::Index>(c.a.size()) == n) {
        for (Eigen::Index i = 0; i < n; ++i) a(i) = c.a[static_cast<std::size_t>(i)];
    } else {
        throw ConfigError("car.a: " + std::to_string(c.a.size()) + " values for " + std::to_string(n) + " nodes");
    }
    std::vector<Matrix> b;
    for (std::size_t i = 0; i < c.b.size(); ++i) {
        const CouplingStanza& s = c.b[i];
        if (s.matrix) {
            if (s.matrix->rows() != n)
                throw ConfigError("car.b[" + std::to_string(i) + "].matrix: order " + std::to_string(s.matrix->rows()) +
                                  " does not match " + std::to_string(n) + " nodes");
            b.push_back(*s.matrix);
        } else {
            b.push_back(coupling_matrix(lat, s.kind, s.value, s.decay, s.max_range));
        }
    }
    return CarSpec{std::move(lat), c.r, a, std::move(b), c.beta, c.gamma};
}

Vector build_car_x0(const CarConfig& c, std::size_t nodes) {
    const auto n = static_cast<Eigen::Index>(nodes);
    if (c.x0.type == "constant") return Vector::Constant(n, c.x0.value);
    if (c.x0.type == "normal") {
        RngStream rng(c.x0.seed, {static_cast<std::uint64_t>(Purpose::initial)});
        return c.x0.sd * sample_std_normal(rng, n);
    }
    if (static_cast<Eigen::Index>(c.x0.values.size()) != n)
        throw ConfigError("car.x0: " + std::to_string(c.x0.values.size()) + " values for " + std::to_string(n) +
                          " nodes");
    return Eigen::Map<const Vector>(c.x0.values.data(), n);
}

BdSpec build_bd_spec(const BdConfig& c, const std::optional<Level>& level) {
    BdSpec s = c.spec;
    if (level) {
        s.window = Window::square(level->size);
        s.K = level->K;
    }
    validate_bd_spec(s);
    return s;
}

PointPattern build_bd_x0(const BdConfig& c, const BdSpec& s, std::uint64_t master_seed) {
    if (c.x0.pattern) return *c.x0.pattern;
    return initial_pattern(s, c.x0.intensity,
                           RngStream(c.x0.seed.value_or(master_seed), {static_cast<std::uint64_t>(Purpose::initial)}));
}

// --------------------------------------------------------------- CAR CSV

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_long(const std::string& s, long& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtol(s.c_str(), &end, 10);
    return end == s.c_str() + s.size();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_car_path_csv(std::ostream& out, const CarPath& p, const std::vector<std::string>& meta) {
    for (const auto& m : meta) out << "# " << m << '\n';
    out << "# x0=";
    for (Eigen::Index i = 0; i < p.x0().size(); ++i) out << (i ? "," : "") << g17(p.x0()(i));
    out << "\nk,node,value\n";
    for (int k = 1; k <= p.K(); ++k) {
        const Vector& x = p.state(k);
        for (Eigen::Index l = 0; l < x.size(); ++l) out << k << ',' << l << ',' << g17(x(l)) << '\n';
    }
}

CarPath read_car_path_csv(std::istream& in, std::size_t nodes, const Vector& fallback_x0) {
    std::map<long, std::vector<std::optional<double>>> rows;
    std::optional<Vector> x0;
    std::string line;
    std::size_t lineno = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        ++lineno;
        auto fail = [&](const std::string& why) {
            return InputError("CAR path CSV line " + std::to_string(lineno) + ": " + why);
        };
        if (line.rfind("# x0=", 0) == 0) {
            const auto f = split(line.substr(5), ',');
            if (f.size() != nodes) throw fail("x0 has " + std::to_string(f.size()) + " values, expected " + std::to_string(nodes));
            Vector v(static_cast<Eigen::Index>(nodes));
            for (std::size_t i = 0; i < nodes; ++i)
                if (!parse_double(f[i], v(static_cast<Eigen::Index>(i)))) throw fail("bad x0 value");
            x0 = v;
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        if (!header_done) {
            header_done = true;
            if (line.rfind("k,", 0) == 0) continue;
        }
        const auto f = split(line, ',');
        if (f.size() != 3) throw fail("expected 3 fields");
        long k = 0, node = 0;
        double value = 0;
        if (!parse_long(f[0], k) || k < 1) throw fail("bad step index");
        if (!parse_long(f[1], node) || node < 0 || static_cast<std::size_t>(node) >= nodes) throw fail("bad node index");
        if (!parse_double(f[2], value)) throw fail("bad value");
        auto& row = rows[k];
        if (row.empty()) row.resize(nodes);
        if (row[static_cast<std::size_t>(node)]) throw fail("duplicate (k, node)");
        row[static_cast<std::size_t>(node)] = value;
    }
    if (rows.empty()) throw InputError("CAR path CSV: no data rows");
    CarPath p;
    p.x.push_back(x0 ? *x0 : fallback_x0);
    if (static_cast<std::size_t>(p.x.front().size()) != nodes) throw InputError("CAR path CSV: x0 size mismatch");
    long expect = 1;
    for (const auto& [k, row] : rows) {
        if (k != expect) throw InputError("CAR path CSV: step " + std::to_string(expect) + " missing");
        Vector v(static_cast<Eigen::Index>(nodes));
        for (std::size_t i = 0; i < nodes; ++i) {
            if (!row[i]) throw InputError("CAR path CSV: step " + std::to_string(k) + " lacks node " + std::to_string(i));
            v(static_cast<Eigen::Index>(i)) = *row[i];
        }
        p.x.push_back(v);
        ++expect;
    }
    return p;
}

// --------------------------------------------------------------- commands

namespace {

struct Context {
    ExperimentConfig cfg;
    std::string out_dir;
    std::uint64_t seed = 0;
    int workers = 1;
    bool strict = false;
    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    std::string hash_hex() const {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016" PRIx64, cfg.hash);
        return buf;
    }
    std::vector<std::string> meta_lines() const {
        return {std::string("stclt ") + kToolVersion, "config_hash=" + hash_hex(), "seed=" + std::to_string(seed)};
    }
    json meta() const {
        return {{"tool", "stclt"}, {"version", kToolVersion}, {"config_hash", hash_hex()}, {"seed", seed}};
    }
    std::string file(const std::string& name) const {
        fs::create_directories(out_dir);
        return (fs::path(out_dir) / name).string();
    }
};

std::ofstream open_out(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    return f;
}

void write_json(const std::string& path, const json& j) {
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

void write_meta(std::ostream& f, const Context& ctx) {
    for (const auto& m : ctx.meta_lines()) f << "# " << m << '\n';
}

json trace_json(const std::vector<NewtonIterate>& trace) {
    json t = json::array();
    for (const auto& it : trace)
        t.push_back({{"x", it.x}, {"residual_norm", it.residual_norm}, {"step_norm", it.step_norm},
                     {"halvings", it.halvings}});
    return t;
}

CarModel checked_car_model(CarSpec spec, bool need_stable) {
    CarModel m(std::move(spec));
    if (need_stable && !m.stable())
        throw ModelError("CAR model is unstable",
                         {"companion spectral radius " + std::to_string(m.companion_radius()) + " >= 1"});
    return m;
}

int car_path_length(const Context& ctx) {
    if (ctx.cfg.car->K > 0) return ctx.cfg.car->K;
    if (ctx.cfg.regime) return ctx.cfg.regime->levels.front().K;
    throw ConfigError("car.K: missing required key (no regime level to fall back on)");
}

int cmd_simulate(const Context& ctx, const std::string& path_opt) {
    const std::string path = path_opt.empty() ? ctx.file("path.csv") : path_opt;
    const RngStream rng(ctx.seed);
    if (ctx.cfg.car) {
        const CarModel m = checked_car_model(build_car_spec(*ctx.cfg.car), false);
        const CarPath p = simulate_path(m, build_car_x0(*ctx.cfg.car, m.nodes()), car_path_length(ctx), rng);
        auto f = open_out(path);
        write_car_path_csv(f, p, ctx.meta_lines());
    } else {
        const BdSpec s = build_bd_spec(*ctx.cfg.bd);
        const BdPath p = simulate_path(s, build_bd_x0(*ctx.cfg.bd, s, ctx.seed), rng);
        auto f = open_out(path);
        write_meta(f, ctx);
        write_points_csv(f, p);
    }
    *ctx.out << "wrote " << path << '\n';
    return exit_ok;
}

int cmd_estimate(const Context& ctx, const std::string& data, const std::vector<double>& init_opt) {
    if (data.empty()) throw ConfigError("--data: required for estimate");
    std::ifstream in(data);
    if (!in) throw ConfigError("--data: cannot open '" + data + "'");
    const std::vector<double>& init = init_opt.empty() ? ctx.cfg.init : init_opt;
    json j{{"meta", ctx.meta()}, {"model", ctx.cfg.model}, {"data", fs::path(data).filename().string()}};
    int code = exit_ok;
    if (ctx.cfg.car) {
        const CarSpec spec = build_car_spec(*ctx.cfg.car);
        (void)checked_car_model(spec, false);
        const CarPath p = read_car_path_csv(in, spec.nodes(), build_car_x0(*ctx.cfg.car, spec.nodes()));
        if (!init.empty() && init.size() != 2) throw ConfigError("init: expected [beta, gamma]");
        const CarParams start = init.empty() ? CarParams{0.0, 0.0} : CarParams{init[0], init[1]};
        CarEstimate e;
        try {
            e = estimate_params(spec, p, start, &e);
        } catch (const SolverError& ex) {
            e.message = ex.what();
            code = exit_solver;
        }
        j["estimate"] = {{"beta", e.beta_hat}, {"gamma", e.gamma_hat}};
        j["converged"] = code == exit_ok && e.converged;
        j["iterations"] = e.iterations;
        j["score_norm"] = std::isfinite(e.score_norm) ? json(e.score_norm) : json(nullptr);
        j["message"] = e.message;
        j["trace"] = trace_json(e.trace);
    } else {
        BdPath p = read_points_csv(in);
        BdSpec s = ctx.cfg.bd->spec;
        s.K = std::max(1, p.K());
        validate_bd_spec(s);
        if (!init.empty() && init.size() != 3) throw ConfigError("init: expected [log_alpha_b, theta0, theta1]");
        const BdParams start = init.empty() ? BdParams{0.0, 0.0, 0.0} : BdParams{init[0], init[1], init[2]};
        BdEstimate e;
        try {
            e = estimate_bd_params(s, p, start, &e);
        } catch (const SolverError& ex) {
            e.message = ex.what();
            code = exit_solver;
        }
        j["estimate"] = {{"log_alpha_b", e.theta.log_alpha_b}, {"theta0", e.theta.theta0}, {"theta1", e.theta.theta1}};
        j["converged"] = code == exit_ok && e.converged;
        j["iterations"] = e.iterations;
        j["score_norm"] = std::isfinite(e.score_norm) ? json(e.score_norm) : json(nullptr);
        j["message"] = e.message;
        j["trace"] = trace_json(e.trace);
    }
    const std::string path = ctx.file("estimate.json");
    write_json(path, j);
    *ctx.out << (code == exit_ok ? "wrote " : "solver failed; trace in ") << path << '\n';
    return code;
}

int cmd_clt(const Context& ctx) {
    if (!ctx.cfg.regime) throw ConfigError("regime: missing required key for clt");
    const RegimeSchedule& sched = *ctx.cfg.regime;
    const RngStream master(ctx.seed);
    std::vector<LevelResult> levels;

    if (ctx.cfg.car) {
        // Every level is validated before any simulation starts.
        std::vector<CarModel> models;
        for (const Level& l : sched.levels) models.push_back(checked_car_model(build_car_spec(*ctx.cfg.car, l.size), true));
        for (std::size_t i = 0; i < sched.levels.size(); ++i) {
            const Level& l = sched.levels[i];
            const CarLevelSetup setup{&models[i], build_car_x0(*ctx.cfg.car, models[i].nodes()), l.K, l.size};
            levels.push_back(run_car_level(setup, static_cast<int>(i), sched, master, ctx.workers));
            *ctx.out << "level " << i << " done\n";
        }
    } else {
        std::vector<BdSpec> specs;
        for (const Level& l : sched.levels) specs.push_back(build_bd_spec(*ctx.cfg.bd, l));
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const BdLevelSetup setup{&specs[i], build_bd_x0(*ctx.cfg.bd, specs[i], ctx.seed + i), sched.levels[i].size};
            levels.push_back(run_bd_level(setup, static_cast<int>(i), sched, master, ctx.workers));
            *ctx.out << "level " << i << " done\n";
        }
    }

    const CltReport report = assemble_report(ctx.cfg.model, sched, std::move(levels));
    json j = to_json(report);
    j["meta"] = ctx.meta();
    write_json(ctx.file("clt_report.json"), j);
    {
        auto f = open_out(ctx.file("clt_summary.csv"));
        write_meta(f, ctx);
        write_summary_csv(f, report);
    }
    {
        auto f = open_out(ctx.file("clt_qq.csv"));
        write_meta(f, ctx);
        write_qq_csv(f, report);
    }
    for (const auto& v : report.verdicts)
        *ctx.out << "component " << v.component << ": ladder " << (v.ladder_ok ? "ok" : "FAIL") << ", final KS "
                 << report.levels.back().components[static_cast<std::size_t>(v.component)].ks.D
                 << (v.final_ok ? " ok" : " FAIL") << '\n';
    *ctx.out << (report.passed ? "acceptance passed" : "acceptance failed") << '\n';
    return ctx.strict && !report.passed ? exit_strict : exit_ok;
}

json decay_json(const std::vector<std::pair<double, double>>& series, double threshold) {
    try {
        const DecayFit f = decay_fit(series, threshold);
        return {{"slope", f.slope}, {"ci_low", f.ci_low}, {"ci_high", f.ci_high}, {"threshold", f.threshold},
                {"used", f.used}, {"dropped", f.dropped}, {"passes", f.passes}};
    } catch (const InputError& e) {
        return {{"error", e.what()}};
    }
}

json lambda_json(const SymMatrix& sigma, std::size_t nodes, int K) {
    const double l = min_eigenvalue(sigma);
    const double n = static_cast<double>(nodes);
    return {{"lambda_min", l}, {"per_nodes", l / n}, {"per_K", l / K}, {"per_volume", l / (n * K)}};
}

std::vector<std::pair<double, double>> spatial_series(const TruncatedVarianceAccumulator& tv) {
    std::vector<std::pair<double, double>> out;
    const auto by = tv.mean_by_distance(0);
    for (std::size_t d = 1; d < by.size(); ++d) out.emplace_back(static_cast<double>(d), std::abs(by[d]));
    return out;
}

int cmd_diagnose(const Context& ctx) {
    const RngStream master(ctx.seed);
    // The birth-death range check needs at least 500 paths.
    const int R = std::max(ctx.cfg.regime ? ctx.cfg.regime->replicates : 500, ctx.cfg.bd ? 500 : 0);
    json j{{"meta", ctx.meta()}, {"model", ctx.cfg.model}, {"replicates", R}};
    int code = exit_ok;
    if (ctx.cfg.car) {
        const CarModel m = checked_car_model(build_car_spec(*ctx.cfg.car), true);
        const int K = car_path_length(ctx);
        const Vector x0 = build_car_x0(*ctx.cfg.car, m.nodes());
        const int d = static_cast<int>(m.spec().lattice.dim());
        j["K"] = K;
        j["spectral_radius"] = m.companion_radius();
        j["temporal_decay"] = decay_json(car_lag_norms(m, K, 30), -1.0);
        TruncatedVarianceAccumulator tv(m.spec().lattice, 2, m.spec().lattice.diameter());
        MomentAccumulator mom(K, m.nodes(), 2, 6.5);
        run_replicates(car_replicate(m, x0, K), static_cast<std::size_t>(R), master, ctx.workers, &tv, &mom);
        j["spatial_decay"] = decay_json(spatial_series(tv), -static_cast<double>(d));
        j["moments"] = {{"epsilon", 0.5}, {"sup", mom.sup()}, {"cell_mean", mom.cell_mean()}};
        j["lambda_min"] = lambda_json(sigma_analytic(m, x0, K).sigma.value, m.nodes(), K);
    } else {
        const BdSpec s = build_bd_spec(*ctx.cfg.bd);
        const PointPattern x0 = build_bd_x0(*ctx.cfg.bd, s, ctx.seed);
        const Lattice lat = s.lattice();
        std::vector<BdPath> paths(static_cast<std::size_t>(R));
        parallel_for(paths.size(), ctx.workers, [&](std::size_t r) { paths[r] = simulate_path(s, x0, master.child(r)); });
        TruncatedVarianceAccumulator tv(lat, 3, lat.diameter());
        MomentAccumulator mom(s.K, lat.size(), 3, 6.5);
        Matrix T(R, 3);
        const BdParams theta{std::log(s.alpha_b), s.survival[0], s.survival[1]};
        for (std::size_t r = 0; r < paths.size(); ++r) {
            const ScoreField sf = score_field(s, paths[r], theta);
            T.row(static_cast<Eigen::Index>(r)) = score_total(sf).transpose();
            tv.add(sf);
            mom.add(sf);
        }
        j["K"] = s.K;
        j["spatial_decay"] = decay_json(spatial_series(tv), -2.0);
        j["moments"] = {{"epsilon", 0.5}, {"sup", mom.sup()}, {"cell_mean", mom.cell_mean()}};
        j["lambda_min"] = lambda_json(sample_covariance(T), lat.size(), s.K);
        try {
            const RangeCheck rc = independence_range_check(s, paths);
            j["range_check"] = {{"far_separation", rc.far_separation}, {"far_corr", rc.far_corr},
                                {"far_pass", rc.far_pass},             {"near_separation", rc.near_separation},
                                {"near_corr", rc.near_corr},           {"near_pass", rc.near_pass},
                                {"band", rc.band},                     {"replicates", rc.replicates}};
        } catch (const Error& e) {
            j["range_check"] = {{"error", e.what()}};
            *ctx.err << "error: range check: " << e.what() << '\n';
            code = exit_config;
        }
    }
    const std::string path = ctx.file("diagnose.json");
    write_json(path, j);
    *ctx.out << "wrote " << path << '\n';
    return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Simulation, inference and CLT checks for conditionally centred space-time fields", "stclt"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int workers = 0;
    bool strict = false;
    app.add_option("--config", config_path, "experiment config (JSON)")->required();
    app.add_option("--out", out_dir, "output directory (overrides the config)");
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--workers", workers, "replicate worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--strict", strict, "exit 4 when acceptance thresholds fail");

    std::string sim_path, data_path;
    std::vector<double> init;
    auto* sim = app.add_subcommand("simulate", "simulate one path");
    sim->add_option("--path", sim_path, "output CSV (default <out>/path.csv)");
    auto* est = app.add_subcommand("estimate", "estimate parameters from a path CSV");
    est->add_option("--data", data_path, "path CSV")->required();
    est->add_option("--init", init, "starting point")->delimiter(',');
    auto* clt = app.add_subcommand("clt", "run the CLT ladder");
    auto* diag = app.add_subcommand("diagnose", "decay, moment and variance diagnostics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        Context ctx;
        ctx.cfg = load_config(config_path);
        ctx.out_dir = out_dir.empty() ? ctx.cfg.output : out_dir;
        ctx.seed = seed.value_or(ctx.cfg.seed);
        ctx.workers = ctx.cfg.workers;
        if (workers > 0) {
            ctx.workers = workers;
        } else if (const char* env = std::getenv("STCLT_WORKERS")) {
            const int w = std::atoi(env);
            if (w < 1) throw ConfigError("STCLT_WORKERS: expected a positive integer");
            ctx.workers = w;
        }
        ctx.strict = strict;
        ctx.out = &out;
        ctx.err = &err;
        if (sim->parsed()) return cmd_simulate(ctx, sim_path);
        if (est->parsed()) return cmd_estimate(ctx, data_path, init);
        if (clt->parsed()) return cmd_clt(ctx);
        if (diag->parsed()) return cmd_diagnose(ctx);
        return exit_config;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const ModelError& e) {
        err << "model validation failed: " << e.what() << '\n';
        for (const auto& i : e.issues()) err << "  " << i << '\n';
        return exit_model;
    } catch (const DomainError& e) {
        err << "model validation failed: " << e.what() << '\n';
        return exit_model;
    } catch (const SolverError& e) {
        err << "solver failed: " << e.what() << '\n';
        return exit_solver;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace stclt

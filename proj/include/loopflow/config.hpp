#pragma once

#include <boost/crc.hpp>
#include <toml.hpp>

#include "loopflow/perturbation.hpp"

namespace loopflow {

inline constexpr int kConfigSchema = 1;

struct PerturbationConfig {
    std::string kind = "cosine"; // cosine | linear | zero
    double amplitude = 0.0;
    std::vector<int> frequencies;
    int time_frequency = 0;
    std::vector<double> direction;

    Perturbation build(const Manifold& m) const {
        if (kind == "zero") return Perturbation::zero();
        if (kind == "cosine") return Perturbation::cosine(amplitude, frequencies, time_frequency);
        if (kind == "linear") {
            if (static_cast<int>(direction.size()) != m.ambient_dim())
                throw Error("config-invalid", "perturbation.direction must have one entry per ambient coordinate",
                            ErrorKind::usage);
            return Perturbation::linear(amplitude, Eigen::Map<const Vec>(direction.data(), m.ambient_dim()));
        }
        throw Error("config-invalid", "unknown perturbation kind '" + kind + "'", ErrorKind::usage);
    }
};

struct Tolerances {
    double tol_crit = -1.0; // <= 0 selects 1e-9 sqrt(N)
    double tol_conv = 1e-8;
    double tol_nondeg = 1e-6;
    double tol_reg = 1e-6;
    double dedup_radius = -1.0;   // critical points; <= 0 selects 1e-4 iota
    double capture_radius = -1.0; // <= 0 selects 0.05 iota
    double rank_tol = 1e-6;
};

/// Initial loop of the `flow` subcommand: a seed in the unstable chart of a
/// critical point, or a constant loop.
struct FlowStart {
    std::string kind = "unstable"; // unstable | constant
    size_t source = 0;             // critical point, by position in action order
    std::vector<double> direction{1.0};
    std::vector<double> angles;    // constant loop, in turns
};

struct AdmissibleConfig {
    double U_radius = -1.0; // <= 0 selects 0.05 iota
    int probes = 512;
    double probe_amplitude = 0.3;
    double probe_flow_time = 0.02;
    int bump_k = 10;
    std::vector<double> bump_center; // constant centre loop, in turns
    double bump_fraction = 1.0;      // |v| = bump_fraction * r^a
    double control_factor = 2.0;     // negative control |v| = control_factor * delta^a
};

struct CheckConfig {
    double tol_energy = 1e-3;
    double tol_gradient = 1e-4;
    int gradient_pairs = 50;
    double tol_asymmetry = 1e-8;
    int orientation_trials = 8;
    double sep_min_factor = 0.1; // ev_0 separation threshold in units of iota
    double rank_probe_time = 0.5;
};

struct RunConfig {
    int schema = kConfigSchema;
    std::string name = "run";
    ManifoldSpec manifold;
    PerturbationConfig perturbation;
    double level = 1.0;
    std::optional<std::vector<int>> component;
    int n = 64;
    double h_s = 1e-3;
    double s_max = 50.0;
    Tolerances tol;
    int lattice_per_axis = 8;
    int max_winding = 0;
    int sweep_angles = 256;
    std::optional<std::vector<int>> reference_betti;
    std::string out_dir = "out";
    uint64_t rng_seed = 1;
    int threads = 0;
    FlowStart flow;
    AdmissibleConfig admissible;
    CheckConfig check;

    std::string canonical; // normalized TOML text the hash is taken over
    std::string hash;

    Manifold make_manifold() const { return Manifold(manifold); }
    Perturbation make_perturbation() const { return perturbation.build(make_manifold()); }
};

namespace detail {

template <class T>
T get_or(const toml::table& t, std::string_view key, T fallback) {
    const auto node = t[key];
    if (!node) return fallback;
    if constexpr (std::is_same_v<T, double>) {
        if (auto v = node.template value<double>()) return *v;
    } else if constexpr (std::is_integral_v<T>) {
        if (auto v = node.template value<int64_t>()) return static_cast<T>(*v);
    } else {
        if (auto v = node.template value<T>()) return *v;
    }
    throw Error("config-invalid", "key '" + std::string(key) + "' has the wrong type", ErrorKind::usage);
}

template <class T>
std::optional<std::vector<T>> get_array(const toml::table& t, std::string_view key) {
    const auto* arr = t[key].as_array();
    if (!t[key]) return std::nullopt;
    if (!arr) throw Error("config-invalid", "key '" + std::string(key) + "' must be an array", ErrorKind::usage);
    std::vector<T> out;
    for (const auto& e : *arr) {
        std::optional<T> v;
        if constexpr (std::is_same_v<T, double>) v = e.template value<double>();
        else if (auto i = e.template value<int64_t>()) v = static_cast<T>(*i);
        if (!v) throw Error("config-invalid", "array '" + std::string(key) + "' has an entry of the wrong type", ErrorKind::usage);
        out.push_back(*v);
    }
    return out;
}

inline const toml::table& sub(const toml::table& t, std::string_view key) {
    static const toml::table empty;
    if (!t[key]) return empty;
    if (const auto* s = t[key].as_table()) return *s;
    throw Error("config-invalid", "'" + std::string(key) + "' must be a table", ErrorKind::usage);
}

inline void reject_unknown(const toml::table& t, std::initializer_list<std::string_view> known, const std::string& where) {
    for (const auto& [k, v] : t) {
        (void)v;
        if (std::find(known.begin(), known.end(), k.str()) == known.end())
            throw Error("config-invalid", "unknown key '" + std::string(k.str()) + "' in " + where, ErrorKind::usage);
    }
}

inline void positive(double v, const char* name) {
    if (!(v > 0)) throw Error("config-invalid", std::string(name) + " must be positive", ErrorKind::usage);
}

} // namespace detail

/// CRC-64 of the normalized configuration, as 16 hex digits.
inline std::string content_hash(std::string_view text) {
    boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
    crc.process_bytes(text.data(), text.size());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << crc.checksum();
    return os.str();
}

inline RunConfig parse_config(const toml::table& root) {
    using namespace detail;
    reject_unknown(root,
                   {"schema", "name", "manifold", "perturbation", "level", "grid", "tolerances", "seeds", "moduli",
                    "reference", "output", "run", "flow", "admissible", "check"},
                   "the top level");
    RunConfig c;
    if (!root["schema"]) throw Error("config-invalid", "missing schema version", ErrorKind::usage);
    c.schema = get_or<int>(root, "schema", 0);
    if (c.schema != kConfigSchema)
        throw Error("config-invalid", "unsupported schema version " + std::to_string(c.schema), ErrorKind::usage);
    c.name = get_or<std::string>(root, "name", c.name);

    const auto& man = sub(root, "manifold");
    reject_unknown(man, {"kind", "dim", "scale"}, "[manifold]");
    const std::string kind = get_or<std::string>(man, "kind", "circle");
    const int dim = get_or<int>(man, "dim", kind == "circle" ? 1 : 2);
    if (kind == "circle") c.manifold = ManifoldSpec::circle(get_or(man, "scale", 1.0 / (2 * std::numbers::pi)));
    else if (kind == "torus") c.manifold = ManifoldSpec::flat_torus(dim, get_or(man, "scale", 1.0));
    else if (kind == "sphere") c.manifold = ManifoldSpec::round_sphere(dim, get_or(man, "scale", 1.0));
    else throw Error("config-invalid", "unknown manifold kind '" + kind + "'", ErrorKind::usage);
    detail::positive(c.manifold.scale, "manifold.scale");
    if (dim < 1) throw Error("config-invalid", "manifold.dim must be positive", ErrorKind::usage);

    const auto& per = sub(root, "perturbation");
    reject_unknown(per, {"kind", "amplitude", "frequencies", "time_frequency", "direction"}, "[perturbation]");
    c.perturbation.kind = get_or<std::string>(per, "kind", "zero");
    c.perturbation.amplitude = get_or(per, "amplitude", 0.0);
    c.perturbation.frequencies = get_array<int>(per, "frequencies").value_or(std::vector<int>{});
    c.perturbation.time_frequency = get_or<int>(per, "time_frequency", 0);
    c.perturbation.direction = get_array<double>(per, "direction").value_or(std::vector<double>{});

    const auto& lvl = sub(root, "level");
    reject_unknown(lvl, {"a", "component"}, "[level]");
    c.level = get_or(lvl, "a", c.level);
    c.component = get_array<int>(lvl, "component");

    const auto& grid = sub(root, "grid");
    reject_unknown(grid, {"n", "h_s", "s_max"}, "[grid]");
    c.n = get_or<int>(grid, "n", c.n);
    c.h_s = get_or(grid, "h_s", c.h_s);
    c.s_max = get_or(grid, "s_max", c.s_max);
    if (c.n < 16 || (c.n & (c.n - 1)) != 0)
        throw Error("config-invalid", "grid.n must be a power of two >= 16", ErrorKind::usage);
    detail::positive(c.h_s, "grid.h_s");
    detail::positive(c.s_max, "grid.s_max");

    const auto& tol = sub(root, "tolerances");
    reject_unknown(tol, {"tol_crit", "tol_conv", "tol_nondeg", "tol_reg", "dedup_radius", "capture_radius", "rank_tol"},
                   "[tolerances]");
    c.tol.tol_crit = get_or(tol, "tol_crit", c.tol.tol_crit);
    c.tol.tol_conv = get_or(tol, "tol_conv", c.tol.tol_conv);
    c.tol.tol_nondeg = get_or(tol, "tol_nondeg", c.tol.tol_nondeg);
    c.tol.tol_reg = get_or(tol, "tol_reg", c.tol.tol_reg);
    c.tol.dedup_radius = get_or(tol, "dedup_radius", c.tol.dedup_radius);
    c.tol.capture_radius = get_or(tol, "capture_radius", c.tol.capture_radius);
    c.tol.rank_tol = get_or(tol, "rank_tol", c.tol.rank_tol);
    for (const auto& [v, name] : {std::pair{c.tol.tol_conv, "tol_conv"}, {c.tol.tol_nondeg, "tol_nondeg"},
                                  {c.tol.tol_reg, "tol_reg"}, {c.tol.rank_tol, "rank_tol"}})
        detail::positive(v, name);
    for (const auto& [v, name] : {std::pair{c.tol.tol_crit, "tol_crit"}, {c.tol.dedup_radius, "dedup_radius"},
                                  {c.tol.capture_radius, "capture_radius"}})
        if (tol[name]) detail::positive(v, name);

    const auto& seeds = sub(root, "seeds");
    reject_unknown(seeds, {"lattice_per_axis", "max_winding"}, "[seeds]");
    c.lattice_per_axis = get_or<int>(seeds, "lattice_per_axis", c.lattice_per_axis);
    c.max_winding = get_or<int>(seeds, "max_winding", c.max_winding);

    const auto& mod = sub(root, "moduli");
    reject_unknown(mod, {"sweep_angles"}, "[moduli]");
    c.sweep_angles = get_or<int>(mod, "sweep_angles", c.sweep_angles);
    if (c.sweep_angles < 8) throw Error("config-invalid", "moduli.sweep_angles must be at least 8", ErrorKind::usage);

    const auto& ref = sub(root, "reference");
    reject_unknown(ref, {"betti"}, "[reference]");
    c.reference_betti = get_array<int>(ref, "betti");

    const auto& out = sub(root, "output");
    reject_unknown(out, {"dir"}, "[output]");
    c.out_dir = get_or<std::string>(out, "dir", c.out_dir);

    const auto& run = sub(root, "run");
    reject_unknown(run, {"seed", "threads"}, "[run]");
    c.rng_seed = get_or<uint64_t>(run, "seed", c.rng_seed);
    c.threads = get_or<int>(run, "threads", c.threads);

    const auto& fl = sub(root, "flow");
    reject_unknown(fl, {"start", "source", "direction", "angles"}, "[flow]");
    c.flow.kind = get_or<std::string>(fl, "start", c.flow.kind);
    c.flow.source = get_or<size_t>(fl, "source", c.flow.source);
    c.flow.direction = get_array<double>(fl, "direction").value_or(c.flow.direction);
    c.flow.angles = get_array<double>(fl, "angles").value_or(std::vector<double>{});
    if (c.flow.kind != "unstable" && c.flow.kind != "constant")
        throw Error("config-invalid", "flow.start must be 'unstable' or 'constant'", ErrorKind::usage);

    const auto& adm = sub(root, "admissible");
    reject_unknown(adm, {"U_radius", "probes", "probe_amplitude", "probe_flow_time", "bump_k", "bump_center",
                         "bump_fraction", "control_factor"},
                   "[admissible]");
    c.admissible.U_radius = get_or(adm, "U_radius", c.admissible.U_radius);
    c.admissible.probes = get_or<int>(adm, "probes", c.admissible.probes);
    c.admissible.probe_amplitude = get_or(adm, "probe_amplitude", c.admissible.probe_amplitude);
    c.admissible.probe_flow_time = get_or(adm, "probe_flow_time", c.admissible.probe_flow_time);
    c.admissible.bump_k = get_or<int>(adm, "bump_k", c.admissible.bump_k);
    c.admissible.bump_center = get_array<double>(adm, "bump_center").value_or(std::vector<double>{});
    c.admissible.bump_fraction = get_or(adm, "bump_fraction", c.admissible.bump_fraction);
    c.admissible.control_factor = get_or(adm, "control_factor", c.admissible.control_factor);
    detail::positive(c.admissible.probes, "admissible.probes");
    detail::positive(c.admissible.bump_fraction, "admissible.bump_fraction");

    const auto& chk = sub(root, "check");
    reject_unknown(chk, {"tol_energy", "tol_gradient", "gradient_pairs", "tol_asymmetry", "orientation_trials",
                         "sep_min_factor", "rank_probe_time"},
                   "[check]");
    c.check.tol_energy = get_or(chk, "tol_energy", c.check.tol_energy);
    c.check.tol_gradient = get_or(chk, "tol_gradient", c.check.tol_gradient);
    c.check.gradient_pairs = get_or<int>(chk, "gradient_pairs", c.check.gradient_pairs);
    c.check.tol_asymmetry = get_or(chk, "tol_asymmetry", c.check.tol_asymmetry);
    c.check.orientation_trials = get_or<int>(chk, "orientation_trials", c.check.orientation_trials);
    c.check.sep_min_factor = get_or(chk, "sep_min_factor", c.check.sep_min_factor);
    c.check.rank_probe_time = get_or(chk, "rank_probe_time", c.check.rank_probe_time);
    for (const auto& [v, name] : {std::pair{c.check.tol_energy, "tol_energy"}, {c.check.tol_gradient, "tol_gradient"},
                                  {c.check.tol_asymmetry, "tol_asymmetry"}, {c.check.rank_probe_time, "rank_probe_time"}})
        detail::positive(v, name);

    std::ostringstream os;
    os << toml::toml_formatter{root};
    c.canonical = os.str();
    c.hash = content_hash(c.canonical);
    return c;
}

/// Parses TOML text; syntax errors become "config-parse" usage errors with
/// the parser's line and column.
inline RunConfig parse_config(std::string_view text, std::string_view source = "config") {
    try {
        return parse_config(toml::parse(text, source));
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << e.description() << " at " << source << ":" << e.source().begin.line << ":" << e.source().begin.column;
        throw Error("config-parse", os.str(), ErrorKind::usage);
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("config-missing", "cannot open " + path, ErrorKind::usage);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

} // namespace loopflow

#pragma once

#include <filesystem>

#include <json.hpp>

#include "loopflow/admissibility.hpp"
#include "loopflow/complex.hpp"
#include "loopflow/config.hpp"

namespace loopflow {

using json = nlohmann::json;

/// A parsed configuration with the objects it describes.
struct Session {
    RunConfig cfg;
    Manifold m;
    Perturbation V;

    explicit Session(RunConfig c) : cfg(std::move(c)), m(cfg.make_manifold()), V(cfg.make_perturbation()) {}

    double iota() const { return m.injectivity_radius(); }

    EnumerateOptions enumerate_options() const {
        EnumerateOptions o;
        o.n_samples = cfg.n;
        o.lattice_per_axis = cfg.lattice_per_axis;
        o.max_winding = cfg.max_winding;
        o.component = cfg.component;
        o.dedup_radius = cfg.tol.dedup_radius;
        o.tol_reg = cfg.tol.tol_reg;
        o.newton.tol_crit = cfg.tol.tol_crit;
        o.newton.tol_nondeg = cfg.tol.tol_nondeg;
        return o;
    }

    FlowControls flow_controls() const {
        FlowControls f;
        f.h_s = cfg.h_s;
        f.s_max = cfg.s_max;
        f.tol_conv = cfg.tol.tol_conv;
        return f;
    }

    ModuliControls moduli_controls() const {
        ModuliControls c;
        c.flow = flow_controls();
        c.capture_radius = cfg.tol.capture_radius;
        c.sweep_angles = cfg.sweep_angles;
        return c;
    }

    double U_radius() const { return cfg.admissible.U_radius > 0 ? cfg.admissible.U_radius : 0.05 * iota(); }
};

/// Config identity and the tolerances in force; embedded in every artifact.
inline json artifact_header(const Session& s, const std::string& kind) {
    const auto& c = s.cfg;
    json tol = {{"tol_crit", NewtonOptions{c.tol.tol_crit}.tolerance(c.n)},
                {"tol_conv", c.tol.tol_conv},
                {"tol_nondeg", c.tol.tol_nondeg},
                {"tol_reg", c.tol.tol_reg},
                {"dedup_radius", c.tol.dedup_radius > 0 ? c.tol.dedup_radius : 1e-4 * s.iota()},
                {"capture_radius", s.moduli_controls().capture(s.m)},
                {"rank_tol", c.tol.rank_tol}};
    return {{"artifact", kind},      {"config_name", c.name}, {"config_hash", c.hash}, {"schema", c.schema},
            {"tolerances", tol},     {"level", c.level},      {"component", c.component ? json(*c.component) : json()},
            {"grid", {{"n", c.n}, {"h_s", c.h_s}, {"s_max", c.s_max}}}};
}

inline std::string csv_banner(const Session& s) {
    std::ostringstream os;
    os << std::setprecision(17) << "# config_hash=" << s.cfg.hash << " n=" << s.cfg.n << " h_s=" << s.cfg.h_s
       << " tol_conv=" << s.cfg.tol.tol_conv << "\n";
    return os.str();
}

inline void write_json(const std::filesystem::path& p, const json& j) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw Error("io-error", "cannot write " + p.string(), ErrorKind::usage);
    os << j.dump(2) << "\n";
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw Error("io-error", "cannot write " + p.string(), ErrorKind::usage);
    os << text;
}

// ---------------------------------------------------------------------------
// Stages

inline std::vector<CriticalPoint> crit_stage(const Session& s) {
    return enumerate_below(s.V, s.cfg.level, s.m, s.enumerate_options()).points;
}

inline json crit_json(const Session& s, const std::vector<CriticalPoint>& crit) {
    json j = artifact_header(s, "critical-points");
    j["points"] = json::array();
    for (size_t i = 0; i < crit.size(); ++i) {
        const auto& x = crit[i];
        const Vec& ev = x.eigenvalues();
        std::vector<double> low(ev.data(), ev.data() + std::min<Eigen::Index>(ev.size(), 8));
        j["points"].push_back({{"id", i},
                               {"action", x.action},
                               {"morse_index", x.morse_index},
                               {"nondeg_margin", x.nondeg_margin},
                               {"degenerate", x.degenerate},
                               {"residual_sup", x.residual_sup},
                               {"asymmetry_defect", x.asymmetry_defect},
                               {"winding", x.winding},
                               {"lowest_eigenvalues", low}});
    }
    return j;
}

/// Connecting orbits for every index-difference-one pair of generators. One
/// sweep of each unstable sphere serves all targets of that source.
inline std::vector<ConnectingOrbit> moduli_stage(const Session& s, const std::vector<CriticalPoint>& crit) {
    const ModuliControls ctl = s.moduli_controls();
    const Orientations one(crit.size(), 1);
    std::vector<ConnectingOrbit> out;
    for (size_t i = 0; i < crit.size(); ++i) {
        if (crit[i].degenerate || crit[i].morse_index == 0) continue;
        std::vector<size_t> targets;
        for (size_t j = 0; j < crit.size(); ++j)
            if (!crit[j].degenerate && crit[j].morse_index == crit[i].morse_index - 1) targets.push_back(j);
        if (targets.empty()) continue;
        const UnstableChart chart = build_chart(crit[i], s.V);
        const auto sweep = sweep_directions(chart, crit, s.V, ctl);
        for (size_t j : targets) {
            auto orbits = enumerate_connecting(crit, i, j, chart, s.V, ctl, &sweep);
            parallel_for(orbits.size(), [&](size_t k) { orbits[k].sign = compute_sign(orbits[k], crit, s.V, one, ctl.flow); });
            for (auto& o : orbits) out.push_back(std::move(o));
        }
    }
    return out;
}

inline std::vector<OrbitSign> signs_of(const std::vector<ConnectingOrbit>& orbits) {
    std::vector<OrbitSign> out;
    for (const auto& o : orbits) out.push_back({o.source, o.target, o.sign});
    return out;
}

inline json orbits_json(const Session& s, const std::vector<ConnectingOrbit>& orbits) {
    json j = artifact_header(s, "connecting-orbits");
    j["orbits"] = json::array();
    for (size_t i = 0; i < orbits.size(); ++i) {
        const auto& o = orbits[i];
        j["orbits"].push_back({{"id", i},
                               {"source", o.source},
                               {"target", o.target},
                               {"sign", o.sign},
                               {"angle", o.angle},
                               {"direction", std::vector<double>(o.shoot_direction.data(),
                                                                 o.shoot_direction.data() + o.shoot_direction.size())},
                               {"energy", o.energy},
                               {"action_drop", o.action_drop},
                               {"offset", o.offset},
                               {"normalized_at", o.normalized_at},
                               {"slices", o.trajectory.size()},
                               {"s_range", {o.trajectory.monitors.front().s, o.trajectory.monitors.back().s}},
                               {"status", o.trajectory.status}});
    }
    return j;
}

inline void write_orbit_files(const Session& s, const std::filesystem::path& dir,
                              const std::vector<ConnectingOrbit>& orbits) {
    for (size_t i = 0; i < orbits.size(); ++i) {
        std::ostringstream mon, loop;
        mon << csv_banner(s);
        write_monitors_csv(mon, orbits[i].trajectory);
        write_text(dir / ("orbit_" + std::to_string(i) + "_monitors.csv"), mon.str());
        loop << csv_banner(s);
        write_loop_csv(loop, orbits[i].time_zero_loop());
        write_text(dir / ("orbit_" + std::to_string(i) + "_time0.csv"), loop.str());
    }
}

struct HomologyStage {
    ChainComplex complex;
    HomologyResult homology;
    ReferenceReport reference;
};

inline HomologyStage homology_stage(const Session& s, const std::vector<CriticalPoint>& crit,
                                    const std::vector<ConnectingOrbit>& orbits) {
    HomologyStage h;
    h.complex = assemble(crit, signs_of(orbits), Orientations(crit.size(), 1), s.cfg.level,
                         s.cfg.component.value_or(std::vector<int>{}));
    const DSquaredReport d2 = check_d_squared(h.complex);
    if (!d2.ok) {
        const auto& d = d2.defects.front();
        throw Error("not-a-complex", "boundary squared is nonzero in degree " + std::to_string(d.degree) +
                                         " at (" + std::to_string(d.row) + ", " + std::to_string(d.col) + ")",
                    ErrorKind::invariant);
    }
    h.homology = homology(h.complex);
    h.reference = compare_reference(h.homology, s.cfg.reference_betti);
    return h;
}

inline json complex_json(const Session& s, const HomologyStage& h) {
    json j = artifact_header(s, "chain-complex");
    j["generators"] = json::array();
    for (const auto& deg : h.complex.generators)
        for (const auto& g : deg) j["generators"].push_back({{"id", g.id}, {"index", g.index}, {"action", g.action}});
    j["boundary"] = json::array();
    for (size_t k = 1; k < h.complex.boundary.size(); ++k) {
        const auto& d = h.complex.boundary[k];
        const auto& src = h.complex.generators[k];
        const auto& dst = h.complex.generators[k - 1];
        for (size_t r = 0; r < d.rows; ++r)
            for (size_t c = 0; c < d.cols; ++c)
                if (d(r, c) != 0)
                    j["boundary"].push_back({{"degree", k}, {"source", src[c].id}, {"target", dst[r].id}, {"value", d(r, c)}});
    }
    j["betti"] = h.homology.betti;
    json tors = json::array();
    for (const auto& t : h.homology.torsion) {
        json row = json::array();
        for (const auto& f : t) row.push_back(f.str());
        tors.push_back(row);
    }
    j["torsion"] = tors;
    j["reference_match"] = {{"status", h.reference.status}, {"mismatched_degrees", h.reference.mismatched_degrees}};
    if (s.cfg.reference_betti) j["reference_match"]["expected"] = *s.cfg.reference_betti;
    return j;
}

// ---------------------------------------------------------------------------
// Single trajectory

inline DiscreteLoop flow_start(const Session& s, const std::vector<CriticalPoint>& crit) {
    const auto& f = s.cfg.flow;
    if (f.kind == "constant") {
        if (static_cast<int>(f.angles.size()) != s.m.circle_factors())
            throw Error("config-invalid", "flow.angles needs one entry per circle factor", ErrorKind::usage);
        Vec th(static_cast<Eigen::Index>(f.angles.size()));
        for (size_t i = 0; i < f.angles.size(); ++i) th(static_cast<Eigen::Index>(i)) = 2 * std::numbers::pi * f.angles[i];
        return DiscreteLoop::constant(s.m, s.m.from_angles(th), s.cfg.n);
    }
    if (f.source >= crit.size()) throw Error("config-invalid", "flow.source is not a critical point", ErrorKind::usage);
    const UnstableChart chart = build_chart(crit[f.source], s.V);
    if (static_cast<int>(f.direction.size()) != chart.dim())
        throw Error("config-invalid", "flow.direction must have one entry per unstable direction", ErrorKind::usage);
    Vec c = Eigen::Map<const Vec>(f.direction.data(), chart.dim());
    if (!(c.norm() > 0)) throw Error("config-invalid", "flow.direction must be nonzero", ErrorKind::usage);
    return chart.seed(c.normalized());
}

// ---------------------------------------------------------------------------
// Admissibility

struct AdmissibleStage {
    AdmissibleRadius radius;
    SublevelReport inclusions, control;
    double bump_norm = 0.0;
    bool bump_outside_U = false;
    bool critical_set_preserved = false;
    std::vector<CriticalPoint> perturbed;
};

inline AdmissibleStage admissible_stage(const Session& s, const std::vector<CriticalPoint>& crit) {
    const auto& A = s.cfg.admissible;
    AdmissibleStage st;
    const CriticalLevels L = critical_levels(crit, s.cfg.level, s.cfg.tol.tol_reg);
    ProbeOptions po;
    po.count = A.probes;
    po.n_samples = s.cfg.n;
    po.amplitude = A.probe_amplitude;
    po.flow_time = A.probe_flow_time;
    po.seed = s.cfg.rng_seed;
    po.component = s.cfg.component.value_or(std::vector<int>{});
    const auto probes = probe_loops(s.V, s.m, crit, s.U_radius(), L.c_above, po);
    st.radius = admissible_radius(s.V, s.cfg.level, crit, s.U_radius(), probes, s.cfg.tol.tol_reg);

    // Bump centred at a constant loop, in a fixed direction.
    Vec center;
    if (s.m.circle_factors() > 0) {
        std::vector<double> turns = A.bump_center;
        if (turns.empty()) turns.assign(static_cast<size_t>(s.m.circle_factors()), 0.25);
        if (static_cast<int>(turns.size()) != s.m.circle_factors())
            throw Error("config-invalid", "admissible.bump_center needs one entry per circle factor", ErrorKind::usage);
        Vec th(static_cast<Eigen::Index>(turns.size()));
        for (size_t i = 0; i < turns.size(); ++i) th(static_cast<Eigen::Index>(i)) = 2 * std::numbers::pi * turns[i];
        center = s.m.from_angles(th);
    } else {
        if (static_cast<int>(A.bump_center.size()) != s.m.ambient_dim())
            throw Error("config-invalid", "admissible.bump_center needs ambient coordinates on the sphere", ErrorKind::usage);
        center = Eigen::Map<const Vec>(A.bump_center.data(), s.m.ambient_dim());
    }
    const DiscreteLoop c = DiscreteLoop::constant(s.m, center, s.cfg.n);
    std::mt19937_64 rng(s.cfg.rng_seed);
    const Perturbation bump = Perturbation::bump(c, random_field(c, rng), A.bump_k);
    const double unit = make_combo({{1.0, bump}}, probes).norm();
    const Perturbation v = make_combo({{A.bump_fraction * st.radius.r / unit, bump}}, probes);
    st.bump_norm = v.norm();
    st.bump_outside_U = true;
    for (const auto& x : crit) st.bump_outside_U = st.bump_outside_U && v.supported_outside(x.loop, s.U_radius());
    st.inclusions = check_sublevel_inclusions(s.V, v, st.radius.levels, probes);

    st.perturbed = enumerate_below(Perturbation::sum(s.V, v), s.cfg.level, s.m, s.enumerate_options()).points;
    st.critical_set_preserved = same_critical_set(crit, st.perturbed, 1e-6);

    // Negative control: a constant generator has (V0) constant |value|.
    const Perturbation ctrl = make_combo({{-A.control_factor * st.radius.delta, Perturbation::constant(1.0)}}, probes);
    st.control = check_sublevel_inclusions(s.V, ctrl, st.radius.levels, probes);
    return st;
}

inline json sublevel_json(const SublevelReport& r) {
    json j = {{"checked", r.checked},          {"v_norm", r.v_norm},       {"max_abs_v", r.max_abs_v},
              {"norm_below_delta", r.norm_below_delta}, {"ok", r.ok()}, {"inclusions", json::array()}};
    for (size_t k = 0; k < 6; ++k)
        j["inclusions"].push_back(
            {{"statement", inclusion_labels()[k]}, {"premises", r.premises[k]}, {"failures", r.failures[k]}});
    j["counterexamples"] = json::array();
    for (size_t i = 0; i < std::min<size_t>(r.counterexamples.size(), 10); ++i) {
        const auto& c = r.counterexamples[i];
        j["counterexamples"].push_back({{"probe", c.probe},
                                        {"statement", inclusion_labels()[static_cast<size_t>(c.inclusion)]},
                                        {"S_V", c.s_V},
                                        {"S_V+v", c.s_Vv}});
    }
    return j;
}

inline json admissible_json(const Session& s, const AdmissibleStage& st) {
    json j = artifact_header(s, "admissibility");
    const auto& R = st.radius;
    j["levels"] = {{"c_below", R.levels.c_below}, {"c_above", R.levels.c_above},
                   {"a_minus", R.levels.a_minus()}, {"a_plus", R.levels.a_plus()},
                   {"below_fallback", R.levels.below_fallback}, {"above_fallback", R.levels.above_fallback}};
    j["delta"] = R.delta;
    j["kappa"] = R.kappa;
    j["kappa_is_upper_estimate"] = R.kappa_is_upper_estimate;
    j["r"] = R.r;
    j["U_radius"] = s.U_radius();
    j["probes"] = {{"used", R.probes_used}, {"in_U", R.probes_in_U}, {"above", R.probes_above}, {"seed", s.cfg.rng_seed}};
    j["bump"] = {{"k", s.cfg.admissible.bump_k},      {"norm", st.bump_norm},
                 {"outside_U", st.bump_outside_U},    {"critical_set_preserved", st.critical_set_preserved},
                 {"inclusions", sublevel_json(st.inclusions)}};
    j["negative_control"] = sublevel_json(st.control);
    j["negative_control"]["detected"] = !st.control.ok();
    return j;
}

// ---------------------------------------------------------------------------
// Invariant suite

struct CheckResult {
    std::string name;
    bool passed = true;
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

/// Worst relative mismatch between <grad S, xi> and central differences of
/// the action over random loops and fields.
inline double gradient_consistency(const Perturbation& V, const Manifold& m, int n, int pairs, uint64_t seed,
                                   const std::vector<int>& component = {}) {
    std::mt19937_64 rng(seed);
    std::vector<DiscreteLoop> xs;
    std::vector<LoopField> fs;
    for (int i = 0; i < pairs; ++i) {
        xs.push_back(random_loop(m, n, rng, 0.3, component));
        fs.push_back(random_field(xs.back(), rng));
    }
    std::vector<double> err(static_cast<size_t>(pairs));
    parallel_for(err.size(), [&](size_t i) {
        const double h = 1e-5;
        const LoopField& xi = fs[i];
        const double fd = (action(exp_field(xs[i], h * xi), V) - action(exp_field(xs[i], -h * xi), V)) / (2 * h);
        const double an = -inner(heat_residual(xs[i], V), xi);
        err[i] = std::abs(fd - an) / std::max(std::abs(an), 1e-8);
    });
    return *std::max_element(err.begin(), err.end());
}

struct CheckSuite {
    std::vector<CheckResult> checks;
    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
};

inline CheckSuite check_stage(const Session& s, const std::vector<CriticalPoint>& crit,
                              const std::vector<ConnectingOrbit>& orbits) {
    const auto& C = s.cfg.check;
    CheckSuite suite;
    auto add = [&](std::string name, bool ok, double value, double tol, std::string detail = {}) {
        suite.checks.push_back({std::move(name), ok, value, tol, std::move(detail)});
    };

    const double tol_crit = NewtonOptions{s.cfg.tol.tol_crit}.tolerance(s.cfg.n);
    double worst_res = 0.0, worst_asym = 0.0, min_margin = std::numeric_limits<double>::infinity();
    for (const auto& x : crit) {
        worst_res = std::max(worst_res, x.residual_sup);
        worst_asym = std::max(worst_asym, x.asymmetry_defect);
        min_margin = std::min(min_margin, x.nondeg_margin);
    }
    add("critical-residual", worst_res <= tol_crit, worst_res, tol_crit);
    add("nondegeneracy", min_margin > s.cfg.tol.tol_nondeg, min_margin, s.cfg.tol.tol_nondeg);
    add("hessian-symmetry", worst_asym <= C.tol_asymmetry, worst_asym, C.tol_asymmetry);

    const double g = gradient_consistency(s.V, s.m, s.cfg.n, C.gradient_pairs, s.cfg.rng_seed,
                                          s.cfg.component.value_or(std::vector<int>{}));
    add("gradient-consistency", g <= C.tol_gradient, g, C.tol_gradient);

    // Per-orbit identities.
    std::vector<double> energy_err(orbits.size());
    std::vector<std::string> flow_fail(orbits.size());
    parallel_for(orbits.size(), [&](size_t i) {
        const auto& o = orbits[i];
        energy_err[i] = std::abs(o.energy - o.action_drop) / std::max(1.0, std::abs(o.action_drop));
        try {
            const SpectralFlowResult sf = spectral_flow(o.trajectory, s.V);
            const int expect = crit[o.source].morse_index - crit[o.target].morse_index;
            if (sf.flow != expect || sf.crossings.size() != 1)
                flow_fail[i] = "orbit " + std::to_string(i) + ": flow " + std::to_string(sf.flow) + " with " +
                               std::to_string(sf.crossings.size()) + " crossings";
        } catch (const Error& e) {
            flow_fail[i] = "orbit " + std::to_string(i) + ": " + e.code();
        }
    });
    double worst_energy = 0.0;
    for (double e : energy_err) worst_energy = std::max(worst_energy, e);
    add("energy-identity", worst_energy <= C.tol_energy, worst_energy, C.tol_energy);
    std::string sf_detail;
    for (const auto& f : flow_fail)
        if (!f.empty()) sf_detail += (sf_detail.empty() ? "" : "; ") + f;
    add("spectral-flow", sf_detail.empty(), 0.0, 0.0, sf_detail);

    // Sign antisymmetry under single-endpoint flips.
    bool anti = true;
    for (const auto& o : orbits) {
        Orientations nu(crit.size(), 1);
        nu[o.source] = -1;
        const int a = compute_sign(o, crit, s.V, nu, s.flow_controls());
        nu[o.source] = 1;
        nu[o.target] = -1;
        const int b = compute_sign(o, crit, s.V, nu, s.flow_controls());
        anti = anti && a == -o.sign && b == -o.sign;
    }
    add("sign-antisymmetry", anti, 0.0, 0.0);

    // Unstable manifold dimension.
    std::string rank_detail;
    for (size_t i = 0; i < crit.size(); ++i) {
        if (crit[i].degenerate || crit[i].morse_index == 0) continue;
        const RankReport r = unstable_rank(crit[i], s.V, C.rank_probe_time, s.flow_controls(), s.cfg.tol.rank_tol);
        if (r.rank != crit[i].morse_index)
            rank_detail += "point " + std::to_string(i) + ": rank " + std::to_string(r.rank) + "; ";
    }
    add("unstable-rank", rank_detail.empty(), 0.0, s.cfg.tol.rank_tol, rank_detail);

    // ev_0 separation within each moduli space.
    const double sep = C.sep_min_factor * s.iota();
    double min_sep = std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < orbits.size(); ++a)
        for (size_t b = a + 1; b < orbits.size(); ++b)
            if (orbits[a].source == orbits[b].source && orbits[a].target == orbits[b].target)
                min_sep = std::min(min_sep, loop_distance(orbits[a].time_zero_loop(), orbits[b].time_zero_loop(),
                                                          LoopNorm::C0));
    add("ev0-separation", !(min_sep <= sep), std::isfinite(min_sep) ? min_sep : 0.0, sep,
        std::isfinite(min_sep) ? "" : "no moduli space with two orbits");

    // Chain complex, homology and orientation independence.
    try {
        const HomologyStage h = homology_stage(s, crit, orbits);
        add("d-squared", true, 0.0, 0.0);
        std::mt19937_64 rng(s.cfg.rng_seed);
        std::bernoulli_distribution coin;
        bool same = true;
        for (int t = 0; t < C.orientation_trials; ++t) {
            Orientations nu(crit.size());
            for (auto& v : nu) v = coin(rng) ? 1 : -1;
            const HomologyResult hr = homology(assemble(crit, signs_of(orbits), nu, s.cfg.level));
            same = same && hr.betti == h.homology.betti && hr.torsion == h.homology.torsion;
        }
        add("orientation-invariance", same, 0.0, 0.0);
        add("reference-homology", h.reference.status != "mismatch", 0.0, 0.0, h.reference.status);
    } catch (const Error& e) {
        if (e.code() != "not-a-complex") throw;
        add("d-squared", false, 0.0, 0.0, e.what());
    }
    return suite;
}

inline json check_json(const Session& s, const CheckSuite& suite) {
    json j = artifact_header(s, "check-report");
    j["passed"] = suite.passed();
    j["checks"] = json::array();
    for (const auto& c : suite.checks)
        j["checks"].push_back({{"name", c.name},
                               {"passed", c.passed},
                               {"value", c.value},
                               {"tolerance", c.tolerance},
                               {"detail", c.detail}});
    return j;
}

} // namespace loopflow

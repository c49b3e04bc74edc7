// loopflow: command-line driver for the heat-flow Morse complex pipeline.

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "loopflow/pipeline.hpp"

namespace fs = std::filesystem;
using namespace loopflow;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
    case ErrorKind::invariant: return 1;
    case ErrorKind::usage: return 2;
    case ErrorKind::numerical: return 3;
    }
    return 3;
}

const char* kind_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::invariant: return "invariant";
    case ErrorKind::usage: return "usage";
    case ErrorKind::numerical: return "numerical";
    }
    return "numerical";
}

class Log {
public:
    explicit Log(bool on) : on_(on), t0_(std::chrono::steady_clock::now()) {}
    template <class... A>
    void operator()(const A&... a) const {
        if (!on_) return;
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        std::cerr << "[" << std::fixed << std::setprecision(2) << t << "s] ";
        (std::cerr << ... << a) << "\n";
    }

private:
    bool on_;
    std::chrono::steady_clock::time_point t0_;
};

int run_crit(const Session& s, const fs::path& out, const Log& log) {
    const auto crit = crit_stage(s);
    log("found ", crit.size(), " critical points below a = ", s.cfg.level);
    write_json(out / "crit.json", crit_json(s, crit));
    for (size_t i = 0; i < crit.size(); ++i) {
        std::ostringstream os;
        os << csv_banner(s);
        write_loop_csv(os, crit[i].loop);
        write_text(out / ("crit_" + std::to_string(i) + ".csv"), os.str());
    }
    return 0;
}

int run_flow(const Session& s, const fs::path& out, const Log& log) {
    std::vector<CriticalPoint> crit;
    if (s.cfg.flow.kind == "unstable") crit = crit_stage(s);
    const DiscreteLoop u0 = flow_start(s, crit);
    const CylinderTrajectory t = integrate(u0, s.V, s.flow_controls());
    log("flow ", t.status, " after ", t.size() - 1, " steps");
    std::ostringstream mon, last;
    mon << csv_banner(s);
    write_monitors_csv(mon, t);
    write_text(out / "flow_monitors.csv", mon.str());
    last << csv_banner(s);
    write_loop_csv(last, t.back());
    write_text(out / "flow_final.csv", last.str());
    json j = artifact_header(s, "trajectory");
    j["status"] = t.status;
    j["steps"] = t.size() - 1;
    j["s_final"] = t.monitors.back().s;
    j["action_start"] = t.monitors.front().action;
    j["action_end"] = t.monitors.back().action;
    j["energy"] = energy(t);
    if (!crit.empty()) {
        const auto lim = detect_limit(t, crit, s.moduli_controls().capture(s.m));
        j["limit"] = lim ? json(*lim) : json();
    }
    write_json(out / "flow.json", j);
    return 0;
}

int run_moduli(const Session& s, const fs::path& out, const Log& log) {
    const auto crit = crit_stage(s);
    log("found ", crit.size(), " critical points");
    const auto orbits = moduli_stage(s, crit);
    log("found ", orbits.size(), " connecting orbits");
    write_json(out / "crit.json", crit_json(s, crit));
    write_json(out / "orbits.json", orbits_json(s, orbits));
    write_orbit_files(s, out, orbits);
    return 0;
}

int run_homology(const Session& s, const fs::path& out, const Log& log) {
    const auto crit = crit_stage(s);
    log("found ", crit.size(), " critical points");
    const auto orbits = moduli_stage(s, crit);
    log("found ", orbits.size(), " connecting orbits");
    write_json(out / "crit.json", crit_json(s, crit));
    write_json(out / "orbits.json", orbits_json(s, orbits));
    const HomologyStage h = homology_stage(s, crit, orbits);
    write_json(out / "complex.json", complex_json(s, h));
    std::cout << "betti";
    for (int b : h.homology.betti) std::cout << " " << b;
    std::cout << "  reference: " << h.reference.status << "\n";
    if (h.reference.status == "mismatch") {
        std::cerr << "homology differs from the reference in degree";
        for (int d : h.reference.mismatched_degrees) std::cerr << " " << d;
        std::cerr << "\n";
        return 1;
    }
    return 0;
}

int run_check(const Session& s, const fs::path& out, const Log& log) {
    const auto crit = crit_stage(s);
    log("found ", crit.size(), " critical points");
    const auto orbits = moduli_stage(s, crit);
    log("found ", orbits.size(), " connecting orbits");
    const CheckSuite suite = check_stage(s, crit, orbits);
    write_json(out / "check_report.json", check_json(s, suite));
    for (const auto& c : suite.checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name;
        if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
        std::cout << "\n";
        if (!c.passed) std::cerr << "invariant failed: " << c.name << "\n";
    }
    return suite.passed() ? 0 : 1;
}

int run_admissible(const Session& s, const fs::path& out, const Log& log) {
    const auto crit = crit_stage(s);
    log("found ", crit.size(), " critical points");
    const AdmissibleStage st = admissible_stage(s, crit);
    write_json(out / "admissible.json", admissible_json(s, st));
    const auto& R = st.radius;
    std::cout << std::setprecision(6) << "delta^a " << R.delta << "  kappa^a " << R.kappa << "  r^a " << R.r << "\n";
    bool ok = true;
    auto fail = [&](const char* what) {
        std::cerr << "invariant failed: " << what << "\n";
        ok = false;
    };
    if (!st.bump_outside_U) fail("bump-outside-U");
    if (!st.inclusions.ok()) fail("sublevel-inclusions");
    if (!st.critical_set_preserved) fail("critical-set-preserved");
    if (st.control.ok()) fail("negative-control-detected");
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heat-flow Morse complex on loop spaces"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, out_override;
    int threads = -1;
    bool verbose = false;
    app.add_option("--config", config_path, "TOML run configuration")->required();
    app.add_option("--out", out_override, "output directory (overrides output.dir)");
    app.add_option("--threads", threads, "worker threads; LOOPFLOW_THREADS is the fallback")->check(CLI::NonNegativeNumber);
    app.add_flag("--verbose", verbose, "stage progress on stderr");

    using Runner = int (*)(const Session&, const fs::path&, const Log&);
    const std::vector<std::tuple<std::string, std::string, Runner>> commands = {
        {"crit", "enumerate critical points below the level", run_crit},
        {"flow", "integrate one heat-flow trajectory", run_flow},
        {"moduli", "enumerate connecting orbits of index difference one", run_moduli},
        {"homology", "full pipeline: complex and homology", run_homology},
        {"check", "run the invariant suite", run_check},
        {"admissible", "admissibility radius and sublevel inclusions", run_admissible},
    };
    for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    fs::path out;
    try {
        const RunConfig cfg = load_config(config_path);
        out = out_override.empty() ? fs::path(cfg.out_dir) : fs::path(out_override);
        if (threads < 0) {
            if (const char* env = std::getenv("LOOPFLOW_THREADS")) {
                try {
                    threads = std::stoi(env);
                } catch (const std::exception&) {
                    throw Error("usage", "LOOPFLOW_THREADS must be an integer", ErrorKind::usage);
                }
            } else {
                threads = cfg.threads;
            }
        }
        set_thread_count(threads);
        const Session s(cfg);
        const Log log(verbose);
        log("config ", cfg.name, " hash ", cfg.hash, " threads ", thread_count());
        for (const auto& [name, help, fn] : commands)
            if (app.got_subcommand(name)) return fn(s, out, log);
        return 2;
    } catch (const Error& e) {
        const json rec = {{"error", {{"code", e.code()}, {"kind", kind_name(e.kind())}, {"message", e.what()}}}};
        std::cerr << rec.dump() << "\n";
        if (!out.empty()) {
            try {
                write_json(out / "error.json", rec);
            } catch (const Error&) {
            }
        }
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"code", "internal"}, {"kind", "numerical"}, {"message", e.what()}}}}.dump() << "\n";
        return 3;
    }
}

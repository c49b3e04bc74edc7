#pragma once

#include <array>

#include "loopflow/heatflow.hpp"
#include "loopflow/sampling.hpp"

namespace loopflow {

/// The five reals c_k < a_- < a < a_+ < c_{k+1} around a regular level a.
struct CriticalLevels {
    double a = 0.0;
    double c_below = 0.0, c_above = 0.0;
    double delta = 0.0;
    bool below_fallback = false, above_fallback = false;

    double a_minus() const { return a - delta; }
    double a_plus() const { return a + delta; }
};

/// c_k and c_{k+1} are the nearest critical values below and above a. A
/// missing one is placed at the same distance on the other side of a.
inline CriticalLevels critical_levels(const std::vector<CriticalPoint>& crit, double a, double tol_reg = 1e-6) {
    CriticalLevels L;
    L.a = a;
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (const auto& x : crit) {
        if (std::abs(x.action - a) < tol_reg)
            throw Error("a-is-critical", "level a is within tol_reg of a critical value", ErrorKind::usage);
        if (x.action < a) lo = std::max(lo, x.action);
        else hi = std::min(hi, x.action);
    }
    if (!std::isfinite(lo) && !std::isfinite(hi))
        throw Error("no-critical-values", "the level gap needs at least one critical value", ErrorKind::usage);
    L.below_fallback = !std::isfinite(lo);
    L.above_fallback = !std::isfinite(hi);
    L.c_below = L.below_fallback ? a - (hi - a) : lo;
    L.c_above = L.above_fallback ? a + (a - lo) : hi;
    L.delta = 0.5 * std::min(a - L.c_below, L.c_above - a);
    return L;
}

/// True when y lies in U, the union of closed L^2 balls of radius U_radius
/// around the critical points.
inline bool in_neighbourhood(const DiscreteLoop& y, const std::vector<CriticalPoint>& crit, double U_radius) {
    for (const auto& x : crit)
        if (loop_distance(y, x.loop, LoopNorm::L2) <= U_radius) return true;
    return false;
}

/// True when a and b correspond one-to-one: each point of a has exactly one
/// partner in b of the same index within tol in action and in C^0. Points of
/// equal action may be listed in either order, so this matches by distance.
inline bool same_critical_set(const std::vector<CriticalPoint>& a, const std::vector<CriticalPoint>& b, double tol) {
    if (a.size() != b.size()) return false;
    std::vector<char> used(b.size(), 0);
    for (const auto& x : a) {
        std::optional<size_t> hit;
        for (size_t j = 0; j < b.size(); ++j) {
            if (b[j].morse_index != x.morse_index || std::abs(b[j].action - x.action) > tol) continue;
            if (loop_distance(b[j].loop, x.loop, LoopNorm::C0) > tol) continue;
            if (hit) return false; // two partners within tol
            hit = j;
        }
        if (!hit || used[*hit]) return false;
        used[*hit] = 1;
    }
    return true;
}

struct AdmissibleRadius {
    CriticalLevels levels;
    double delta = 0.0, kappa = 0.0, r = 0.0;
    size_t probes_used = 0, probes_in_U = 0, probes_above = 0;
    size_t kappa_probe = 0;  // index of the minimizing probe
    bool kappa_is_upper_estimate = true; // a finite sample only bounds the infimum from above
};

/// delta^a from the level gap, kappa^a as the least L^2 gradient norm over
/// probes in {S_V < c_{k+1}} outside U, and r^a = min(delta^a, kappa^a) / 2.
inline AdmissibleRadius admissible_radius(const Perturbation& V, double a, const std::vector<CriticalPoint>& crit,
                                          double U_radius, const std::vector<DiscreteLoop>& probes,
                                          double tol_reg = 1e-6) {
    AdmissibleRadius R;
    R.levels = critical_levels(crit, a, tol_reg);
    R.delta = R.levels.delta;
    std::vector<double> g(probes.size(), -1.0);
    std::vector<char> in_u(probes.size(), 0), above(probes.size(), 0);
    parallel_for(probes.size(), [&](size_t i) {
        if (action(probes[i], V) >= R.levels.c_above) above[i] = 1;
        else if (in_neighbourhood(probes[i], crit, U_radius)) in_u[i] = 1;
        else g[i] = l2_norm(heat_residual(probes[i], V));
    });
    R.kappa = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < probes.size(); ++i) {
        R.probes_in_U += in_u[i];
        R.probes_above += above[i];
        if (g[i] < 0) continue;
        ++R.probes_used;
        if (g[i] < R.kappa) {
            R.kappa = g[i];
            R.kappa_probe = i;
        }
    }
    if (R.probes_used == 0)
        throw Error("no-probes", "no probe loop lies in {S_V < c_{k+1}} outside U", ErrorKind::usage);
    R.r = 0.5 * std::min(R.delta, R.kappa);
    return R;
}

struct ProbeOptions {
    int count = 512;
    int n_samples = 64;
    double amplitude = 0.3;
    double flow_time = 0.02;
    uint64_t seed = 1;
    std::vector<int> component;  // winding per circle factor; empty means contractible
    int max_batches = 8;
};

/// Probe loops for kappa^a: random smooth loops flowed for a short time,
/// keeping those below c_above and outside U. Deterministic in the seed.
inline std::vector<DiscreteLoop> probe_loops(const Perturbation& V, const Manifold& m,
                                             const std::vector<CriticalPoint>& crit, double U_radius, double c_above,
                                             const ProbeOptions& opt = {}) {
    std::mt19937_64 rng(opt.seed);
    FlowControls fc;
    fc.s_max = opt.flow_time;
    fc.tol_conv = 0.0;
    fc.h_s = std::min(fc.h_s, max_step(opt.n_samples, fc.h_max_factor));
    std::vector<DiscreteLoop> out;
    for (int batch = 0; batch < opt.max_batches && static_cast<int>(out.size()) < opt.count; ++batch) {
        std::vector<DiscreteLoop> seeds;
        for (int i = 0; i < opt.count; ++i)
            seeds.push_back(random_loop(m, opt.n_samples, rng, opt.amplitude, opt.component));
        std::vector<std::optional<DiscreteLoop>> flowed(seeds.size());
        parallel_for(seeds.size(), [&](size_t i) {
            try {
                DiscreteLoop y = integrate(seeds[i], V, fc).loops.back();
                if (action(y, V) < c_above && !in_neighbourhood(y, crit, U_radius)) flowed[i] = std::move(y);
            } catch (const Error&) {
            }
        });
        for (auto& y : flowed)
            if (y && static_cast<int>(out.size()) < opt.count) out.push_back(std::move(*y));
    }
    if (static_cast<int>(out.size()) < opt.count)
        throw Error("insufficient-probes", "could not draw enough probe loops below c_above outside U");
    return out;
}

/// The six implications behind the sublevel inclusions, stated pointwise for
/// a loop with S = S_V and T = S_{V+v} = S - v.
inline const std::array<std::string, 6>& inclusion_labels() {
    static const std::array<std::string, 6> labels = {
        "S_V <= c_k => S_V+v <= a-", "S_V+v <= a- => S_V <= a",  "S_V <= a => S_V+v <= a+",
        "S_V+v <= a+ => S_V < c_k+1", "S_V <= a- => S_V+v <= a", "S_V+v <= a => S_V <= a+"};
    return labels;
}

struct InclusionFailure {
    size_t probe = 0;
    int inclusion = 0;
    double s_V = 0.0, s_Vv = 0.0;
};

struct SublevelReport {
    size_t checked = 0;
    std::array<size_t, 6> premises{}, failures{};
    std::vector<InclusionFailure> counterexamples;
    double v_norm = 0.0;
    double max_abs_v = 0.0;
    bool norm_below_delta = false;

    bool ok() const { return counterexamples.empty(); }
};

/// Tests every inclusion on every sample loop. Failures are reported, not
/// thrown; a norm at or above delta^a is recorded rather than rejected so
/// that negative controls can be run.
inline SublevelReport check_sublevel_inclusions(const Perturbation& V, const Perturbation& v,
                                                const CriticalLevels& L, const std::vector<DiscreteLoop>& sample) {
    SublevelReport r;
    r.checked = sample.size();
    r.v_norm = v.norm();
    r.norm_below_delta = r.v_norm < L.delta;
    std::vector<double> S(sample.size()), vv(sample.size());
    parallel_for(sample.size(), [&](size_t i) {
        S[i] = action(sample[i], V);
        vv[i] = v.eval(sample[i]);
    });
    const double am = L.a_minus(), ap = L.a_plus();
    for (size_t i = 0; i < sample.size(); ++i) {
        const double s = S[i], t = s - vv[i];
        r.max_abs_v = std::max(r.max_abs_v, std::abs(vv[i]));
        const std::array<std::pair<bool, bool>, 6> imp = {{{s <= L.c_below, t <= am},
                                                           {t <= am, s <= L.a},
                                                           {s <= L.a, t <= ap},
                                                           {t <= ap, s < L.c_above},
                                                           {s <= am, t <= L.a},
                                                           {t <= L.a, s <= ap}}};
        for (int k = 0; k < 6; ++k) {
            if (!imp[static_cast<size_t>(k)].first) continue;
            ++r.premises[static_cast<size_t>(k)];
            if (!imp[static_cast<size_t>(k)].second) {
                ++r.failures[static_cast<size_t>(k)];
                r.counterexamples.push_back({i, k, s, t});
            }
        }
    }
    return r;
}

} // namespace loopflow

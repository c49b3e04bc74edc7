#pragma once

#include "loopflow/linearized.hpp"

namespace loopflow {

/// Seed map c -> exp_x(eps_seed sum c_k v_k) on the unit sphere of E^-(x).
struct UnstableChart {
    CriticalPoint base;
    std::vector<LoopField> directions; // L^2-orthonormal
    double eps_seed = 0.0;

    int dim() const { return static_cast<int>(directions.size()); }

    DiscreteLoop seed(const Vec& c) const {
        LoopField xi = LoopField::zero(base.loop);
        for (int k = 0; k < dim(); ++k) xi.vectors += (eps_seed * c(k)) * directions[static_cast<size_t>(k)].vectors;
        return exp_field(base.loop, xi);
    }
};

/// Orthonormal basis of E^-(x), the first `morse_index` eigenfields.
inline std::vector<LoopField> unstable_basis(const CriticalPoint& x) {
    std::vector<LoopField> out;
    for (int k = 0; k < x.morse_index; ++k) {
        LoopField v = x.eigenfield(k);
        v.vectors /= l2_norm(v);
        out.push_back(std::move(v));
    }
    return out;
}

/// Chart with eps_seed halved until every probe seed (the +-axis directions,
/// plus diagonals in dimension >= 2) lies strictly below S(x) and above
/// S(x) - action_gap / 4.
inline UnstableChart build_chart(const CriticalPoint& x, const Perturbation& V, double eps_seed = -1.0,
                                 double action_gap = std::numeric_limits<double>::infinity()) {
    if (x.degenerate) throw Error("degenerate", "critical point is degenerate");
    if (x.morse_index == 0) throw Error("index-zero", "the unstable manifold of an index-0 point is a point");
    UnstableChart ch{x, unstable_basis(x), 0.0};
    for (size_t a = 0; a < ch.directions.size(); ++a)
        for (size_t b = 0; b <= a; ++b)
            if (std::abs(inner(ch.directions[a], ch.directions[b]) - (a == b ? 1.0 : 0.0)) > 1e-10)
                throw Error("invariant-violated", "unstable directions are not orthonormal", ErrorKind::invariant);
    const int k = ch.dim();
    std::vector<Vec> probes;
    for (int i = 0; i < k; ++i)
        for (double sg : {1.0, -1.0}) probes.push_back(sg * Vec::Unit(k, i));
    if (k >= 2) probes.push_back(Vec::Ones(k).normalized());
    ch.eps_seed = eps_seed > 0 ? eps_seed : 1e-3 * x.loop.manifold().injectivity_radius();
    for (int attempt = 0; attempt < 40; ++attempt, ch.eps_seed *= 0.5) {
        bool ok = true;
        for (const Vec& c : probes) {
            const double s = action(ch.seed(c), V);
            ok = ok && s < x.action && s > x.action - 0.25 * action_gap;
        }
        if (ok) return ch;
    }
    throw Error("seed-invalid", "no seed radius gives seeds inside the action window");
}

struct ModuliControls {
    FlowControls flow;
    double eps_seed = -1.0;       // <= 0 selects 1e-3 iota
    double capture_radius = -1.0; // <= 0 selects 0.05 iota
    int sweep_angles = 256;
    double bisection_width = 1e-6;
    double dedup_radius = -1.0; // <= 0 selects 1e-3 iota
    int max_projections = 8;

    double capture(const Manifold& m) const { return capture_radius > 0 ? capture_radius : 0.05 * m.injectivity_radius(); }
    double dedup(const Manifold& m) const { return dedup_radius > 0 ? dedup_radius : 1e-3 * m.injectivity_radius(); }
};

/// Integer lift of the angle of sample 0 along the trajectory, relative to the
/// start, minus the angles of `end`: the winding offset of the orbit in the
/// universal cover. Empty on the sphere.
inline std::vector<int> lifted_offset(const CylinderTrajectory& t, const DiscreteLoop& start, const DiscreteLoop& end) {
    const Manifold& m = start.manifold();
    if (m.kind() == ManifoldKind::round_sphere) return {};
    const double two_pi = 2 * std::numbers::pi;
    Vec theta = m.angles(start.point(0));
    Vec prev = theta;
    for (const auto& x : t.loops) {
        const Vec a = m.angles(x.point(0));
        for (Eigen::Index f = 0; f < a.size(); ++f) theta(f) += std::remainder(a(f) - prev(f), two_pi);
        prev = a;
    }
    const Vec target = m.angles(end.point(0));
    std::vector<int> out;
    for (Eigen::Index f = 0; f < theta.size(); ++f)
        out.push_back(static_cast<int>(std::lround((theta(f) - target(f)) / two_pi)));
    return out;
}

struct ShootResult {
    std::string status; // converged | captured | budget-exhausted
    std::optional<size_t> target;
    std::vector<int> offset;
    std::vector<double> closest; // min C^0 distance to every critical point over the run
    CylinderTrajectory trajectory;
    Vec direction;
    int projections = 0;

    bool same_class(const ShootResult& o) const { return target == o.target && offset == o.offset; }
};

namespace detail {

inline void track_closest(std::vector<double>& closest, const DiscreteLoop& u, const std::vector<CriticalPoint>& crit) {
    for (size_t i = 0; i < crit.size(); ++i) closest[i] = std::min(closest[i], loop_distance(u, crit[i].loop, LoopNorm::C0));
}

inline void append(CylinderTrajectory& t, const CylinderTrajectory& seg) {
    for (size_t i = 1; i < seg.size(); ++i) t.push(seg.loops[i], seg.monitors[i]);
    t.converged = seg.converged;
    t.status = seg.status;
}

} // namespace detail

/// Integrates from chart.seed(c). With `classify_only` the run stops on
/// entering the capture ball of an index-0 point. With `capture` set to a
/// critical point of positive index, the run is steered onto its stable
/// manifold: inside the capture ball the unstable components relative to
/// that point are removed and the flow resumed, up to max_projections times.
inline ShootResult shoot(const UnstableChart& chart, const Vec& c, const Perturbation& V,
                         const std::vector<CriticalPoint>& crit, const ModuliControls& ctl, bool classify_only = false,
                         std::optional<size_t> capture = {}) {
    if (std::abs(c.norm() - 1.0) > 1e-12 || c.size() != chart.dim())
        throw Error("invalid-direction", "shoot direction must be a unit vector of E^-", ErrorKind::usage);
    const Manifold& m = chart.base.loop.manifold();
    const double cap = ctl.capture(m);
    ShootResult res;
    res.direction = c;
    res.closest.assign(crit.size(), std::numeric_limits<double>::infinity());
    auto near = [&](const DiscreteLoop& u, size_t i) { return loop_distance(u, crit[i].loop, LoopNorm::C0) < cap; };
    StopPredicate stop = [&](const DiscreteLoop& u, const SliceMonitor&) {
        detail::track_closest(res.closest, u, crit);
        if (capture) return near(u, *capture);
        if (classify_only)
            for (size_t i = 0; i < crit.size(); ++i)
                if (crit[i].morse_index == 0 && near(u, i)) return true;
        return false;
    };
    CylinderTrajectory traj = integrate(chart.seed(c), V, ctl.flow, stop);
    if (capture && traj.status == "stopped") {
        const CriticalPoint& y = crit[*capture];
        const auto basis = unstable_basis(y);
        for (int p = 0; p < ctl.max_projections && !traj.converged; ++p) {
            LoopField xi = log_field(y.loop, traj.back());
            for (const auto& v : basis) xi.vectors -= inner(xi, v) * v.vectors;
            const DiscreteLoop up = exp_field(y.loop, xi);
            const double s_last = traj.monitors.back().s;
            traj.loops.back() = up;
            traj.monitors.back() = monitor(up, V, s_last);
            ++res.projections;
            double best = std::numeric_limits<double>::infinity();
            FlowControls fc = ctl.flow;
            fc.s_max = ctl.flow.s_max - (s_last - traj.monitors.front().s);
            if (fc.s_max <= 0) break;
            const auto seg = integrate(up, V, fc, [&](const DiscreteLoop& u, const SliceMonitor& mon) {
                detail::track_closest(res.closest, u, crit);
                best = std::min(best, mon.dsu_l2);
                return mon.dsu_l2 > 2.0 * best;
            }, s_last);
            detail::append(traj, seg);
            if (seg.status == "budget-exhausted") break;
        }
    }
    res.status = traj.converged ? "converged" : (traj.status == "stopped" ? "captured" : "budget-exhausted");
    if (res.status != "budget-exhausted") {
        double nearest = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < crit.size(); ++i) {
            const double d = loop_distance(traj.back(), crit[i].loop, LoopNorm::C0);
            if (d < cap && d < nearest) {
                nearest = d;
                res.target = i;
            }
        }
        if (!res.target) res.status = "budget-exhausted";
        else res.offset = lifted_offset(traj, chart.base.loop, crit[*res.target].loop);
    }
    // Classification runs only need the class; their slices are dropped.
    if (!classify_only) res.trajectory = std::move(traj);
    return res;
}

struct ConnectingOrbit {
    CylinderTrajectory trajectory; // shift-normalized
    size_t source = 0, target = 0;
    Vec shoot_direction;
    double angle = 0.0;
    int sign = 0;
    double normalized_at = 0.0; // shift applied to the raw s values
    size_t zero_slice = 0;      // slice with s = 0
    double energy = 0.0;
    double action_drop = 0.0;
    std::vector<int> offset;

    const DiscreteLoop& time_zero_loop() const { return trajectory.loops[zero_slice]; }
};

/// Shifts s so that the slice whose action is nearest c_* sits at s = 0.
/// Whole slices are shifted, so a second call is the identity.
inline void normalize(ConnectingOrbit& o, double c_star) {
    auto& t = o.trajectory;
    size_t best = 0;
    for (size_t i = 1; i < t.size(); ++i)
        if (std::abs(t.monitors[i].action - c_star) < std::abs(t.monitors[best].action - c_star)) best = i;
    const double shift = t.monitors[best].s;
    if (shift != 0.0) t.shift_s(-shift);
    o.normalized_at += shift;
    o.zero_slice = best;
}

inline ConnectingOrbit make_orbit(ShootResult&& r, size_t source, const std::vector<CriticalPoint>& crit) {
    ConnectingOrbit o;
    o.source = source;
    o.target = *r.target;
    o.shoot_direction = r.direction;
    o.angle = r.direction.size() >= 2 ? std::atan2(r.direction(1), r.direction(0)) : (r.direction(0) > 0 ? 0.0 : std::numbers::pi);
    o.offset = r.offset;
    o.trajectory = std::move(r.trajectory);
    o.energy = energy(o.trajectory);
    o.action_drop = crit[source].action - crit[o.target].action;
    normalize(o, 0.5 * (crit[source].action + crit[o.target].action));
    return o;
}

/// A direction of E^-(source) whose flow line may end at an index-(k-1)
/// point; `passage` is that point when the sweep identified it.
struct CandidateDirection {
    Vec c;
    std::optional<size_t> passage;
};

/// Candidate directions on the unit sphere of E^-. For k = 1 the two points
/// of the 0-sphere; for k = 2 a uniform angular mesh classified by (limit,
/// lifted winding offset), each class change bisected to bisection_width.
inline std::vector<CandidateDirection> sweep_directions(const UnstableChart& chart, const std::vector<CriticalPoint>& crit,
                                                        const Perturbation& V, const ModuliControls& ctl = {}) {
    const int k = chart.dim();
    const Manifold& m = chart.base.loop.manifold();
    if (k == 1) return {{Vec::Constant(1, 1.0), {}}, {Vec::Constant(1, -1.0), {}}};
    if (k != 2)
        throw Error("unsupported-dimension", "enumeration sweeps unstable spheres of dimension at most one",
                    ErrorKind::usage);
    const int M = ctl.sweep_angles;
    auto dir = [](double th) {
        Vec c(2);
        c << std::cos(th), std::sin(th);
        return c;
    };
    std::vector<ShootResult> mesh(static_cast<size_t>(M));
    parallel_for(mesh.size(), [&](size_t i) {
        mesh[i] = shoot(chart, dir(2 * std::numbers::pi * static_cast<double>(i) / M), V, crit, ctl, true);
    });
    for (int i = 0; i < M; ++i) {
        const auto& a = mesh[static_cast<size_t>(i)];
        const auto& b = mesh[static_cast<size_t>((i + 1) % M)];
        if (a.status == "converged" && b.status == "converged" && a.target && a.target == b.target &&
            crit[*a.target].morse_index == k - 1)
            throw Error("non-transverse-suspect", "an interval of directions converges to an index k-1 point");
    }
    std::vector<std::pair<double, double>> brackets;
    for (int i = 0; i < M; ++i)
        if (!mesh[static_cast<size_t>(i)].same_class(mesh[static_cast<size_t>((i + 1) % M)]))
            brackets.emplace_back(2 * std::numbers::pi * i / M, 2 * std::numbers::pi * (i + 1) / M);
    std::vector<CandidateDirection> found(brackets.size());
    parallel_for(brackets.size(), [&](size_t b) {
        auto [lo, hi] = brackets[b];
        const ShootResult rlo = shoot(chart, dir(lo), V, crit, ctl, true);
        while (hi - lo > ctl.bisection_width) {
            const double mid = 0.5 * (lo + hi);
            if (shoot(chart, dir(mid), V, crit, ctl, true).same_class(rlo)) lo = mid;
            else hi = mid;
        }
        const Vec c = dir(0.5 * (lo + hi));
        const ShootResult r = shoot(chart, c, V, crit, ctl, true);
        // The transition line passes an index k-1 point.
        double best = std::numeric_limits<double>::infinity();
        found[b].c = c;
        for (size_t i = 0; i < crit.size(); ++i)
            if (crit[i].morse_index == k - 1 && r.closest[i] < best && r.closest[i] < ctl.capture(m)) {
                best = r.closest[i];
                found[b].passage = i;
            }
    });
    return found;
}

/// Connecting orbits from crit[source] to crit[target] (index difference one),
/// modulo shift, sorted by (direction angle, energy). A precomputed sweep of
/// the same chart may be passed to share it between targets.
inline std::vector<ConnectingOrbit> enumerate_connecting(const std::vector<CriticalPoint>& crit, size_t source,
                                                         size_t target, const UnstableChart& chart,
                                                         const Perturbation& V, const ModuliControls& ctl = {},
                                                         const std::vector<CandidateDirection>* sweep = nullptr) {
    if (crit[source].morse_index - crit[target].morse_index != 1)
        throw Error("index-mismatch", "connecting orbits are enumerated for index difference one", ErrorKind::usage);
    const Manifold& m = chart.base.loop.manifold();
    std::optional<size_t> capture;
    if (crit[target].morse_index > 0) capture = target;
    std::vector<CandidateDirection> own;
    if (!sweep) {
        own = sweep_directions(chart, crit, V, ctl);
        sweep = &own;
    }
    std::vector<Vec> dirs;
    for (const auto& d : *sweep)
        if (!d.passage || *d.passage == target) dirs.push_back(d.c);
    std::vector<std::optional<ConnectingOrbit>> orbits(dirs.size());
    parallel_for(dirs.size(), [&](size_t i) {
        ShootResult r = shoot(chart, dirs[i], V, crit, ctl, false, capture);
        if (r.status == "converged" && r.target == target) orbits[i] = make_orbit(std::move(r), source, crit);
    });
    std::vector<ConnectingOrbit> out;
    const double dedup = ctl.dedup(m);
    for (auto& o : orbits) {
        if (!o) continue;
        bool dup = false;
        for (const auto& p : out)
            dup = dup || loop_distance(p.time_zero_loop(), o->time_zero_loop(), LoopNorm::C0) < dedup;
        if (!dup) out.push_back(std::move(*o));
    }
    std::sort(out.begin(), out.end(), [](const ConnectingOrbit& a, const ConnectingOrbit& b) {
        if (a.angle != b.angle) return a.angle < b.angle;
        return a.energy < b.energy;
    });
    return out;
}

/// Orientation of E^-(x): +1 keeps the eigenbasis order, -1 flips the first
/// vector (for an index-0 point it is the orientation of a point).
using Orientations = std::vector<int>;

inline std::vector<LoopField> oriented_basis(const CriticalPoint& x, int nu) {
    auto b = unstable_basis(x);
    if (!b.empty() && nu < 0) b[0].vectors = -b[0].vectors;
    return b;
}

namespace detail {

/// Derivative of the heat step at u along the tangent field v, by central
/// differences of the step itself.
inline LoopField step_derivative(const DiscreteLoop& u, const Perturbation& V, double h, const LoopField& v,
                                 double h_max_factor, double delta = 1e-6) {
    const double scale = std::max(sup_norm(v), 1e-300);
    const double d = delta / scale;
    LoopField plus{v.vectors * d}, minus{v.vectors * (-d)};
    const Mat a = heat_step(exp_field(u, plus), V, h, h_max_factor).points();
    const Mat b = heat_step(exp_field(u, minus), V, h, h_max_factor).points();
    return {(a - b) / (2 * d)};
}

/// Gram-Schmidt in L^2 with positive diagonal; keeps the orientation.
inline void orthonormalize(std::vector<LoopField>& f) {
    for (size_t a = 0; a < f.size(); ++a) {
        for (size_t b = 0; b < a; ++b) f[a].vectors -= inner(f[a], f[b]) * f[b].vectors;
        const double n = l2_norm(f[a]);
        if (!(n > 0)) throw Error("frame-collapse", "transported frame lost rank");
        f[a].vectors /= n;
    }
}

} // namespace detail

/// Determinant rule: transport an oriented basis of E^-(source) with the
/// linearized step and compare with d_s u (+) E^-(target) at the forward end.
inline int compute_sign(const ConnectingOrbit& o, const std::vector<CriticalPoint>& crit, const Perturbation& V,
                        const Orientations& nu, const FlowControls& flow = {}, double* determinant = nullptr) {
    const auto& t = o.trajectory;
    std::vector<LoopField> frame = oriented_basis(crit[o.source], nu[o.source]);
    for (auto& f : frame) f = tangent_part(t.front(), f);
    detail::orthonormalize(frame);
    for (size_t n = 0; n + 1 < t.size(); ++n) {
        for (auto& f : frame)
            f = tangent_part(t.loops[n + 1], detail::step_derivative(t.loops[n], V, t.h_s, f, flow.h_max_factor));
        detail::orthonormalize(frame);
    }
    const DiscreteLoop& end = t.back();
    std::vector<LoopField> rows;
    LoopField ds = heat_residual(end, V);
    ds.vectors /= l2_norm(ds);
    rows.push_back(ds);
    for (const auto& v : oriented_basis(crit[o.target], nu[o.target])) rows.push_back(tangent_part(end, v));
    const size_t k = frame.size();
    if (rows.size() != k) throw Error("index-mismatch", "frame and target spaces differ in dimension", ErrorKind::usage);
    Mat P(k, k);
    for (size_t a = 0; a < k; ++a)
        for (size_t b = 0; b < k; ++b) P(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = inner(rows[a], frame[b]);
    // Orientations of index-0 endpoints act as plain signs.
    double det = P.determinant();
    if (crit[o.target].morse_index == 0) det *= nu[o.target];
    if (determinant) *determinant = det;
    if (std::abs(det) < 1e-8) throw Error("frame-collapse", "projected frame determinant below 1e-8");
    return det > 0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Newton refinement of approximate trajectories

struct RefineOptions {
    double p = 4.0;
    double delta0 = 0.5;  // admissible residual bound in L^p
    double tol = 1e-10;   // residual target
    int max_iter = 1;
    double stall_factor = 0.8;
    double fd_step = 1e-7;
    double h_max_factor = 0.25;
};

struct RefineResult {
    CylinderTrajectory trajectory;
    double correction_norm = 0.0; // W-norm of the first correction
    double residual_before = 0.0;
    double residual_after = 0.0;
    double contraction = 0.0; // first-step residual ratio
    int iterations = 0;
};

/// Scheme residual R_n = P_{u_{n+1}}(u_{n+1} - Step(u_n)) / h, n < L - 1.
/// Exact outputs of integrate() have zero residual.
inline std::vector<LoopField> scheme_residual(const CylinderTrajectory& u, const Perturbation& V, double h_max_factor = 0.25) {
    std::vector<LoopField> r(u.size() - 1);
    parallel_for(r.size(), [&](size_t n) {
        const Mat d = u.loops[n + 1].points() - heat_step(u.loops[n], V, u.h_s, h_max_factor).points();
        r[n] = tangent_part(u.loops[n + 1], LoopField{d / u.h_s});
    });
    return r;
}

inline double lp_cylinder(const std::vector<LoopField>& f, double h, double p) {
    double s = 0.0;
    for (const auto& x : f)
        for (int j = 0; j < x.size(); ++j) s += std::pow(x.vectors.col(j).norm(), p) / x.size();
    return std::pow(h * s, 1.0 / p);
}

/// (int |xi|^p + |nabla_s xi|^p + |nabla_t nabla_t xi|^p)^{1/p}.
inline double w_norm(const CylinderTrajectory& u, const CylinderField& xi, double p) {
    const double h = u.h_s;
    double s = 0.0;
    for (size_t n = 0; n < u.size(); ++n) {
        const DiscreteLoop& x = u.loops[n];
        const LoopField& f = xi.slices[n];
        const size_t a = n + 1 < u.size() ? n : n - 1;
        const LoopField ds = tangent_part(x, LoopField{(xi.slices[a + 1].vectors - xi.slices[a].vectors) / h});
        const LoopField dtt = covariant_dt(x, covariant_dt(x, f));
        for (int j = 0; j < x.size(); ++j)
            s += (std::pow(f.vectors.col(j).norm(), p) + std::pow(ds.vectors.col(j).norm(), p) +
                  std::pow(dtt.vectors.col(j).norm(), p)) / x.size();
    }
    return std::pow(h * s, 1.0 / p);
}

namespace detail {

/// Tangent bases of every sample, stacked block-diagonally (d N x n N).
inline Mat slice_basis(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    const int d = m.ambient_dim(), n = m.dim(), N = x.size();
    Mat B = Mat::Zero(d * N, n * N);
    for (int j = 0; j < N; ++j) B.block(d * j, n * j, d, n) = m.tangent_basis(x.point(j));
    return B;
}

inline Vec flatten(const Mat& a) { return Eigen::Map<const Vec>(a.data(), a.size()); }

inline Mat unflatten(const Vec& v, int rows) { return Eigen::Map<const Mat>(v.data(), rows, v.size() / rows); }

} // namespace detail

/// One or more Newton corrections for the scheme residual. The correction is
/// the minimum-norm solution of the linearized system, i.e. it lies in the
/// row space of the linearization (the image of its adjoint).
inline RefineResult refine_trajectory(const CylinderTrajectory& u0, const Perturbation& V, const RefineOptions& opt = {}) {
    RefineResult res;
    res.trajectory = u0;
    CylinderTrajectory& u = res.trajectory;
    const double h = u.h_s;
    const size_t L = u.size();
    if (L < 2) throw Error("invalid-trajectory", "refinement needs at least two slices", ErrorKind::usage);
    auto rnorm = [&](const std::vector<LoopField>& r) { return lp_cylinder(r, h, opt.p); };
    std::vector<LoopField> R = scheme_residual(u, V, opt.h_max_factor);
    res.residual_before = res.residual_after = rnorm(R);
    if (res.residual_before > opt.delta0) throw Error("residual-too-large", "residual exceeds delta0");
    const int d = u.front().manifold().ambient_dim();
    for (int it = 0; it < opt.max_iter && rnorm(R) > opt.tol; ++it) {
        const double before = rnorm(R);
        std::vector<Mat> B(L), M(L - 1);
        parallel_for(L, [&](size_t n) { B[n] = detail::slice_basis(u.loops[n]); });
        // M_n = B_{n+1}^T dStep(u_n) B_n by central differences of the step.
        parallel_for(L - 1, [&](size_t n) {
            const auto m = B[n].cols();
            M[n].resize(m, m);
            for (Eigen::Index c = 0; c < m; ++c) {
                const LoopField v{detail::unflatten(B[n].col(c), d)};
                const LoopField dv = detail::step_derivative(u.loops[n], V, h, v, opt.h_max_factor, opt.fd_step);
                M[n].col(c) = B[n + 1].transpose() * detail::flatten(dv.vectors);
            }
        });
        // Rows n: xi_{n+1} - M_n xi_n = -h R_n. Minimum-norm solution through the
        // block tridiagonal normal matrix J J^T (block Cholesky-Thomas).
        const size_t R_rows = L - 1;
        std::vector<Vec> b(R_rows);
        for (size_t n = 0; n < R_rows; ++n) b[n] = -h * (B[n + 1].transpose() * detail::flatten(R[n].vectors));
        const auto m = M[0].rows();
        const Mat I = Mat::Identity(m, m);
        std::vector<Eigen::LLT<Mat>> S(R_rows);
        std::vector<Vec> z(R_rows);
        for (size_t n = 0; n < R_rows; ++n) {
            Mat Dn = M[n] * M[n].transpose() + I;
            z[n] = b[n];
            if (n > 0) {
                // E_{n-1}^T = -M_n in the scaled system.
                Dn -= M[n] * S[n - 1].solve(M[n].transpose());
                z[n] += M[n] * S[n - 1].solve(z[n - 1]);
            }
            S[n].compute(Dn);
            if (S[n].info() != Eigen::Success) throw Error("refine-failed", "normal matrix is not positive definite");
        }
        std::vector<Vec> y(R_rows);
        for (size_t n = R_rows; n-- > 0;) {
            Vec rhs = z[n];
            if (n + 1 < R_rows) rhs += M[n + 1].transpose() * y[n + 1];
            y[n] = S[n].solve(rhs);
        }
        CylinderField xi;
        xi.h_s = h;
        xi.slices.resize(L);
        for (size_t n = 0; n < L; ++n) {
            Vec c = Vec::Zero(m);
            if (n < R_rows) c -= M[n].transpose() * y[n];
            if (n > 0) c += y[n - 1];
            xi.slices[n] = LoopField{detail::unflatten(B[n] * c, d)};
        }
        const double wn = w_norm(u, xi, opt.p);
        if (it == 0) res.correction_norm = wn;
        parallel_for(L, [&](size_t n) { u.loops[n] = exp_field(u.loops[n], xi.slices[n]); });
        R = scheme_residual(u, V, opt.h_max_factor);
        const double after = rnorm(R);
        if (it == 0) res.contraction = after / before;
        res.residual_after = after;
        res.iterations = it + 1;
        if (after >= opt.stall_factor * before) throw Error("stalled", "Newton contraction factor reached the stall bound");
    }
    for (size_t n = 0; n < L; ++n) {
        const double s = u.monitors[n].s;
        u.monitors[n] = monitor(u.loops[n], V, s);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct Ev0Report {
    double min_separation = std::numeric_limits<double>::infinity();
    double sep_min = 0.0;
    std::vector<std::pair<size_t, size_t>> violations; // uc-violation-suspect pairs
    bool empty = true;

    bool ok() const { return violations.empty(); }
};

/// Pairwise C^0 separation of the normalized time-0 loops.
inline Ev0Report ev0_injectivity(const std::vector<ConnectingOrbit>& orbits, double sep_min) {
    Ev0Report r;
    r.sep_min = sep_min;
    if (orbits.size() < 2) return r;
    r.empty = false;
    for (size_t a = 0; a < orbits.size(); ++a)
        for (size_t b = a + 1; b < orbits.size(); ++b) {
            const double d = loop_distance(orbits[a].time_zero_loop(), orbits[b].time_zero_loop(), LoopNorm::C0);
            r.min_separation = std::min(r.min_separation, d);
            if (!(d > sep_min)) r.violations.emplace_back(a, b);
        }
    return r;
}

struct RankReport {
    int rank = 0;
    int expected = 0;
    Vec singular_values;
    bool rank_deficient() const { return rank < expected; }
};

/// Numerical rank of c -> ev_0(flow for probe_time from the seed at c), by
/// central differences around c = e_1 in R^k.
inline RankReport unstable_rank(const UnstableChart& chart, const Perturbation& V, double probe_time,
                                const FlowControls& flow = {}, double rank_tol = 1e-6, double fd = 1e-3) {
    const int k = chart.dim();
    RankReport r;
    r.expected = chart.base.morse_index;
    FlowControls fc = flow;
    fc.s_max = probe_time;
    fc.tol_conv = 0.0;
    auto endpoint = [&](const Vec& c) {
        LoopField xi = LoopField::zero(chart.base.loop);
        for (int i = 0; i < k; ++i) xi.vectors += (chart.eps_seed * c(i)) * chart.directions[static_cast<size_t>(i)].vectors;
        return detail::flatten(integrate(exp_field(chart.base.loop, xi), V, fc).back().points());
    };
    const Vec c0 = Vec::Unit(k, 0);
    Mat J(chart.base.loop.points().size(), k);
    parallel_for(static_cast<size_t>(k), [&](size_t i) {
        const Vec e = fd * Vec::Unit(k, static_cast<Eigen::Index>(i));
        J.col(static_cast<Eigen::Index>(i)) = (endpoint(c0 + e) - endpoint(c0 - e)) / (2 * fd);
    });
    r.singular_values = Eigen::JacobiSVD<Mat>(J).singularValues();
    const double smax = r.singular_values.size() ? r.singular_values(0) : 0.0;
    for (Eigen::Index i = 0; i < r.singular_values.size(); ++i)
        if (r.singular_values(i) > rank_tol * smax) ++r.rank;
    return r;
}

inline RankReport unstable_rank(const CriticalPoint& x, const Perturbation& V, double probe_time,
                                const FlowControls& flow = {}, double rank_tol = 1e-6) {
    if (x.morse_index == 0) return {};
    return unstable_rank(build_chart(x, V), V, probe_time, flow, rank_tol);
}

} // namespace loopflow

#pragma once

#include <functional>
#include <string>

#include "loopflow/critical.hpp"

namespace loopflow {

/// Solves (I - h D_tt) y = b for every row of b, where D_tt is the periodic
/// second difference N^2 (y_{j+1} - 2 y_j + y_{j-1}). Constant-coefficient
/// cyclic tridiagonal system, Thomas algorithm plus Sherman-Morrison.
inline Mat solve_implicit_laplacian(const Mat& b, double h) {
    const auto N = b.cols();
    const double n2 = static_cast<double>(N) * static_cast<double>(N);
    const double diag = 1.0 + 2.0 * h * n2, off = -h * n2;
    // Cyclic correction with u = (gamma, 0, ..., 0, off), v = (1, 0, ..., 0, off / gamma).
    const double gamma = -diag;
    std::vector<double> d(static_cast<size_t>(N), diag);
    d[0] = diag - gamma;
    d[static_cast<size_t>(N - 1)] = diag - off * off / gamma;
    // Forward elimination on the modified tridiagonal matrix (shared by all rows).
    std::vector<double> c(static_cast<size_t>(N)), m(static_cast<size_t>(N));
    m[0] = d[0];
    for (Eigen::Index j = 1; j < N; ++j) {
        c[static_cast<size_t>(j)] = off / m[static_cast<size_t>(j - 1)];
        m[static_cast<size_t>(j)] = d[static_cast<size_t>(j)] - c[static_cast<size_t>(j)] * off;
    }
    auto tri = [&](Eigen::Ref<Vec> y) {
        for (Eigen::Index j = 1; j < N; ++j) y(j) -= c[static_cast<size_t>(j)] * y(j - 1);
        y(N - 1) /= m[static_cast<size_t>(N - 1)];
        for (Eigen::Index j = N - 2; j >= 0; --j) y(j) = (y(j) - off * y(j + 1)) / m[static_cast<size_t>(j)];
    };
    Vec u = Vec::Zero(N);
    u(0) = gamma;
    u(N - 1) = off;
    tri(u);
    const double vu = u(0) + off / gamma * u(N - 1);
    Mat out(b.rows(), N);
    for (Eigen::Index r = 0; r < b.rows(); ++r) {
        Vec y = b.row(r).transpose();
        tri(y);
        const double vy = y(0) + off / gamma * y(N - 1);
        out.row(r) = (y - (vy / (1.0 + vu)) * u).transpose();
    }
    return out;
}

/// Ambient periodic second difference applied row-wise.
inline Mat ambient_second_difference(const Mat& p) {
    const auto N = p.cols();
    const double n2 = static_cast<double>(N) * static_cast<double>(N);
    Mat out(p.rows(), N);
    for (Eigen::Index j = 0; j < N; ++j)
        out.col(j) = n2 * (p.col((j + 1) % N) - 2.0 * p.col(j) + p.col((j + N - 1) % N));
    return out;
}

struct FlowControls {
    double h_s = 1e-3;
    double s_max = 50.0;
    double tol_conv = 1e-8;
    double h_max_factor = 0.25; // h_s <= h_max_factor / N
    int max_steps = 10000000;
};

inline double max_step(int n, double factor = 0.25) { return factor / n; }

/// One IMEX step: implicit in the ambient second difference, explicit in the
/// remaining part of the discrete acceleration (the normal correction) and in
/// grad V, followed by reprojection. Critical loops are exact fixed points.
/// `residual` must be heat_residual(u, V).
inline DiscreteLoop heat_step(const DiscreteLoop& u, const LoopField& residual, double h, double h_max_factor = 0.25) {
    if (!(h > 0) || h > max_step(u.size(), h_max_factor) * (1 + 1e-12))
        throw Error("step-too-large", "h_s must lie in (0, h_max(N)]", ErrorKind::usage);
    const Manifold& m = u.manifold();
    const Mat D = ambient_second_difference(u.points());
    const Mat rhs = u.points() + h * (residual.vectors - D);
    const Mat w = solve_implicit_laplacian(rhs, h);
    Mat out(w.rows(), w.cols());
    const double tube = 0.5 * m.injectivity_radius();
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (!(m.distance_to(w.col(j)) < tube)) throw Error("projection-failed", "step left the projection tube");
        out.col(j) = m.project(w.col(j));
    }
    return {m, std::move(out)};
}

inline DiscreteLoop heat_step(const DiscreteLoop& u, const Perturbation& V, double h, double h_max_factor = 0.25) {
    return heat_step(u, heat_residual(u, V), h, h_max_factor);
}

struct SliceMonitor {
    double s = 0.0;
    double action = 0.0;
    double dsu_l2 = 0.0;          // |heat residual|_{L^2} = |d_s u|
    double dtu_sup = 0.0;
    double nabla_t_dtu_sup = 0.0;
    double dsu_sup = 0.0;
};

/// Monitors of one slice; the heat residual is returned through `residual`.
inline SliceMonitor monitor(const DiscreteLoop& u, const Perturbation& V, double s, LoopField* residual = nullptr) {
    const ChordLogs c = chord_logs(u);
    const double n = u.size();
    const Mat lap = n * n * (c.fwd + c.bwd);
    const Mat vel = 0.5 * n * (c.fwd - c.bwd);
    LoopField r{lap + V.gradient(u).vectors};
    SliceMonitor mon;
    mon.s = s;
    mon.action = 0.5 * n * c.fwd.colwise().squaredNorm().sum() - V.eval(u);
    mon.dsu_l2 = l2_norm(r);
    mon.dtu_sup = vel.colwise().norm().maxCoeff();
    mon.nabla_t_dtu_sup = lap.colwise().norm().maxCoeff();
    mon.dsu_sup = sup_norm(r);
    if (residual) *residual = std::move(r);
    return mon;
}

struct CylinderTrajectory {
    std::vector<DiscreteLoop> loops;
    std::vector<SliceMonitor> monitors;
    double h_s = 0.0;
    bool converged = false;
    std::string status = "running"; // converged | budget-exhausted | stopped

    size_t size() const { return loops.size(); }
    double s(size_t n) const { return monitors[n].s; }
    const DiscreteLoop& front() const { return loops.front(); }
    const DiscreteLoop& back() const { return loops.back(); }

    void push(DiscreteLoop u, const SliceMonitor& mon) {
        loops.push_back(std::move(u));
        monitors.push_back(mon);
    }

    /// Slices [first, last) with s values kept.
    CylinderTrajectory slice(size_t first, size_t last) const {
        CylinderTrajectory t;
        t.h_s = h_s;
        t.status = status;
        t.converged = converged && last == size();
        for (size_t i = first; i < last; ++i) t.push(loops[i], monitors[i]);
        return t;
    }

    void shift_s(double ds) {
        for (auto& m : monitors) m.s += ds;
    }
};

/// s -> -s with the slice order reversed.
inline CylinderTrajectory reversed(const CylinderTrajectory& t) {
    CylinderTrajectory r;
    r.h_s = t.h_s;
    r.status = t.status;
    for (size_t i = t.size(); i-- > 0;) {
        SliceMonitor m = t.monitors[i];
        m.s = -m.s;
        r.push(t.loops[i], m);
    }
    return r;
}

using StopPredicate = std::function<bool(const DiscreteLoop&, const SliceMonitor&)>;

/// Integrates until |d_s u|_{L^2} <= tol_conv, s_max, or the stop predicate.
inline CylinderTrajectory integrate(const DiscreteLoop& u0, const Perturbation& V, const FlowControls& c,
                                    const StopPredicate& stop = {}, double s0 = 0.0) {
    CylinderTrajectory traj;
    traj.h_s = c.h_s;
    DiscreteLoop u = u0;
    LoopField r;
    SliceMonitor mon = monitor(u, V, s0, &r);
    traj.push(u, mon);
    for (int step = 0;; ++step) {
        if (mon.dsu_l2 <= c.tol_conv) {
            traj.converged = true;
            traj.status = "converged";
            return traj;
        }
        if (stop && stop(u, mon)) {
            traj.status = "stopped";
            return traj;
        }
        if (mon.s - s0 >= c.s_max - 0.5 * c.h_s || step >= c.max_steps) {
            traj.status = "budget-exhausted";
            return traj;
        }
        u = heat_step(u, r, c.h_s, c.h_max_factor);
        mon = monitor(u, V, s0 + (step + 1) * c.h_s, &r);
        traj.push(u, mon);
    }
}

/// Trapezoid rule in s of |d_s u|^2_{L^2}.
inline double energy(const CylinderTrajectory& t) {
    double e = 0.0;
    for (size_t i = 1; i < t.size(); ++i) {
        const double a = t.monitors[i - 1].dsu_l2, b = t.monitors[i].dsu_l2;
        e += 0.5 * (t.monitors[i].s - t.monitors[i - 1].s) * (a * a + b * b);
    }
    return e;
}

/// Index of the unique critical point within C^0 capture_radius of the final
/// slice, if any.
inline std::optional<size_t> detect_limit(const DiscreteLoop& last, const std::vector<CriticalPoint>& crit,
                                          double capture_radius) {
    double min_gap = std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < crit.size(); ++a)
        for (size_t b = a + 1; b < crit.size(); ++b)
            min_gap = std::min(min_gap, loop_distance(crit[a].loop, crit[b].loop, LoopNorm::C0));
    if (capture_radius >= 0.5 * min_gap)
        throw Error("ambiguous-capture", "capture radius is not below half the minimal critical-point gap",
                    ErrorKind::usage);
    std::optional<size_t> hit;
    for (size_t i = 0; i < crit.size(); ++i)
        if (loop_distance(last, crit[i].loop, LoopNorm::C0) < capture_radius) {
            if (hit) throw Error("ambiguous-capture", "two critical points within the capture radius");
            hit = i;
        }
    return hit;
}

inline std::optional<size_t> detect_limit(const CylinderTrajectory& t, const std::vector<CriticalPoint>& crit,
                                          double capture_radius) {
    return detect_limit(t.back(), crit, capture_radius);
}

enum class DecaySide { forward, backward };

struct DecayFit {
    double rho = 0.0;
    double s_a = 0.0, s_b = 0.0;
    double r_squared = 0.0;
    int slices = 0;
    double reference_gap = 0.0; // min |eig| at the limit, when supplied
    double ratio() const { return reference_gap > 0 ? rho / reference_gap : 0.0; }
};

/// Least-squares exponential rate of |d_s u| over the asymptotic window: the
/// trailing slices within `factor` of the final value (forward) or the leading
/// slices within `factor` of the initial value (backward).
inline DecayFit decay_fit(const CylinderTrajectory& t, DecaySide side, double reference_gap = 0.0,
                          double factor = -1.0, int min_slices = 20) {
    if (factor <= 0) factor = side == DecaySide::forward ? 1000.0 : 10.0;
    const size_t n = t.size();
    std::vector<size_t> idx;
    if (side == DecaySide::forward) {
        const double end = t.monitors[n - 1].dsu_l2;
        for (size_t i = n; i-- > 0;) {
            if (!(t.monitors[i].dsu_l2 <= factor * end) || t.monitors[i].dsu_l2 <= 0) break;
            idx.push_back(i);
        }
    } else {
        const double start = t.monitors[0].dsu_l2;
        for (size_t i = 0; i < n; ++i) {
            if (!(t.monitors[i].dsu_l2 <= factor * start) || t.monitors[i].dsu_l2 <= 0) break;
            idx.push_back(i);
        }
    }
    if (static_cast<int>(idx.size()) < min_slices)
        throw Error("insufficient-tail", "fewer than the required slices in the asymptotic window");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const double m = static_cast<double>(idx.size());
    for (size_t i : idx) {
        const double x = t.monitors[i].s, y = std::log(t.monitors[i].dsu_l2);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    const double cov = sxy - sx * sy / m, vx = sxx - sx * sx / m, vy = syy - sy * sy / m;
    DecayFit f;
    const double slope = cov / vx;
    f.rho = side == DecaySide::forward ? -slope : slope;
    f.r_squared = vy > 0 ? std::max(0.0, cov * cov / (vx * vy)) : 1.0;
    f.slices = static_cast<int>(idx.size());
    f.s_a = t.monitors[std::min(idx.front(), idx.back())].s;
    f.s_b = t.monitors[std::max(idx.front(), idx.back())].s;
    f.reference_gap = reference_gap;
    return f;
}

struct AprioriReport {
    double dtu_sup = 0, nabla_t_dtu_sup = 0, dsu_sup = 0;
    double ratio_dtu = 0, ratio_nabla = 0, ratio_dsu = 0;
    double bound_factor = 10.0;
    bool ok = true;
};

/// No-blow-up surrogate for the a priori bounds: every sup over the run stays
/// below bound_factor times a reference scale. The reference is the larger of
/// the value on the first 10 slices and `floor` (the (V0) gradient scale).
inline AprioriReport check_apriori(const CylinderTrajectory& t, double c0, double floor, double bound_factor = 10.0) {
    for (const auto& m : t.monitors)
        if (m.action > c0 + 1e-12)
            throw Error("precondition-violated", "slice action exceeds c0", ErrorKind::usage);
    AprioriReport r;
    r.bound_factor = bound_factor;
    double ref_dtu = floor, ref_nab = floor, ref_dsu = floor;
    for (size_t i = 0; i < t.size(); ++i) {
        const auto& m = t.monitors[i];
        r.dtu_sup = std::max(r.dtu_sup, m.dtu_sup);
        r.nabla_t_dtu_sup = std::max(r.nabla_t_dtu_sup, m.nabla_t_dtu_sup);
        r.dsu_sup = std::max(r.dsu_sup, m.dsu_sup);
        if (i < 10) {
            ref_dtu = std::max(ref_dtu, m.dtu_sup);
            ref_nab = std::max(ref_nab, m.nabla_t_dtu_sup);
            ref_dsu = std::max(ref_dsu, m.dsu_sup);
        }
    }
    auto ratio = [](double v, double ref) { return ref > 0 ? v / ref : (v > 0 ? std::numeric_limits<double>::infinity() : 1.0); };
    r.ratio_dtu = ratio(r.dtu_sup, ref_dtu);
    r.ratio_nabla = ratio(r.nabla_t_dtu_sup, ref_nab);
    r.ratio_dsu = ratio(r.dsu_sup, ref_dsu);
    r.ok = r.ratio_dtu <= bound_factor && r.ratio_nabla <= bound_factor && r.ratio_dsu <= bound_factor;
    return r;
}

inline void write_monitors_csv(std::ostream& os, const CylinderTrajectory& t) {
    os << "s,action,dsu_l2,dtu_sup,nabla_t_dtu_sup\n" << std::setprecision(17);
    for (const auto& m : t.monitors)
        os << m.s << ',' << m.action << ',' << m.dsu_l2 << ',' << m.dtu_sup << ',' << m.nabla_t_dtu_sup << '\n';
}

inline void write_monitors_csv(const std::string& path, const CylinderTrajectory& t) {
    std::ofstream os(path);
    if (!os) throw Error("io-error", "cannot write " + path, ErrorKind::usage);
    write_monitors_csv(os, t);
}

} // namespace loopflow

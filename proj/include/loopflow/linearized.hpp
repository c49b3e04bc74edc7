#pragma once

#include <random>

#include "loopflow/heatflow.hpp"

namespace loopflow {

/// One tangent loop field per slice of a cylinder.
struct CylinderField {
    std::vector<LoopField> slices;
    double h_s = 0.0;

    size_t size() const { return slices.size(); }

    static CylinderField zero(const CylinderTrajectory& u) {
        CylinderField f;
        f.h_s = u.h_s;
        for (const auto& x : u.loops) f.slices.push_back(LoopField::zero(x));
        return f;
    }

    CylinderField& operator+=(const CylinderField& o) {
        for (size_t i = 0; i < size(); ++i) slices[i].vectors += o.slices[i].vectors;
        return *this;
    }
};

inline CylinderField operator*(double c, CylinderField f) {
    for (auto& s : f.slices) s.vectors *= c;
    return f;
}

inline double cylinder_inner(const CylinderField& a, const CylinderField& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += inner(a.slices[i], b.slices[i]);
    return a.h_s * s;
}

inline double cylinder_l2(const CylinderField& a) { return std::sqrt(cylinder_inner(a, a)); }

/// L^2 norm over the truncated window: the last slice, where apply_Du sees
/// the zero extension, is left out.
inline double window_l2(const CylinderField& a) {
    double s = 0.0;
    for (size_t i = 0; i + 1 < a.size(); ++i) s += inner(a.slices[i], a.slices[i]);
    return std::sqrt(a.h_s * s);
}

inline void check_same_grid(const CylinderTrajectory& u, const CylinderField& xi) {
    if (xi.size() != u.size()) throw Error("grid-mismatch", "cylinder field and trajectory differ in slice count");
    for (size_t i = 0; i < u.size(); ++i) check_same_grid(u.loops[i], xi.slices[i]);
}

/// d_s u as the projected forward difference (backward on the last slice).
inline CylinderField s_derivative(const CylinderTrajectory& u) {
    CylinderField f;
    f.h_s = u.h_s;
    const size_t L = u.size();
    for (size_t i = 0; i < L; ++i) {
        const size_t a = i + 1 < L ? i : i - 1;
        const double ds = u.s(a + 1) - u.s(a);
        LoopField d{(u.loops[a + 1].points() - u.loops[a].points()) / ds};
        f.slices.push_back(tangent_part(u.loops[i], d));
    }
    return f;
}

namespace detail {

/// Applies A(s) slice by slice; slices are independent.
inline CylinderField apply_slices(const CylinderTrajectory& u, const Perturbation& V, const CylinderField& xi) {
    CylinderField out = CylinderField::zero(u);
    parallel_for(u.size(), [&](size_t i) {
        if (xi.slices[i].vectors.isZero(0.0)) return;
        out.slices[i] = HessianOperator(u.loops[i], V).apply(xi.slices[i]);
    });
    return out;
}

} // namespace detail

/// D_u xi = nabla_s xi + A(u(s)) xi, the s-derivative being the projected
/// forward difference with xi extended by zero past the last slice.
inline CylinderField apply_Du(const CylinderTrajectory& u, const Perturbation& V, const CylinderField& xi) {
    check_same_grid(u, xi);
    CylinderField out = detail::apply_slices(u, V, xi);
    const double h = u.h_s;
    for (size_t i = 0; i < u.size(); ++i) {
        LoopField next = i + 1 < u.size() ? tangent_part(u.loops[i], xi.slices[i + 1]) : LoopField::zero(u.loops[i]);
        out.slices[i].vectors += (next.vectors - xi.slices[i].vectors) / h;
    }
    return out;
}

/// Formal adjoint: -nabla_s + A, backward difference, zero before the first
/// slice. Summation by parts makes the discrete pairing exact.
inline CylinderField apply_Du_star(const CylinderTrajectory& u, const Perturbation& V, const CylinderField& xi) {
    check_same_grid(u, xi);
    CylinderField out = detail::apply_slices(u, V, xi);
    const double h = u.h_s;
    for (size_t i = 0; i < u.size(); ++i) {
        LoopField prev = i > 0 ? tangent_part(u.loops[i], xi.slices[i - 1]) : LoopField::zero(u.loops[i]);
        out.slices[i].vectors -= (xi.slices[i].vectors - prev.vectors) / h;
    }
    return out;
}

inline CylinderField reversed(const CylinderField& f) {
    CylinderField r = f;
    std::reverse(r.slices.begin(), r.slices.end());
    return r;
}

/// Slice Hessians A(s) on a subsample of the trajectory.
struct OperatorFamily {
    std::vector<double> s_grid;
    std::vector<size_t> slice_index;
    std::vector<Mat> slices; // symmetrized
    std::vector<Vec> eigenvalues;
    double max_asymmetry = 0.0;

    size_t size() const { return s_grid.size(); }
};

/// Family on every `stride`-th slice, always including both ends.
inline OperatorFamily build_family(const CylinderTrajectory& u, const Perturbation& V, size_t stride = 1) {
    stride = std::max<size_t>(stride, 1);
    OperatorFamily fam;
    for (size_t i = 0; i < u.size(); i += stride) fam.slice_index.push_back(i);
    if (fam.slice_index.back() != u.size() - 1) fam.slice_index.push_back(u.size() - 1);
    const size_t m = fam.slice_index.size();
    fam.slices.resize(m);
    fam.eigenvalues.resize(m);
    std::vector<double> defect(m, 0.0);
    parallel_for(m, [&](size_t k) {
        const HessianAssembly h = assemble_hessian(u.loops[fam.slice_index[k]], V);
        fam.slices[k] = h.matrix;
        defect[k] = h.asymmetry_defect;
        fam.eigenvalues[k] = Eigen::SelfAdjointEigenSolver<Mat>(h.matrix, Eigen::EigenvaluesOnly).eigenvalues();
    });
    for (size_t k = 0; k < m; ++k) fam.s_grid.push_back(u.s(fam.slice_index[k]));
    fam.max_asymmetry = *std::max_element(defect.begin(), defect.end());
    return fam;
}

struct Crossing {
    double s = 0.0;
    int eigen_index = 0;
    int direction = 0; // +1 upward through zero, -1 downward
};

struct SpectralFlowResult {
    int flow = 0;
    std::vector<Crossing> crossings;
    int index_minus = 0, index_plus = 0;
    int resamples = 0;
};

inline int negative_count(const Vec& ev) { return static_cast<int>((ev.array() < 0).count()); }

/// Net upward zero-crossings of the sorted slice eigenvalues.
inline SpectralFlowResult spectral_flow(const OperatorFamily& fam, double track_tol = 1e-8, double tol_nondeg = 1e-6) {
    if (fam.size() < 2) throw Error("endpoint-degenerate", "family needs at least two slices", ErrorKind::usage);
    const Vec& e0 = fam.eigenvalues.front();
    const Vec& e1 = fam.eigenvalues.back();
    if (e0.cwiseAbs().minCoeff() <= tol_nondeg || e1.cwiseAbs().minCoeff() <= tol_nondeg)
        throw Error("endpoint-degenerate", "endpoint slice has an eigenvalue within tol_nondeg of zero");
    SpectralFlowResult r;
    r.index_minus = negative_count(e0);
    r.index_plus = negative_count(e1);
    for (size_t i = 0; i + 1 < fam.size(); ++i) {
        const Vec& a = fam.eigenvalues[i];
        const Vec& b = fam.eigenvalues[i + 1];
        for (Eigen::Index k = 0; k < a.size(); ++k) {
            if ((a(k) < 0) == (b(k) < 0)) continue;
            // A neighbour within track_tol makes the sorted assignment ambiguous.
            for (const Vec* e : {&a, &b}) {
                if ((k > 0 && (*e)(k) - (*e)(k - 1) < track_tol) || (k + 1 < e->size() && (*e)(k + 1) - (*e)(k) < track_tol))
                    throw Error("tracking-ambiguous", "two eigenvalues are within track_tol at a crossing");
            }
            const double w = a(k) / (a(k) - b(k));
            const int dir = b(k) > a(k) ? 1 : -1;
            r.crossings.push_back({fam.s_grid[i] + w * (fam.s_grid[i + 1] - fam.s_grid[i]), static_cast<int>(k), dir});
            r.flow += dir;
        }
    }
    if (r.flow != r.index_minus - r.index_plus)
        throw Error("invariant-violated", "spectral flow differs from the endpoint index difference", ErrorKind::invariant);
    return r;
}

/// Spectral flow on at most `max_slices` slices, halving the spacing up to
/// three times when tracking is ambiguous.
inline SpectralFlowResult spectral_flow(const CylinderTrajectory& u, const Perturbation& V, double track_tol = 1e-8,
                                        double tol_nondeg = 1e-6, size_t max_slices = 256) {
    size_t stride = std::max<size_t>(1, (u.size() + max_slices - 1) / max_slices);
    for (int attempt = 0;; ++attempt) {
        try {
            SpectralFlowResult r = spectral_flow(build_family(u, V, stride), track_tol, tol_nondeg);
            r.resamples = attempt;
            return r;
        } catch (const Error& e) {
            if (e.code() != "tracking-ambiguous" || attempt == 3 || stride == 1) throw;
            stride = std::max<size_t>(1, stride / 2);
        }
    }
}

/// Stationary cylinder u = x on s in [s0, 0] with step h.
inline CylinderTrajectory stationary_cylinder(const DiscreteLoop& x, const Perturbation& V, double s0, double h) {
    CylinderTrajectory u;
    u.h_s = h;
    const int steps = static_cast<int>(std::lround(-s0 / h));
    const SliceMonitor m = monitor(x, V, 0.0);
    for (int i = 0; i <= steps; ++i) {
        SliceMonitor mi = m;
        mi.s = (i - steps) * h;
        u.push(x, mi);
    }
    u.converged = true;
    u.status = "stationary";
    return u;
}

/// {e^{-s lambda_k} v_k} over the negative eigenpairs of A_x on the grid of
/// the stationary cylinder over [s0, 0].
inline std::vector<CylinderField> stationary_kernel_basis(const CriticalPoint& x, double s0, double h) {
    if (x.degenerate) throw Error("degenerate", "critical point is degenerate");
    std::vector<CylinderField> out;
    const int steps = static_cast<int>(std::lround(-s0 / h));
    for (int k = 0; k < x.morse_index; ++k) {
        const double lam = x.spectrum.values(k);
        const LoopField v = x.eigenfield(k);
        CylinderField f;
        f.h_s = h;
        for (int i = 0; i <= steps; ++i) f.slices.push_back({std::exp(-((i - steps) * h) * lam) * v.vectors});
        out.push_back(std::move(f));
    }
    return out;
}

/// Counts solutions of D_u xi = 0 on the stationary cylinder that stay bounded
/// as s -> -infinity: random initial slices are integrated forward over a
/// window of length `window` and the directions that grow are counted.
inline int kernel_dimension(const CriticalPoint& x, const Perturbation& V, double window, double h, uint64_t seed = 1,
                            int probes = 16) {
    const Mat A = assemble_hessian(x.loop, V).matrix;
    const auto n = A.rows();
    const int m = static_cast<int>(std::min<Eigen::Index>(n, probes));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Mat Q(n, m);
    for (Eigen::Index i = 0; i < Q.size(); ++i) Q.data()[i] = g(rng);
    Q = Eigen::HouseholderQR<Mat>(Q).householderQ() * Mat::Identity(n, m);
    // Implicit Euler for xi' = -A xi.
    const Eigen::PartialPivLU<Mat> step(Mat::Identity(n, n) + h * A);
    const int steps = static_cast<int>(std::lround(window / h));
    Mat X = Q;
    for (int i = 0; i < steps; ++i) X = step.solve(X);
    const Vec sv = Eigen::JacobiSVD<Mat>(X).singularValues();
    return static_cast<int>((sv.array() > 1.0).count());
}

} // namespace loopflow

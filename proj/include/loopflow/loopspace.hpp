#pragma once

#include "loopflow/perturbation.hpp"

namespace loopflow {

// The discrete action uses geodesic chords between neighbouring samples:
//   S_V(x) = (N/2) sum_j d(x_j, x_{j+1})^2 - V(x).
// Its exact negative L^2 gradient is the residual below, so finite-difference
// checks of the gradient are limited only by rounding.

/// Centered velocity (N/2)(log_{x_j} x_{j+1} - log_{x_j} x_{j-1}).
inline LoopField velocity(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    const int n = x.size();
    LoopField v{Mat(m.ambient_dim(), n)};
    for (int j = 0; j < n; ++j)
        v.vectors.col(j) = 0.5 * n * (m.log(x.point(j), x.point(x.next(j))) - m.log(x.point(j), x.point(x.prev(j))));
    return v;
}

/// Discrete covariant acceleration N^2 (log_{x_j} x_{j+1} + log_{x_j} x_{j-1}).
inline LoopField geodesic_laplacian(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    const int n = x.size();
    const double n2 = static_cast<double>(n) * n;
    LoopField a{Mat(m.ambient_dim(), n)};
    for (int j = 0; j < n; ++j)
        a.vectors.col(j) = n2 * (m.log(x.point(j), x.point(x.next(j))) + m.log(x.point(j), x.point(x.prev(j))));
    return a;
}

inline double kinetic_energy(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    double s = 0.0;
    for (int j = 0; j < x.size(); ++j) {
        const double d = m.geodesic_distance(x.point(j), x.point(x.next(j)));
        s += d * d;
    }
    return 0.5 * x.size() * s;
}

inline double action(const DiscreteLoop& x, const Perturbation& V) { return kinetic_energy(x) - V.eval(x); }

/// Forward and backward chord logarithms log_{x_j} x_{j+1}, log_{x_j} x_{j-1};
/// every quantity above is a combination of these.
struct ChordLogs {
    Mat fwd, bwd;
};

inline ChordLogs chord_logs(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    const int n = x.size();
    ChordLogs c{Mat(m.ambient_dim(), n), Mat(m.ambient_dim(), n)};
    for (int j = 0; j < n; ++j) {
        c.fwd.col(j) = m.log(x.point(j), x.point(x.next(j)));
        c.bwd.col(j) = m.log(x.point(j), x.point(x.prev(j)));
    }
    return c;
}

/// nabla_t xdot + grad V(x); the negative L^2 gradient of the action.
inline LoopField heat_residual(const DiscreteLoop& x, const Perturbation& V) {
    LoopField r = geodesic_laplacian(x);
    r.vectors += V.gradient(x).vectors;
    return r;
}

} // namespace loopflow

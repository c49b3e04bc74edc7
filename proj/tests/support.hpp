#pragma once

#include <random>

#include "loopflow/loopflow.hpp"

namespace testsupport {

using namespace loopflow;

inline Manifold unit_circle() { return Manifold(ManifoldSpec::circle(1.0 / (2.0 * std::numbers::pi))); }
inline Manifold torus2() { return Manifold(ManifoldSpec::flat_torus(2)); }
inline Manifold sphere2() { return Manifold(ManifoldSpec::round_sphere(2)); }

inline Vec random_point(const Manifold& m, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Vec q(m.ambient_dim());
    for (auto& c : q) c = g(rng);
    if (m.kind() == ManifoldKind::flat_torus) {
        for (int f = 0; f < m.circle_factors(); ++f) q.segment<2>(2 * f) *= m.radius() / q.segment<2>(2 * f).norm();
        return q;
    }
    return q * (m.radius() / q.norm());
}

inline Vec random_tangent(const Manifold& m, const Vec& q, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g;
    Vec v(m.ambient_dim());
    for (auto& c : v) c = g(rng);
    return scale * m.tangent_part(q, v);
}

/// Smooth loop: a few low Fourier modes in the angle chart (circle/torus) or
/// a wobbly circle of latitude (sphere).
inline DiscreteLoop random_smooth_loop(const Manifold& m, int n, std::mt19937_64& rng, double amp = 0.3) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    if (m.kind() != ManifoldKind::round_sphere) {
        const int nf = m.circle_factors();
        Mat c(nf, 5);
        for (auto& v : c.reshaped()) v = u(rng);
        return DiscreteLoop::from_angle_function(m, n, [&](double t) {
            Vec th(nf);
            for (int f = 0; f < nf; ++f) {
                th(f) = c(f, 0) * std::numbers::pi;
                for (int k = 1; k < 3; ++k)
                    th(f) += amp * (c(f, 2 * k - 1) * std::cos(2 * std::numbers::pi * k * t) +
                                    c(f, 2 * k) * std::sin(2 * std::numbers::pi * k * t));
            }
            return th;
        });
    }
    const Vec q0 = random_point(m, rng);
    const Vec a = random_tangent(m, q0, rng, 0.4);
    const Vec b = random_tangent(m, q0, rng, 0.4);
    Mat pts(m.ambient_dim(), n);
    for (int j = 0; j < n; ++j) {
        const double t = 2 * std::numbers::pi * j / n;
        pts.col(j) = m.exp(q0, std::cos(t) * a + std::sin(2 * t) * b);
    }
    return DiscreteLoop(m, pts);
}

inline LoopField random_smooth_field(const DiscreteLoop& x, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    const int d = x.manifold().ambient_dim();
    Mat c(d, 4);
    for (auto& v : c.reshaped()) v = g(rng);
    LoopField f{Mat(d, x.size())};
    for (int j = 0; j < x.size(); ++j) {
        const double t = 2 * std::numbers::pi * x.t(j);
        f.vectors.col(j) = c.col(0) + c.col(1) * std::cos(t) + c.col(2) * std::sin(t) + c.col(3) * std::cos(2 * t);
    }
    return tangent_part(x, f);
}

inline DiscreteLoop exp_scaled(const DiscreteLoop& x, const LoopField& xi, double h) { return exp_field(x, h * xi); }

} // namespace testsupport

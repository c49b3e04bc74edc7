#pragma once

#include <random>

#include "loopflow/loop.hpp"

namespace loopflow {

/// Random smooth loop: low Fourier modes in the angle chart on circles and
/// tori (plus the winding `component`), a wobbled small circle on spheres.
inline DiscreteLoop random_loop(const Manifold& m, int n, std::mt19937_64& rng, double amp = 0.3,
                                const std::vector<int>& component = {}) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    constexpr double two_pi = 2 * std::numbers::pi;
    if (m.kind() != ManifoldKind::round_sphere) {
        const int nf = m.circle_factors();
        Mat c(nf, 5);
        for (auto& v : c.reshaped()) v = u(rng);
        return DiscreteLoop::from_angle_function(m, n, [&](double t) {
            Vec th(nf);
            for (int f = 0; f < nf; ++f) {
                const int w = f < static_cast<int>(component.size()) ? component[static_cast<size_t>(f)] : 0;
                th(f) = c(f, 0) * std::numbers::pi + two_pi * w * t;
                for (int k = 1; k < 3; ++k)
                    th(f) += amp * (c(f, 2 * k - 1) * std::cos(two_pi * k * t) + c(f, 2 * k) * std::sin(two_pi * k * t));
            }
            return th;
        });
    }
    std::normal_distribution<double> g;
    Vec q0(m.ambient_dim());
    for (auto& v : q0) v = g(rng);
    q0 *= m.radius() / q0.norm();
    auto tangent = [&] {
        Vec v(m.ambient_dim());
        for (auto& c : v) c = g(rng);
        return Vec(amp * m.radius() * m.tangent_part(q0, v));
    };
    const Vec a = tangent(), b = tangent();
    Mat pts(m.ambient_dim(), n);
    for (int j = 0; j < n; ++j) {
        const double t = two_pi * j / n;
        pts.col(j) = m.exp(q0, std::cos(t) * a + std::sin(2 * t) * b);
    }
    return DiscreteLoop(m, pts);
}

/// Random smooth tangent field along x: a few ambient Fourier modes,
/// projected to the tangent spaces.
inline LoopField random_field(const DiscreteLoop& x, std::mt19937_64& rng) {
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

} // namespace loopflow

#include <gtest/gtest.h>

#include "loopflow/moduli.hpp"
#include "support.hpp"

using namespace loopflow;
using namespace testsupport;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEps = 0.1;

struct Gallery {
    Manifold m;
    Perturbation V;
    std::vector<CriticalPoint> crit;
};

Gallery make_circle(int n) {
    Gallery g{unit_circle(), Perturbation::cosine(kEps), {}};
    EnumerateOptions opt;
    opt.n_samples = n;
    opt.component = std::vector<int>{0};
    g.crit = enumerate_below(g.V, 1.0, g.m, opt).points;
    return g;
}

Gallery make_torus(int n) {
    Gallery g{torus2(), Perturbation::cosine(kEps, {1, 1}), {}};
    EnumerateOptions opt;
    opt.n_samples = n;
    opt.component = std::vector<int>{0, 0};
    g.crit = enumerate_below(g.V, 1.0, g.m, opt).points;
    return g;
}

const Gallery& circle32() {
    static const Gallery g = make_circle(32);
    return g;
}

const Gallery& torus32() {
    static const Gallery g = make_torus(32);
    return g;
}

const std::vector<ConnectingOrbit>& circle_orbits() {
    static const std::vector<ConnectingOrbit> o = [] {
        const auto& g = circle32();
        return enumerate_connecting(g.crit, 1, 0, build_chart(g.crit[1], g.V), g.V);
    }();
    return o;
}

Orientations default_orientations(size_t n) { return Orientations(n, 1); }

// Smooth bump in s times a fixed random smooth field, tangent on every slice.
CylinderTrajectory perturbed(const CylinderTrajectory& u, double scale, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const LoopField base = random_smooth_field(u.loops[0], rng);
    CylinderTrajectory out = u;
    const double s0 = u.monitors.front().s, s1 = u.monitors.back().s;
    for (size_t n = 0; n < u.size(); ++n) {
        const double w = std::sin(kPi * (u.monitors[n].s - s0) / (s1 - s0));
        LoopField xi = tangent_part(u.loops[n], LoopField{base.vectors * (scale * w * w)});
        out.loops[n] = exp_field(u.loops[n], xi);
    }
    return out;
}

// Window of the orbit between the capture balls of its endpoints.
CylinderTrajectory transit_window(const ConnectingOrbit& o, const std::vector<CriticalPoint>& crit, double radius) {
    const auto& t = o.trajectory;
    size_t a = 0, b = t.size() - 1;
    while (a < b && loop_distance(t.loops[a], crit[o.source].loop, LoopNorm::C0) < radius) ++a;
    while (b > a && loop_distance(t.loops[b], crit[o.target].loop, LoopNorm::C0) < radius) --b;
    return t.slice(a, b + 1);
}

} // namespace

TEST(Moduli, ChartOfPendulumSaddle) {
    const auto& g = circle32();
    ASSERT_EQ(g.crit.size(), 2u);
    const UnstableChart ch = build_chart(g.crit[1], g.V);
    EXPECT_EQ(ch.dim(), 1);
    EXPECT_NEAR(l2_norm(ch.directions[0]), 1.0, 1e-12);
    EXPECT_NEAR(ch.eps_seed, 1e-3 * 0.5, 1e-15);
    for (double c : {1.0, -1.0}) EXPECT_LT(action(ch.seed(Vec::Constant(1, c)), g.V), g.crit[1].action);
    try {
        build_chart(g.crit[0], g.V);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "index-zero");
    }
}

TEST(Moduli, ChartOfTorusMaximumIsTwoDimensional) {
    const auto& g = torus32();
    ASSERT_EQ(g.crit.size(), 4u);
    const UnstableChart ch = build_chart(g.crit[3], g.V);
    ASSERT_EQ(ch.dim(), 2);
    EXPECT_NEAR(inner(ch.directions[0], ch.directions[1]), 0.0, 1e-10);
    // The directions span the constant q1, q2 fields.
    for (const auto& v : ch.directions) EXPECT_NEAR(sup_norm(v), l2_norm(v), 1e-8);
}

TEST(Moduli, ShootingThePendulumSaddle) {
    const auto& g = circle32();
    const UnstableChart ch = build_chart(g.crit[1], g.V);
    ModuliControls ctl;
    const ShootResult a = shoot(ch, Vec::Constant(1, 1.0), g.V, g.crit, ctl);
    const ShootResult b = shoot(ch, Vec::Constant(1, -1.0), g.V, g.crit, ctl);
    ASSERT_EQ(a.status, "converged");
    ASSERT_EQ(b.status, "converged");
    EXPECT_EQ(*a.target, 0u);
    EXPECT_EQ(*b.target, 0u);
    // Same limit, opposite sides of the circle.
    EXPECT_NE(a.offset, b.offset);
    EXPECT_EQ(std::abs(a.offset[0] - b.offset[0]), 1);
    EXPECT_THROW(shoot(ch, Vec::Constant(1, 0.5), g.V, g.crit, ctl), Error);
}

TEST(Moduli, PendulumHasTwoOrbitsWithOppositeSigns) {
    const auto& g = circle32();
    const auto& orbits = circle_orbits();
    ASSERT_EQ(orbits.size(), 2u);
    const Orientations nu = default_orientations(g.crit.size());
    std::vector<int> signs;
    for (const auto& o : orbits) {
        EXPECT_EQ(o.source, 1u);
        EXPECT_EQ(o.target, 0u);
        EXPECT_NEAR(o.action_drop, 2 * kEps, 1e-9);
        EXPECT_LE(std::abs(o.energy - o.action_drop), 1e-3);
        EXPECT_EQ(o.trajectory.monitors[o.zero_slice].s, 0.0);
        signs.push_back(compute_sign(o, g.crit, g.V, nu));
    }
    EXPECT_EQ(signs[0], -signs[1]);
}

TEST(Moduli, SignIsAntisymmetricInEachEndpointOrientation) {
    const auto& g = circle32();
    const auto& o = circle_orbits()[0];
    Orientations nu = default_orientations(g.crit.size());
    double d0 = 0, d1 = 0, d2 = 0;
    const int s0 = compute_sign(o, g.crit, g.V, nu, {}, &d0);
    nu[1] = -1;
    const int s1 = compute_sign(o, g.crit, g.V, nu, {}, &d1);
    nu[1] = 1;
    nu[0] = -1;
    const int s2 = compute_sign(o, g.crit, g.V, nu, {}, &d2);
    EXPECT_EQ(s1, -s0);
    EXPECT_EQ(s2, -s0);
    EXPECT_EQ(d1, -d0);
    EXPECT_EQ(d2, -d0);
}

TEST(Moduli, SignIsStableUnderStepHalving) {
    const auto& g = circle32();
    const UnstableChart ch = build_chart(g.crit[1], g.V);
    const Orientations nu = default_orientations(g.crit.size());
    for (double h : {2e-3, 1e-3}) {
        ModuliControls ctl;
        ctl.flow.h_s = h;
        auto orbits = enumerate_connecting(g.crit, 1, 0, ch, g.V, ctl);
        ASSERT_EQ(orbits.size(), 2u);
        const auto& ref = circle_orbits();
        for (size_t i = 0; i < 2; ++i)
            EXPECT_EQ(compute_sign(orbits[i], g.crit, g.V, nu, ctl.flow), compute_sign(ref[i], g.crit, g.V, nu));
    }
}

TEST(Moduli, NormalizationIsIdempotent) {
    ConnectingOrbit o = circle_orbits()[1];
    const auto& g = circle32();
    const double c = 0.5 * (g.crit[1].action + g.crit[0].action);
    const ConnectingOrbit before = o;
    normalize(o, c);
    ASSERT_EQ(o.zero_slice, before.zero_slice);
    for (size_t i = 0; i < o.trajectory.size(); ++i) {
        EXPECT_EQ(o.trajectory.monitors[i].s, before.trajectory.monitors[i].s);
        EXPECT_EQ(o.trajectory.loops[i].points(), before.trajectory.loops[i].points());
    }
    // The normalized slice has action nearest c_*.
    EXPECT_NEAR(o.trajectory.monitors[o.zero_slice].action, c, 1e-3);
}

TEST(Moduli, IndexDifferenceIsChecked) {
    const auto& g = circle32();
    try {
        enumerate_connecting(g.crit, 1, 1, build_chart(g.crit[1], g.V), g.V);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "index-mismatch");
    }
}

TEST(Moduli, TorusOrbitsCancelInPairs) {
    const auto& g = torus32();
    const Orientations nu = default_orientations(g.crit.size());
    ModuliControls ctl;
    ctl.sweep_angles = 32;
    // Saddles (1, 2) to the minimum (0); the maximum (3) to both saddles.
    for (size_t s : {1u, 2u}) {
        const auto orbits = enumerate_connecting(g.crit, s, 0, build_chart(g.crit[s], g.V), g.V, ctl);
        ASSERT_EQ(orbits.size(), 2u) << "saddle " << s;
        int sum = 0;
        for (const auto& o : orbits) sum += compute_sign(o, g.crit, g.V, nu);
        EXPECT_EQ(sum, 0);
    }
    const UnstableChart top = build_chart(g.crit[3], g.V);
    const auto sweep = sweep_directions(top, g.crit, g.V, ctl);
    for (size_t s : {1u, 2u}) {
        const auto orbits = enumerate_connecting(g.crit, 3, s, top, g.V, ctl, &sweep);
        ASSERT_EQ(orbits.size(), 2u) << "max to saddle " << s;
        int sum = 0;
        for (const auto& o : orbits) {
            EXPECT_LE(std::abs(o.energy - o.action_drop), 1e-3 * std::max(1.0, o.action_drop));
            sum += compute_sign(o, g.crit, g.V, nu);
        }
        EXPECT_EQ(sum, 0);
    }
}

TEST(Moduli, RefinementFixesConvergedOrbit) {
    const auto& g = circle32();
    const auto& o = circle_orbits()[0];
    const auto w = transit_window(o, g.crit, 0.01);
    const RefineResult r = refine_trajectory(w, g.V);
    EXPECT_LE(r.correction_norm, 10 * FlowControls{}.tol_conv);
    EXPECT_LE(r.residual_before, 1e-10);
}

TEST(Moduli, RefinementContractsAndScalesLinearly) {
    const auto& g = circle32();
    const auto w = transit_window(circle_orbits()[0], g.crit, 0.01);
    std::vector<double> ratio;
    for (double scale : {4e-3, 2e-3, 1e-3}) {
        const RefineResult r = refine_trajectory(perturbed(w, scale, 5), g.V);
        EXPECT_LE(r.contraction, 0.2) << scale;
        ratio.push_back(r.correction_norm / r.residual_before);
    }
    for (double q : ratio) EXPECT_NEAR(q / ratio[0], 1.0, 0.3);
}

TEST(Moduli, RefinementRejectsLargeResidual) {
    const auto& g = circle32();
    const auto w = transit_window(circle_orbits()[0], g.crit, 0.01);
    RefineOptions opt;
    opt.delta0 = 1e-6;
    try {
        refine_trajectory(perturbed(w, 1e-2, 6), g.V, opt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "residual-too-large");
    }
}

TEST(Moduli, Ev0Separation) {
    const auto& orbits = circle_orbits();
    const double iota = 0.5;
    const Ev0Report r = ev0_injectivity(orbits, 0.1 * iota);
    EXPECT_TRUE(r.ok());
    EXPECT_GT(r.min_separation, 0.1 * iota);
    // The two orbits sit at the quarter points at mid-action: a diameter apart.
    EXPECT_NEAR(r.min_separation, 1.0 / kPi, 0.02);
    std::vector<ConnectingOrbit> dup = {orbits[0], orbits[0]};
    EXPECT_FALSE(ev0_injectivity(dup, 0.1 * iota).ok());
    EXPECT_TRUE(ev0_injectivity({orbits[0]}, 0.1 * iota).empty);
}

TEST(Moduli, UnstableRankEqualsMorseIndex) {
    const auto& t = torus32();
    for (const auto& cp : t.crit) EXPECT_EQ(unstable_rank(cp, t.V, 1.0).rank, cp.morse_index);
    const auto& c = circle32();
    EXPECT_EQ(unstable_rank(c.crit[1], c.V, 1.0).rank, 1);
}

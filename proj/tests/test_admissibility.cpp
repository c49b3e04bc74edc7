#include <gtest/gtest.h>

#include "loopflow/admissibility.hpp"
#include "support.hpp"

using namespace loopflow;
using namespace testsupport;

namespace {

constexpr double kEps = 0.1;

std::vector<CriticalPoint> with_actions(const std::vector<double>& actions) {
    std::vector<CriticalPoint> out;
    const Manifold m = unit_circle();
    for (double a : actions) {
        CriticalPoint c{DiscreteLoop::constant(m, m.from_angles(Vec::Zero(1)), 16)};
        c.action = a;
        out.push_back(std::move(c));
    }
    return out;
}

struct Pendulum {
    Manifold m = unit_circle();
    Perturbation V = Perturbation::cosine(kEps);
    std::vector<CriticalPoint> crit;
    double U_radius = 0.05 * 0.5;
};

const Pendulum& pendulum() {
    static const Pendulum p = [] {
        Pendulum p;
        EnumerateOptions opt;
        opt.component = std::vector<int>{0};
        p.crit = enumerate_below(p.V, 1.0, p.m, opt).points;
        return p;
    }();
    return p;
}

const std::vector<DiscreteLoop>& probes() {
    static const std::vector<DiscreteLoop> pr = [] {
        const auto& p = pendulum();
        const CriticalLevels L = critical_levels(p.crit, 1.0);
        return probe_loops(p.V, p.m, p.crit, p.U_radius, L.c_above);
    }();
    return pr;
}

DiscreteLoop circle_const(double q, int n = 64) {
    Vec th(1);
    th(0) = 2 * std::numbers::pi * q;
    return DiscreteLoop::constant(unit_circle(), unit_circle().from_angles(th), n);
}

} // namespace

TEST(Admissibility, GapBetweenCriticalValues) {
    const CriticalLevels L = critical_levels(with_actions({-kEps, kEps}), 0.0);
    EXPECT_DOUBLE_EQ(L.delta, kEps / 2);
    EXPECT_DOUBLE_EQ(L.a_minus(), -kEps / 2);
    EXPECT_DOUBLE_EQ(L.a_plus(), kEps / 2);
    EXPECT_FALSE(L.above_fallback);
}

TEST(Admissibility, FallbackAboveTheLastCriticalValue) {
    const CriticalLevels L = critical_levels(with_actions({0.2}), 1.0);
    EXPECT_TRUE(L.above_fallback);
    EXPECT_DOUBLE_EQ(L.c_above, 1.8);
    EXPECT_DOUBLE_EQ(L.delta, 0.4);
}

TEST(Admissibility, CriticalLevelIsRejected) {
    try {
        critical_levels(with_actions({-kEps, kEps}), kEps);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "a-is-critical");
    }
}

TEST(Admissibility, ProbesAreOutsideUAndBelowTheUpperValue) {
    const auto& p = pendulum();
    const auto& pr = probes();
    ASSERT_EQ(pr.size(), 512u);
    const CriticalLevels L = critical_levels(p.crit, 1.0);
    for (const auto& y : pr) {
        EXPECT_FALSE(in_neighbourhood(y, p.crit, p.U_radius));
        EXPECT_LT(action(y, p.V), L.c_above);
    }
}

TEST(Admissibility, RadiusIsHalfTheSmallerConstant) {
    const auto& p = pendulum();
    const AdmissibleRadius R = admissible_radius(p.V, 1.0, p.crit, p.U_radius, probes());
    EXPECT_DOUBLE_EQ(R.delta, 0.45);
    EXPECT_GT(R.kappa, 0.0);
    EXPECT_DOUBLE_EQ(R.r, 0.5 * std::min(R.delta, R.kappa));
    EXPECT_EQ(R.probes_used, 512u);
}

TEST(Admissibility, NearCriticalProbeMakesKappaSmall) {
    const auto& p = pendulum();
    auto pr = probes();
    // Just outside the U ball around the minimum: |grad| ~ 2 pi eps sin(2 pi q).
    const double q = 0.03;
    pr.push_back(circle_const(q));
    const AdmissibleRadius R = admissible_radius(p.V, 1.0, p.crit, p.U_radius, pr);
    const double g = 2 * std::numbers::pi * kEps * std::sin(2 * std::numbers::pi * q);
    EXPECT_LE(R.kappa, g * (1 + 1e-9));
    EXPECT_LE(R.r, R.kappa / 2);
}

TEST(Admissibility, ZeroPerturbationSatisfiesAllInclusions) {
    const auto& p = pendulum();
    const SublevelReport r = check_sublevel_inclusions(p.V, Perturbation::zero(), critical_levels(p.crit, 1.0), probes());
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(r.max_abs_v, 0.0);
}

TEST(Admissibility, SmallBumpOutsideUPreservesCriticalSet) {
    const auto& p = pendulum();
    const AdmissibleRadius R = admissible_radius(p.V, 1.0, p.crit, p.U_radius, probes());
    // Bump centred at the quarter-turn constant loop, away from both points.
    const DiscreteLoop c = circle_const(0.25);
    std::mt19937_64 rng(3);
    const Perturbation bump = Perturbation::bump(c, random_smooth_field(c, rng), 10);
    const Perturbation v = make_combo({{1.0, bump}}, probes());
    const double lambda = R.r / v.norm();
    const Perturbation vr = make_combo({{lambda, bump}}, probes());
    ASSERT_LE(vr.norm(), R.r * (1 + 1e-12));
    for (const auto& x : p.crit) EXPECT_TRUE(vr.supported_outside(x.loop, p.U_radius));

    const SublevelReport s = check_sublevel_inclusions(p.V, vr, R.levels, probes());
    EXPECT_TRUE(s.ok());
    EXPECT_LT(s.max_abs_v, R.delta);

    EnumerateOptions opt;
    opt.component = std::vector<int>{0};
    const auto moved = enumerate_below(Perturbation::sum(p.V, vr), 1.0, p.m, opt).points;
    ASSERT_EQ(moved.size(), p.crit.size());
    for (size_t i = 0; i < moved.size(); ++i) {
        EXPECT_EQ(moved[i].morse_index, p.crit[i].morse_index);
        EXPECT_NEAR(moved[i].action, p.crit[i].action, 1e-9);
        EXPECT_LE(loop_distance(moved[i].loop, p.crit[i].loop, LoopNorm::C0), 1e-6);
    }
}

TEST(Admissibility, OversizedPerturbationBreaksAnInclusion) {
    const auto& p = pendulum();
    const CriticalLevels L = critical_levels(p.crit, 1.0);
    // A constant generator has (V0) constant exactly |value|, so a norm of
    // 2 delta shifts every action by 2 delta.
    const Perturbation v = make_combo({{-2 * L.delta, Perturbation::constant(1.0)}}, probes());
    ASSERT_DOUBLE_EQ(v.norm(), 2 * L.delta);
    const SublevelReport r = check_sublevel_inclusions(p.V, v, L, probes());
    EXPECT_FALSE(r.norm_below_delta);
    EXPECT_FALSE(r.ok());
    // Every probe with S_V in (c_k - delta, c_k] is pushed above a_-.
    EXPECT_GT(r.failures[0], 0u);
}

TEST(Admissibility, CriticalSetsMatchRegardlessOfOrder) {
    const auto V = Perturbation::cosine(kEps, {1, 1});
    EnumerateOptions opt;
    opt.n_samples = 16;
    opt.component = std::vector<int>{0, 0};
    const auto crit = enumerate_below(V, 1.0, torus2(), opt).points;
    ASSERT_EQ(crit.size(), 4u);
    auto swapped = crit;
    std::swap(swapped[1], swapped[2]); // the two saddles share action 0
    EXPECT_TRUE(same_critical_set(crit, swapped, 1e-9));
    EXPECT_FALSE(same_critical_set(crit, {crit[0], crit[1], crit[2]}, 1e-9));
    auto moved = crit;
    moved[3].action += 1e-3;
    EXPECT_FALSE(same_critical_set(crit, moved, 1e-6));
    EXPECT_FALSE(same_critical_set(crit, {crit[0], crit[1], crit[1], crit[3]}, 1e-9));
}

TEST(Sampling, SphereLoopsLieOnTheSphere) {
    const Manifold s = sphere2();
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
        const DiscreteLoop x = random_loop(s, 32, rng);
        for (int j = 0; j < x.size(); ++j) EXPECT_NEAR(x.point(j).norm(), 1.0, 1e-12);
    }
}

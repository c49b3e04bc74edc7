#include <gtest/gtest.h>

#include "loopflow/linearized.hpp"
#include "support.hpp"

using namespace loopflow;
using namespace testsupport;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEps = 0.1;

DiscreteLoop circle_const(int n, double q) {
    Vec th(1);
    th(0) = 2 * kPi * q;
    return DiscreteLoop::constant(unit_circle(), unit_circle().from_angles(th), n);
}

CylinderTrajectory pendulum_orbit(int n, double h, double s_max = 40.0) {
    FlowControls c;
    c.h_s = h;
    c.s_max = s_max;
    return integrate(circle_const(n, 0.5 - 5e-4), Perturbation::cosine(kEps), c);
}

// Random field supported on slices [a, b), tangent along u.
CylinderField random_compact_field(const CylinderTrajectory& u, size_t a, size_t b, std::mt19937_64& rng) {
    CylinderField f = CylinderField::zero(u);
    for (size_t i = a; i < b; ++i) f.slices[i] = random_smooth_field(u.loops[i], rng);
    return f;
}

const std::vector<CriticalPoint>& torus_points() {
    static const std::vector<CriticalPoint> pts = [] {
        EnumerateOptions opt;
        opt.component = std::vector<int>{0, 0};
        opt.n_samples = 32;
        return enumerate_below(Perturbation::cosine(kEps, {1, 1}), 1.0, torus2(), opt).points;
    }();
    return pts;
}

} // namespace

TEST(Linearized, ZeroFieldMapsToZero) {
    const auto u = pendulum_orbit(32, 1e-3, 0.2);
    const CylinderField z = CylinderField::zero(u);
    const auto V = Perturbation::cosine(kEps);
    EXPECT_EQ(cylinder_l2(apply_Du(u, V, z)), 0.0);
    EXPECT_EQ(cylinder_l2(apply_Du_star(u, V, z)), 0.0);
}

TEST(Linearized, DuIsLinear) {
    std::mt19937_64 rng(41);
    const auto V = Perturbation::cosine(kEps, {1, 1});
    FlowControls c;
    c.s_max = 0.1;
    c.tol_conv = 0.0;
    const auto u = integrate(random_smooth_loop(torus2(), 32, rng, 0.2), V, c);
    const CylinderField a = random_compact_field(u, 0, u.size(), rng), b = random_compact_field(u, 0, u.size(), rng);
    CylinderField comb = 2.0 * a;
    comb += -3.0 * b;
    CylinderField lhs = apply_Du(u, V, comb);
    CylinderField rhs = 2.0 * apply_Du(u, V, a);
    rhs += -3.0 * apply_Du(u, V, b);
    CylinderField diff = lhs;
    diff += -1.0 * rhs;
    EXPECT_LE(cylinder_l2(diff), 1e-12 * cylinder_l2(lhs));
}

TEST(Linearized, GridMismatchIsRejected) {
    const auto u = pendulum_orbit(32, 1e-3, 0.05);
    CylinderField f = CylinderField::zero(u);
    f.slices.pop_back();
    try {
        apply_Du(u, Perturbation::cosine(kEps), f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "grid-mismatch");
    }
}

TEST(Linearized, StationaryKernelResidualIsFirstOrder) {
    const auto V = Perturbation::cosine(kEps);
    const CriticalPoint x = newton_solve(circle_const(64, 0.5), V);
    ASSERT_EQ(x.morse_index, 1);
    std::vector<double> res;
    for (double h : {4e-3, 2e-3, 1e-3}) {
        const auto u = stationary_cylinder(x.loop, V, -2.0, h);
        const auto basis = stationary_kernel_basis(x, -2.0, h);
        ASSERT_EQ(basis.size(), 1u);
        res.push_back(window_l2(apply_Du(u, V, basis[0])));
    }
    EXPECT_GE(std::log2(res[0] / res[1]), 0.9);
    EXPECT_GE(std::log2(res[1] / res[2]), 0.9);
}

TEST(Linearized, FlowDerivativeIsApproximatelyInKernel) {
    const auto V = Perturbation::cosine(kEps);
    std::vector<double> rel;
    for (double h : {2e-3, 1e-3, 5e-4}) {
        const auto u = pendulum_orbit(32, h, 6.0);
        const CylinderField d = s_derivative(u);
        rel.push_back(window_l2(apply_Du(u, V, d)) / window_l2(d));
    }
    EXPECT_LT(rel[1], rel[0]);
    EXPECT_LT(rel[2], rel[1]);
    EXPECT_LE(rel[2], 1e-2);
}

TEST(Linearized, DiscreteAdjointness) {
    std::mt19937_64 rng(42);
    const auto V = Perturbation::cosine(kEps, {1, 1});
    FlowControls c;
    c.s_max = 0.2;
    c.tol_conv = 0.0;
    const auto u = integrate(random_smooth_loop(torus2(), 32, rng, 0.2), V, c);
    for (int i = 0; i < 5; ++i) {
        const CylinderField a = random_compact_field(u, 20, 150, rng), b = random_compact_field(u, 40, 180, rng);
        const double lhs = cylinder_inner(apply_Du(u, V, a), b), rhs = cylinder_inner(a, apply_Du_star(u, V, b));
        EXPECT_LE(std::abs(lhs - rhs), 1e-2 * std::max(1.0, std::abs(lhs)));
        EXPECT_LE(std::abs(lhs - rhs), 1e-9 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(Linearized, AdjointIsReflectedOperator) {
    std::mt19937_64 rng(43);
    const auto V = Perturbation::cosine(kEps, {1, 1});
    FlowControls c;
    c.s_max = 0.1;
    c.tol_conv = 0.0;
    const auto u = integrate(random_smooth_loop(torus2(), 32, rng, 0.2), V, c);
    const CylinderField xi = random_compact_field(u, 0, u.size(), rng);
    CylinderTrajectory ur = reversed(u);
    const CylinderField lhs = apply_Du_star(u, V, xi);
    CylinderField rhs = reversed(apply_Du(ur, V, reversed(xi)));
    rhs += -1.0 * lhs;
    EXPECT_LE(cylinder_l2(rhs), 1e-12 * cylinder_l2(lhs));
}

TEST(Linearized, SpectralFlowOfStationaryFamilyIsZero) {
    const auto V = Perturbation::cosine(kEps);
    const CriticalPoint x = newton_solve(circle_const(64, 0.5), V);
    const auto r = spectral_flow(stationary_cylinder(x.loop, V, -1.0, 1e-2), V);
    EXPECT_EQ(r.flow, 0);
    EXPECT_TRUE(r.crossings.empty());
    EXPECT_EQ(r.index_minus, 1);
}

TEST(Linearized, SpectralFlowOfPendulumOrbit) {
    const auto V = Perturbation::cosine(kEps);
    const auto u = pendulum_orbit(64, 1e-3);
    ASSERT_TRUE(u.converged);
    const auto r = spectral_flow(u, V);
    EXPECT_EQ(r.flow, 1);
    EXPECT_EQ(r.index_minus - r.index_plus, 1);
    ASSERT_EQ(r.crossings.size(), 1u);
    EXPECT_EQ(r.crossings[0].direction, 1);
    EXPECT_EQ(r.crossings[0].eigen_index, 0);
    // The crossing sits where the constant loop passes the quarter turn.
    const auto rr = spectral_flow(reversed(u), V);
    EXPECT_EQ(rr.flow, -1);
    ASSERT_EQ(rr.crossings.size(), 1u);
    EXPECT_NEAR(rr.crossings[0].s, -r.crossings[0].s, 2e-3);
}

TEST(Linearized, DegenerateEndpointIsRejected) {
    const DiscreteLoop x = DiscreteLoop::constant(torus2(), torus2().from_angles(Vec::Zero(2)), 32);
    try {
        spectral_flow(stationary_cylinder(x, Perturbation::zero(), -0.1, 1e-2), Perturbation::zero());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "endpoint-degenerate");
    }
}

TEST(Linearized, AmbiguousTrackingIsReported) {
    // Two identical eigenvalues cross zero together.
    OperatorFamily fam;
    fam.s_grid = {0.0, 1.0};
    Vec a(3), b(3);
    a << -1.0, -1.0, 2.0;
    b << 1.0, 1.0, 2.0;
    fam.eigenvalues = {a, b};
    fam.slices = {Mat(a.asDiagonal()), Mat(b.asDiagonal())};
    try {
        spectral_flow(fam, 1e-8);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "tracking-ambiguous");
    }
}

TEST(Linearized, KernelBasisMatchesMorseIndex) {
    for (const auto& cp : torus_points()) {
        const auto basis = stationary_kernel_basis(cp, -1.0, 1e-2);
        EXPECT_EQ(static_cast<int>(basis.size()), cp.morse_index);
        // Per-slice orthogonality.
        if (basis.size() == 2)
            for (size_t i = 0; i < basis[0].size(); i += 10)
                EXPECT_LE(std::abs(inner(basis[0].slices[i], basis[1].slices[i])),
                          1e-10 * l2_norm(basis[0].slices[i]) * l2_norm(basis[1].slices[i]));
    }
}

TEST(Linearized, KernelDimensionEqualsMorseIndex) {
    const auto V = Perturbation::cosine(kEps, {1, 1});
    for (const auto& cp : torus_points()) EXPECT_EQ(kernel_dimension(cp, V, 5.0, 1e-3), cp.morse_index);
    const auto Vc = Perturbation::cosine(kEps);
    EXPECT_EQ(kernel_dimension(newton_solve(circle_const(64, 0.5), Vc), Vc, 5.0, 1e-3), 1);
    EXPECT_EQ(kernel_dimension(newton_solve(circle_const(64, 0.0), Vc), Vc, 5.0, 1e-3), 0);
}

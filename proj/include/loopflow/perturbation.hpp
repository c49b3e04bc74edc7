#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "loopflow/loop.hpp"

namespace loopflow {

/// C-infinity plateau cutoff: 1 for |r| <= inner, 0 for |r| >= outer, built
/// from f(s) = exp(-1/s).
class Cutoff {
public:
    Cutoff(double inner, double outer) : inner_(inner), outer_(outer) {
        require(inner > 0 && outer > inner, "invalid-argument", "cutoff needs 0 < inner < outer", ErrorKind::usage);
    }

    double operator()(double r) const {
        const double a = std::abs(r);
        if (a <= inner_) return 1.0;
        if (a >= outer_) return 0.0;
        const double s = (a - inner_) / (outer_ - inner_);
        const double A = f(1.0 - s), B = f(s);
        return A / (A + B);
    }

    double derivative(double r) const {
        const double a = std::abs(r);
        if (a <= inner_ || a >= outer_) return 0.0;
        const double width = outer_ - inner_;
        const double s = (a - inner_) / width;
        const double A = f(1.0 - s), B = f(s);
        const double dA = -df(1.0 - s), dB = df(s);
        const double d = (dA * B - A * dB) / ((A + B) * (A + B)) / width;
        return r < 0 ? -d : d;
    }

    double inner() const { return inner_; }
    double outer() const { return outer_; }

    /// The rho of the bump construction: plateau [-1,1], support [-4,4].
    static Cutoff rho() { return {1.0, 4.0}; }
    /// The beta cutoff: plateau (iota/2)^2, support iota^2.
    static Cutoff beta(double iota) { return {0.25 * iota * iota, iota * iota}; }

private:
    static double f(double s) { return s > 0 ? std::exp(-1.0 / s) : 0.0; }
    static double df(double s) { return s > 0 ? std::exp(-1.0 / s) / (s * s) : 0.0; }

    double inner_, outer_;
};

enum class GeometricFormula { cosine, linear, constant };

/// Closed-form potential V(t, q).
///   cosine:   amplitude * sum_f cos(2 pi (m_f q_f - w t)), q_f = angle_f / 2pi
///   linear:   amplitude * <direction, q>
///   constant: amplitude
struct GeometricPotential {
    GeometricFormula formula = GeometricFormula::cosine;
    double amplitude = 0.0;
    std::vector<int> frequencies; // per circle factor, default 1
    int time_frequency = 0;
    Vec direction;                // ambient vector for the linear formula

    int frequency(int f) const {
        return frequencies.empty() ? 1 : frequencies.at(static_cast<size_t>(f));
    }

    double value(const Manifold& m, double t, const Vec& q) const {
        switch (formula) {
        case GeometricFormula::constant: return amplitude;
        case GeometricFormula::linear: return amplitude * direction.dot(q);
        case GeometricFormula::cosine: {
            const Vec th = m.angles(q);
            double v = 0.0;
            for (int f = 0; f < th.size(); ++f) v += std::cos(frequency(f) * th(f) - 2 * std::numbers::pi * time_frequency * t);
            return amplitude * v;
        }
        }
        return 0.0;
    }

    Vec gradient(const Manifold& m, double t, const Vec& q) const {
        switch (formula) {
        case GeometricFormula::constant: return Vec::Zero(q.size());
        case GeometricFormula::linear: return amplitude * m.tangent_part(q, direction);
        case GeometricFormula::cosine: {
            const Vec th = m.angles(q);
            const Mat B = m.tangent_basis(q);
            Vec g = Vec::Zero(q.size());
            for (int f = 0; f < th.size(); ++f) {
                const double arg = frequency(f) * th(f) - 2 * std::numbers::pi * time_frequency * t;
                g += (-amplitude * frequency(f) * std::sin(arg) / m.radius()) * B.col(f);
            }
            return g;
        }
        }
        return Vec::Zero(q.size());
    }

    /// Covariant Hessian in the given orthonormal tangent basis.
    Mat hessian(const Manifold& m, double t, const Vec& q, const Mat& basis) const {
        if (formula == GeometricFormula::cosine) {
            const Mat B = m.tangent_basis(q);
            const Mat C = B.transpose() * basis;
            return C.transpose() * factor_hessian(m, t, q) * C;
        }
        const auto n = basis.cols();
        Mat H = Mat::Zero(n, n);
        switch (formula) {
        case GeometricFormula::constant: break;
        case GeometricFormula::linear:
            for (Eigen::Index a = 0; a < n; ++a)
                for (Eigen::Index b = 0; b < n; ++b)
                    H(a, b) = amplitude * direction.dot(m.second_fundamental_form(q, basis.col(a), basis.col(b)));
            break;
        case GeometricFormula::cosine: break;
        }
        return H;
    }

    /// Hessian of the cosine formula in the factor-aligned tangent basis.
    Mat factor_hessian(const Manifold& m, double t, const Vec& q) const {
        const Vec th = m.angles(q);
        const double r2 = m.radius() * m.radius();
        Mat H = Mat::Zero(m.dim(), m.dim());
        for (int f = 0; f < th.size(); ++f) {
            const double arg = frequency(f) * th(f) - 2 * std::numbers::pi * time_frequency * t;
            H(f, f) = -amplitude * frequency(f) * frequency(f) * std::cos(arg) / r2;
        }
        return H;
    }
};

/// Bump perturbation rho(k^2 |x - center|^2_{L2}) * int beta(|xi|^2) <xi, eta> dt
/// with xi = log_{center(t)} x(t).
struct BumpPotential {
    DiscreteLoop center;
    LoopField direction;
    int k = 1;

    double support_radius() const { return 2.0 / k; }
};

class Perturbation;

struct ComboTerm {
    double coefficient = 0.0;
    std::shared_ptr<const Perturbation> generator;
    double constant = 1.0; // C_l of the weighted norm
};

struct ComboPotential {
    std::vector<ComboTerm> terms;
};

/// A perturbation of the action: a geometric potential, a bump, or a finite
/// linear combination with the weighted norm sum |lambda_l| C_l.
class Perturbation {
public:
    using Variant = std::variant<GeometricPotential, BumpPotential, ComboPotential>;

    Perturbation() : v_(ComboPotential{}) {}
    explicit Perturbation(Variant v) : v_(std::move(v)) {}

    static Perturbation zero() { return {}; }

    static Perturbation cosine(double amplitude, std::vector<int> freq = {}, int time_freq = 0) {
        GeometricPotential g;
        g.formula = GeometricFormula::cosine;
        g.amplitude = amplitude;
        g.frequencies = std::move(freq);
        g.time_frequency = time_freq;
        return Perturbation(g);
    }

    static Perturbation linear(double amplitude, Vec direction) {
        GeometricPotential g;
        g.formula = GeometricFormula::linear;
        g.amplitude = amplitude;
        g.direction = std::move(direction);
        return Perturbation(g);
    }

    static Perturbation constant(double value) {
        GeometricPotential g;
        g.formula = GeometricFormula::constant;
        g.amplitude = value;
        return Perturbation(g);
    }

    static Perturbation bump(DiscreteLoop center, LoopField direction, int k) {
        check_same_grid(center, direction);
        require(k >= 1, "invalid-argument", "bump index k must be positive", ErrorKind::usage);
        LoopField eta = tangent_part(center, direction);
        return Perturbation(BumpPotential{std::move(center), std::move(eta), k});
    }

    static Perturbation combo(std::vector<ComboTerm> terms) {
        double prev = 1.0;
        for (auto& t : terms) {
            require(t.generator != nullptr, "invalid-argument", "combo term without generator", ErrorKind::usage);
            require(t.constant >= prev, "invalid-argument", "combo constants must be monotone and >= 1",
                    ErrorKind::usage);
            prev = t.constant;
        }
        return Perturbation(ComboPotential{std::move(terms)});
    }

    /// V + v with unit weights.
    static Perturbation sum(const Perturbation& a, const Perturbation& b) {
        return combo({{1.0, std::make_shared<Perturbation>(a), 1.0}, {1.0, std::make_shared<Perturbation>(b), 1.0}});
    }

    const Variant& variant() const { return v_; }
    bool is_bump() const { return std::holds_alternative<BumpPotential>(v_); }
    bool is_combo() const { return std::holds_alternative<ComboPotential>(v_); }

    /// Weighted norm sum |lambda_l| C_l; a lone generator counts with weight 1.
    double norm() const {
        if (const auto* c = std::get_if<ComboPotential>(&v_)) {
            double s = 0.0;
            for (const auto& t : c->terms) s += std::abs(t.coefficient) * t.constant;
            return s;
        }
        return 1.0;
    }

    /// True when V(x) = int V_t(x(t)) dt so the Hessian is block diagonal.
    bool pointwise() const {
        return std::visit(
            [](const auto& p) -> bool {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GeometricPotential>) return true;
                else if constexpr (std::is_same_v<T, BumpPotential>) return false;
                else {
                    for (const auto& t : p.terms)
                        if (!t.generator->pointwise()) return false;
                    return true;
                }
            },
            v_);
    }

    double eval(const DiscreteLoop& x) const {
        return std::visit(
            [&](const auto& p) -> double {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GeometricPotential>) {
                    double s = 0.0;
                    for (int j = 0; j < x.size(); ++j) s += p.value(x.manifold(), x.t(j), x.point(j));
                    return s / x.size();
                } else if constexpr (std::is_same_v<T, BumpPotential>) {
                    check_same_grid(x, p.center);
                    const double r = bump_radius2(p, x);
                    const double rho = Cutoff::rho()(r * p.k * p.k);
                    if (rho == 0.0) return 0.0;
                    return rho * bump_integral(p, x);
                } else {
                    double s = 0.0;
                    for (const auto& t : p.terms) s += t.coefficient * t.generator->eval(x);
                    return s;
                }
            },
            v_);
    }

    /// L^2 gradient sampled on the grid.
    LoopField gradient(const DiscreteLoop& x) const {
        return std::visit(
            [&](const auto& p) -> LoopField {
                using T = std::decay_t<decltype(p)>;
                LoopField g = LoopField::zero(x);
                if constexpr (std::is_same_v<T, GeometricPotential>) {
                    for (int j = 0; j < x.size(); ++j) g.vectors.col(j) = p.gradient(x.manifold(), x.t(j), x.point(j));
                } else if constexpr (std::is_same_v<T, BumpPotential>) {
                    check_same_grid(x, p.center);
                    const Manifold& m = x.manifold();
                    const double k2 = static_cast<double>(p.k) * p.k;
                    const double r = bump_radius2(p, x);
                    const Cutoff rho = Cutoff::rho();
                    const double rv = rho(r * k2), dr = rho.derivative(r * k2);
                    if (rv == 0.0 && dr == 0.0) return g;
                    const double integral = dr != 0.0 ? bump_integral(p, x) : 0.0;
                    const Cutoff beta = Cutoff::beta(m.injectivity_radius());
                    for (int j = 0; j < x.size(); ++j) {
                        Vec gj = (2.0 * k2 * dr * integral) *
                                 m.tangent_part(x.point(j), x.point(j) - p.center.point(j));
                        if (rv != 0.0) {
                            const auto xi = bump_log(p, m, j, x.point(j));
                            if (xi) {
                                const double b2 = xi->squaredNorm();
                                const Vec eta = p.direction.vectors.col(j);
                                const Vec z = 2.0 * beta.derivative(b2) * xi->dot(eta) * *xi + beta(b2) * eta;
                                gj += rv * m.log_adjoint(p.center.point(j), x.point(j), z);
                            }
                        }
                        g.vectors.col(j) = gj;
                    }
                } else {
                    for (const auto& t : p.terms) g.vectors += t.coefficient * t.generator->gradient(x).vectors;
                }
                return g;
            },
            v_);
    }

    /// Covariant Hessian applied to a tangent field. Closed form for geometric
    /// potentials; centered difference of the transported gradient otherwise.
    LoopField hessian_apply(const DiscreteLoop& x, const LoopField& xi, double fd_step = 1e-5) const {
        check_same_grid(x, xi);
        if (const auto* g = std::get_if<GeometricPotential>(&v_)) {
            LoopField out = LoopField::zero(x);
            for (int j = 0; j < x.size(); ++j) {
                const Mat B = x.manifold().tangent_basis(x.point(j));
                const Mat H = g->hessian(x.manifold(), x.t(j), x.point(j), B);
                out.vectors.col(j) = B * (H * (B.transpose() * xi.vectors.col(j)));
            }
            return out;
        }
        if (const auto* c = std::get_if<ComboPotential>(&v_)) {
            LoopField out = LoopField::zero(x);
            for (const auto& t : c->terms) out.vectors += t.coefficient * t.generator->hessian_apply(x, xi, fd_step).vectors;
            return out;
        }
        const Manifold& m = x.manifold();
        const double scale = std::max(1.0, sup_norm(xi));
        const double h = fd_step / scale;
        LoopField out = LoopField::zero(x);
        std::vector<Mat> transports[2];
        Mat pts[2];
        for (int side = 0; side < 2; ++side) {
            const double tau = side == 0 ? h : -h;
            pts[side].resize(x.points().rows(), x.size());
            for (int j = 0; j < x.size(); ++j) {
                const ExpResult e = m.exp_and_transport(x.point(j), tau * xi.vectors.col(j));
                pts[side].col(j) = e.point;
                transports[side].push_back(e.transport);
            }
        }
        const LoopField gp = gradient(DiscreteLoop(m, pts[0]));
        const LoopField gm = gradient(DiscreteLoop(m, pts[1]));
        for (int j = 0; j < x.size(); ++j) {
            const size_t js = static_cast<size_t>(j);
            const Vec d = transports[0][js].transpose() * gp.vectors.col(j) - transports[1][js].transpose() * gm.vectors.col(j);
            out.vectors.col(j) = m.tangent_part(x.point(j), d / (2 * h));
        }
        return out;
    }

    /// n x n Hessian block at sample j in the given basis (pointwise only).
    Mat pointwise_hessian(const DiscreteLoop& x, int j, const Mat& basis) const {
        if (const auto* g = std::get_if<GeometricPotential>(&v_)) return g->hessian(x.manifold(), x.t(j), x.point(j), basis);
        if (const auto* c = std::get_if<ComboPotential>(&v_)) {
            Mat H = Mat::Zero(basis.cols(), basis.cols());
            for (const auto& t : c->terms) H += t.coefficient * t.generator->pointwise_hessian(x, j, basis);
            return H;
        }
        throw Error("not-pointwise", "bump perturbations have no pointwise Hessian", ErrorKind::usage);
    }

    /// True when every bump in the expansion vanishes on the L^2 ball B(y, radius).
    bool supported_outside(const DiscreteLoop& y, double radius) const {
        return std::visit(
            [&](const auto& p) -> bool {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GeometricPotential>) return p.amplitude == 0.0;
                else if constexpr (std::is_same_v<T, BumpPotential>)
                    return loop_distance(p.center, y, LoopNorm::L2) >= p.support_radius() + radius;
                else {
                    for (const auto& t : p.terms)
                        if (t.coefficient != 0.0 && !t.generator->supported_outside(y, radius)) return false;
                    return true;
                }
            },
            v_);
    }

private:
    static double bump_radius2(const BumpPotential& p, const DiscreteLoop& x) {
        const double d = loop_distance(x, p.center, LoopNorm::L2);
        return d * d;
    }

    static std::optional<Vec> bump_log(const BumpPotential& p, const Manifold& m, int j, const Vec& q) {
        try {
            Vec xi = m.log(p.center.point(j), q);
            if (xi.norm() >= m.injectivity_radius()) return std::nullopt;
            return xi;
        } catch (const Error&) {
            return std::nullopt;
        }
    }

    static double bump_integral(const BumpPotential& p, const DiscreteLoop& x) {
        const Manifold& m = x.manifold();
        const Cutoff beta = Cutoff::beta(m.injectivity_radius());
        double s = 0.0;
        for (int j = 0; j < x.size(); ++j) {
            const auto xi = bump_log(p, m, j, x.point(j));
            if (!xi) continue;
            s += beta(xi->squaredNorm()) * xi->dot(p.direction.vectors.col(j));
        }
        return s / x.size();
    }

    Variant v_;
};

struct V0Bounds {
    double sup_value = 0.0;
    double sup_gradient = 0.0;
};

/// Empirical (V0) maxima of |V| and |grad V|_inf over a sample of loops.
inline V0Bounds v0_bounds(const Perturbation& V, const std::vector<DiscreteLoop>& sample) {
    require(!sample.empty(), "invalid-argument", "v0_bounds needs a nonempty sample", ErrorKind::usage);
    V0Bounds b;
    for (const auto& x : sample) {
        b.sup_value = std::max(b.sup_value, std::abs(V.eval(x)));
        b.sup_gradient = std::max(b.sup_gradient, sup_norm(V.gradient(x)));
    }
    return b;
}

/// Norm constants C_l: (V0) constant of each generator rounded up to a power
/// of two, at least 1, made monotone by running maxima.
inline std::vector<double> norm_constants(const std::vector<Perturbation>& generators,
                                          const std::vector<DiscreteLoop>& sample) {
    std::vector<double> c;
    double running = 1.0;
    for (const auto& g : generators) {
        const V0Bounds b = v0_bounds(g, sample);
        const double raw = b.sup_value + b.sup_gradient;
        const double pow2 = raw > 0 ? std::exp2(std::ceil(std::log2(raw))) : 1.0;
        running = std::max(running, pow2);
        c.push_back(running);
    }
    return c;
}

/// Combination sum lambda_l V_l with constants calibrated on `sample`.
inline Perturbation make_combo(const std::vector<std::pair<double, Perturbation>>& terms,
                               const std::vector<DiscreteLoop>& sample) {
    std::vector<Perturbation> gens;
    for (const auto& t : terms) gens.push_back(t.second);
    const auto c = norm_constants(gens, sample);
    std::vector<ComboTerm> out;
    for (size_t i = 0; i < terms.size(); ++i)
        out.push_back({terms[i].first, std::make_shared<Perturbation>(terms[i].second), c[i]});
    return Perturbation::combo(std::move(out));
}

} // namespace loopflow

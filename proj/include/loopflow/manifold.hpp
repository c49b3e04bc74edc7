#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "loopflow/error.hpp"

namespace loopflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ManifoldKind { circle, flat_torus, round_sphere };

inline std::string to_string(ManifoldKind kind) {
    switch (kind) {
    case ManifoldKind::circle: return "circle";
    case ManifoldKind::flat_torus: return "flat_torus";
    case ManifoldKind::round_sphere: return "round_sphere";
    }
    return "unknown";
}

/// Catalogue entry. `scale` is the embedding radius for circle and sphere and
/// the circumference of every circle factor for the flat torus.
struct ManifoldSpec {
    ManifoldKind kind = ManifoldKind::circle;
    int intrinsic_dim = 1;
    int ambient_dim = 2;
    double scale = 1.0;

    static ManifoldSpec circle(double radius) { return {ManifoldKind::circle, 1, 2, radius}; }
    static ManifoldSpec flat_torus(int dim, double circumference = 1.0) {
        return {ManifoldKind::flat_torus, dim, 2 * dim, circumference};
    }
    static ManifoldSpec round_sphere(int dim, double radius = 1.0) {
        return {ManifoldKind::round_sphere, dim, dim + 1, radius};
    }

    bool operator==(const ManifoldSpec&) const = default;
};

/// Bilinear map T_qM x T_qM -> R^d stored by its values on an orthonormal
/// tangent basis.
class BilinearMap {
public:
    BilinearMap() = default;
    BilinearMap(Mat basis, std::vector<Vec> values) : basis_(std::move(basis)), values_(std::move(values)) {}

    static BilinearMap zero(const Mat& basis) {
        const auto n = basis.cols();
        return {basis, std::vector<Vec>(static_cast<size_t>(n * n), Vec::Zero(basis.rows()))};
    }

    Vec operator()(const Vec& x, const Vec& y) const { return swapped_ ? evaluate(y, x) : evaluate(x, y); }

    /// (x, y) -> B(y, x); evaluation forwards to the original map, so
    /// B.swapped()(x, y) == B(y, x) holds exactly.
    BilinearMap swapped() const {
        BilinearMap s = *this;
        s.swapped_ = !swapped_;
        return s;
    }

    BilinearMap symmetrized() const {
        const Eigen::Index n = basis_.cols();
        std::vector<Vec> v(values_.size());
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b)
                v[static_cast<size_t>(a * n + b)] =
                    0.5 * (values_[static_cast<size_t>(a * n + b)] + values_[static_cast<size_t>(b * n + a)]);
        return {basis_, std::move(v)};
    }

    double max_norm() const {
        double m = 0.0;
        for (const auto& v : values_) m = std::max(m, v.norm());
        return m;
    }

private:
    Vec evaluate(const Vec& x, const Vec& y) const {
        const Eigen::Index n = basis_.cols();
        const Vec cx = basis_.transpose() * x;
        const Vec cy = basis_.transpose() * y;
        Vec out = Vec::Zero(basis_.rows());
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b) out += cx(a) * cy(b) * values_[static_cast<size_t>(a * n + b)];
        return out;
    }

    Mat basis_;
    std::vector<Vec> values_;
    bool swapped_ = false;
};

struct ExpResult {
    Vec point;
    Mat transport; // ambient isometry restricting to T_qM -> T_{exp_q xi}M
};

struct EMaps {
    Mat e1, e2;
    BilinearMap e11, e12, e21, e22;
};

namespace detail {

inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a + std::numbers::pi, two_pi);
    if (a < 0) a += two_pi;
    return a - std::numbers::pi;
}

inline double sinc(double x) { return std::abs(x) < 1e-4 ? 1.0 - x * x / 6.0 + x * x * x * x / 120.0 : std::sin(x) / x; }

// (cos x - 1) / x^2
inline double cosc(double x) {
    return std::abs(x) < 1e-4 ? -0.5 + x * x / 24.0 - x * x * x * x / 720.0 : (std::cos(x) - 1.0) / (x * x);
}

} // namespace detail

/// Isometrically embedded model manifold with closed-form geometry.
class Manifold {
public:
    explicit Manifold(ManifoldSpec spec, double eps = 1e-12) : spec_(spec), eps_(eps) {
        auto bad = [](const std::string& m) { return Error("invalid-manifold", m, ErrorKind::usage); };
        if (!(spec_.scale > 0)) throw bad("scale must be positive");
        if (spec_.intrinsic_dim < 1) throw bad("intrinsic_dim must be positive");
        switch (spec_.kind) {
        case ManifoldKind::circle:
            if (spec_.intrinsic_dim != 1 || spec_.ambient_dim != 2) throw bad("circle needs dims (1, 2)");
            break;
        case ManifoldKind::flat_torus:
            if (spec_.ambient_dim != 2 * spec_.intrinsic_dim) throw bad("flat torus needs ambient = 2 * intrinsic");
            break;
        case ManifoldKind::round_sphere:
            if (spec_.ambient_dim != spec_.intrinsic_dim + 1) throw bad("sphere needs ambient = intrinsic + 1");
            break;
        }
    }

    const ManifoldSpec& spec() const { return spec_; }
    ManifoldKind kind() const { return spec_.kind; }
    int dim() const { return spec_.intrinsic_dim; }
    int ambient_dim() const { return spec_.ambient_dim; }
    double eps() const { return eps_; }

    bool is_flat() const { return spec_.kind != ManifoldKind::round_sphere; }

    /// Number of circle factors carrying an angle chart (0 for the sphere).
    int circle_factors() const {
        switch (spec_.kind) {
        case ManifoldKind::circle: return 1;
        case ManifoldKind::flat_torus: return spec_.intrinsic_dim;
        default: return 0;
        }
    }

    /// Radius of each circle factor, or the sphere radius.
    double radius() const {
        return spec_.kind == ManifoldKind::flat_torus ? spec_.scale / (2.0 * std::numbers::pi) : spec_.scale;
    }

    double injectivity_radius() const { return std::numbers::pi * radius(); }

    double distance_to(const Vec& q) const {
        if (spec_.kind == ManifoldKind::flat_torus) {
            double s = 0.0;
            for (int f = 0; f < circle_factors(); ++f) {
                const double dr = q.segment<2>(2 * f).norm() - radius();
                s += dr * dr;
            }
            return std::sqrt(s);
        }
        return std::abs(q.norm() - radius());
    }

    Vec project(const Vec& q) const {
        check_ambient(q);
        const double r = radius();
        if (distance_to(q) >= 0.5 * injectivity_radius())
            throw Error("far-from-manifold", "point is not within half the injectivity radius");
        Vec out(q.size());
        if (spec_.kind == ManifoldKind::flat_torus) {
            for (int f = 0; f < circle_factors(); ++f) {
                const double n = q.segment<2>(2 * f).norm();
                if (n < 1e-14 * r) throw Error("far-from-manifold", "point on a factor axis");
                out.segment<2>(2 * f) = on_sphere(n, r) ? Vec(q.segment<2>(2 * f)) : Vec(q.segment<2>(2 * f) * (r / n));
            }
            return out;
        }
        const double n = q.norm();
        if (n < 1e-14 * r) throw Error("far-from-manifold", "point at the origin");
        return on_sphere(n, r) ? q : Vec(q * (r / n));
    }

    Mat projector(const Vec& q) const {
        const int d = ambient_dim();
        Mat P = Mat::Identity(d, d);
        if (spec_.kind == ManifoldKind::flat_torus) {
            for (int f = 0; f < circle_factors(); ++f) {
                const Eigen::Vector2d u = q.segment<2>(2 * f).normalized();
                P.block<2, 2>(2 * f, 2 * f) -= u * u.transpose();
            }
        } else {
            const Vec u = q.normalized();
            P -= u * u.transpose();
        }
        return P;
    }

    Vec tangent_part(const Vec& q, const Vec& v) const {
        if (spec_.kind == ManifoldKind::flat_torus) {
            Vec out = v;
            for (int f = 0; f < circle_factors(); ++f) {
                const Eigen::Vector2d u = q.segment<2>(2 * f).normalized();
                out.segment<2>(2 * f) -= u * u.dot(v.segment<2>(2 * f));
            }
            return out;
        }
        const Vec u = q.normalized();
        return v - u * u.dot(v);
    }

    /// Orthonormal basis of T_qM as columns (ambient_dim x dim).
    Mat tangent_basis(const Vec& q) const {
        const int d = ambient_dim();
        const int n = dim();
        Mat B = Mat::Zero(d, n);
        if (spec_.kind != ManifoldKind::round_sphere) {
            for (int f = 0; f < circle_factors(); ++f) {
                const Eigen::Vector2d u = q.segment<2>(2 * f).normalized();
                B(2 * f, f) = -u(1);
                B(2 * f + 1, f) = u(0);
            }
            return B;
        }
        Mat u = q.normalized();
        Eigen::HouseholderQR<Mat> qr(u);
        Mat Q = qr.householderQ();
        return Q.rightCols(n);
    }

    /// Normal-valued second fundamental form: the normal component of the
    /// ambient acceleration, e.g. -<v,w> q / r^2 on a circle or sphere.
    Vec second_fundamental_form(const Vec& q, const Vec& v, const Vec& w) const {
        if (spec_.kind == ManifoldKind::flat_torus || spec_.kind == ManifoldKind::circle) {
            Vec out = Vec::Zero(ambient_dim());
            const double r2 = radius() * radius();
            for (int f = 0; f < circle_factors(); ++f) {
                const auto s = v.segment<2>(2 * f).dot(w.segment<2>(2 * f));
                out.segment<2>(2 * f) = -(s / r2) * q.segment<2>(2 * f);
            }
            return out;
        }
        const double r2 = radius() * radius();
        return -(v.dot(w) / r2) * q;
    }

    /// R(x, y) z from the Gauss equation
    /// <R(x,y)z, w> = <II(y,z), II(x,w)> - <II(x,z), II(y,w)>.
    Vec curvature(const Vec& q, const Vec& x, const Vec& y, const Vec& z) const {
        const Mat B = tangent_basis(q);
        const Vec iiyz = second_fundamental_form(q, y, z);
        const Vec iixz = second_fundamental_form(q, x, z);
        Vec out = Vec::Zero(ambient_dim());
        for (int a = 0; a < dim(); ++a) {
            const Vec e = B.col(a);
            const double c = iiyz.dot(second_fundamental_form(q, x, e)) - iixz.dot(second_fundamental_form(q, y, e));
            out += c * e;
        }
        return out;
    }

    ExpResult exp_and_transport(const Vec& q, const Vec& xi) const {
        check_ambient(q);
        if (xi.norm() >= injectivity_radius())
            throw Error("beyond-injectivity-radius", "tangent vector longer than the injectivity radius");
        const int d = ambient_dim();
        ExpResult res{Vec(d), Mat::Identity(d, d)};
        if (spec_.kind != ManifoldKind::round_sphere) {
            const double r = radius();
            for (int f = 0; f < circle_factors(); ++f) {
                const Eigen::Vector2d p = q.segment<2>(2 * f);
                const Eigen::Vector2d tau = Eigen::Vector2d(-p(1), p(0)) / p.norm();
                const double alpha = tau.dot(xi.segment<2>(2 * f)) / r;
                Eigen::Matrix2d rot;
                rot << std::cos(alpha), -std::sin(alpha), std::sin(alpha), std::cos(alpha);
                res.point.segment<2>(2 * f) = rot * p;
                res.transport.block<2, 2>(2 * f, 2 * f) = rot;
            }
            return res;
        }
        const double R = radius();
        const Vec qh = q / q.norm();
        const double theta = xi.norm() / R;
        res.point = std::cos(theta) * q + detail::sinc(theta) * xi;
        // Rotation by theta in the plane spanned by q and xi.
        const Vec su = detail::sinc(theta) * xi / R; // sin(theta) u
        res.transport += su * qh.transpose() - qh * su.transpose();
        res.transport += (std::cos(theta) - 1.0) * qh * qh.transpose();
        res.transport += detail::cosc(theta) * (xi / R) * (xi / R).transpose();
        return res;
    }

    Vec exp(const Vec& q, const Vec& xi) const { return exp_and_transport(q, xi).point; }

    /// Inverse of exp_p within the injectivity radius.
    Vec log(const Vec& p, const Vec& q) const {
        if (spec_.kind != ManifoldKind::round_sphere) {
            Vec out = Vec::Zero(ambient_dim());
            const double r = radius();
            for (int f = 0; f < circle_factors(); ++f) {
                const Eigen::Vector2d a = p.segment<2>(2 * f);
                const Eigen::Vector2d b = q.segment<2>(2 * f);
                const double delta = std::atan2(a(0) * b(1) - a(1) * b(0), a.dot(b));
                out.segment<2>(2 * f) = (r * delta / a.norm()) * Eigen::Vector2d(-a(1), a(0));
            }
            return out;
        }
        const Vec ph = p.normalized();
        const Vec qh = q.normalized();
        const double c = ph.dot(qh);
        const Vec w = qh - c * ph;
        const double s = w.norm();
        if (s < 1e-14 && c < 0)
            throw Error("beyond-injectivity-radius", "antipodal points have no unique logarithm");
        const double theta = std::atan2(s, c);
        const double factor = s < 1e-300 ? 1.0 : theta / s;
        return radius() * factor * w;
    }

    double geodesic_distance(const Vec& p, const Vec& q) const { return log(p, q).norm(); }

    /// Adjoint of d(log_p)(q): maps z in T_pM to the vector in T_qM whose
    /// inner product with w equals <z, d(log_p)(q) w>.
    Vec log_adjoint(const Vec& p, const Vec& q, const Vec& z) const {
        const Vec xi = log(p, q);
        const ExpResult e = exp_and_transport(p, xi);
        if (spec_.kind != ManifoldKind::round_sphere) return e.transport * z;
        const double nx = xi.norm();
        if (nx < 1e-300) return z;
        const Vec u = xi / nx;
        const double theta = nx / radius();
        const double zu = z.dot(u);
        return zu * (e.transport * u) + (1.0 / detail::sinc(theta)) * (z - zu * u);
    }

    /// d/dtau exp_{gamma(tau)}(Phi xi) for gamma' = v (Jacobi field with J(0)=v, J'(0)=0).
    Mat e1(const Vec& q, const Vec& xi) const {
        const ExpResult e = exp_and_transport(q, xi);
        const Mat P = projector(q);
        if (spec_.kind != ManifoldKind::round_sphere) return e.transport * P;
        const double nx = xi.norm();
        if (nx < 1e-300) return P;
        const Vec u = xi / nx;
        const double theta = nx / radius();
        const Mat uu = u * u.transpose();
        return e.transport * (uu + std::cos(theta) * (P - uu));
    }

    /// d/dtau exp_q(xi + tau eta).
    Mat e2(const Vec& q, const Vec& xi) const {
        const ExpResult e = exp_and_transport(q, xi);
        const Mat P = projector(q);
        if (spec_.kind != ManifoldKind::round_sphere) return e.transport * P;
        const double nx = xi.norm();
        if (nx < 1e-300) return P;
        const Vec u = xi / nx;
        const double theta = nx / radius();
        const Mat uu = u * u.transpose();
        return e.transport * (uu + detail::sinc(theta) * (P - uu));
    }

    /// E-maps of the exponential map. The second-order maps vanish on the flat
    /// entries and are centered finite differences of E1/E2 on the sphere.
    EMaps e_maps(const Vec& q, const Vec& xi, double fd_step = 1e-5) const {
        EMaps out;
        out.e1 = e1(q, xi);
        out.e2 = e2(q, xi);
        const Mat B = tangent_basis(q);
        if (spec_.kind != ManifoldKind::round_sphere) {
            out.e11 = out.e12 = out.e22 = BilinearMap::zero(B);
            out.e21 = out.e12.swapped();
            return out;
        }
        const Vec p0 = exp(q, xi);
        const Mat P0 = projector(p0);
        const int n = dim();
        std::vector<Vec> v11, v12, v22;
        const double h = fd_step;
        for (int a = 0; a < n; ++a) {
            const Vec eta = B.col(a);
            for (int b = 0; b < n; ++b) {
                const Vec v = B.col(b);
                auto w11 = [&](double tau) {
                    const ExpResult g = exp_and_transport(q, tau * v);
                    return Vec(e1(g.point, g.transport * xi) * (g.transport * eta));
                };
                auto w12 = [&](double tau) { return Vec(e1(q, xi + tau * v) * eta); };
                auto w22 = [&](double tau) { return Vec(e2(q, xi + tau * v) * eta); };
                v11.push_back(P0 * (w11(h) - w11(-h)) / (2 * h));
                v12.push_back(P0 * (w12(h) - w12(-h)) / (2 * h));
                v22.push_back(P0 * (w22(h) - w22(-h)) / (2 * h));
            }
        }
        out.e11 = BilinearMap(B, std::move(v11));
        out.e12 = BilinearMap(B, std::move(v12));
        out.e21 = out.e12.swapped();
        out.e22 = BilinearMap(B, std::move(v22)).symmetrized();
        return out;
    }

    /// Angle of every circle factor in (-pi, pi].
    Vec angles(const Vec& q) const {
        Vec th(circle_factors());
        for (int f = 0; f < circle_factors(); ++f) th(f) = std::atan2(q(2 * f + 1), q(2 * f));
        return th;
    }

    Vec from_angles(const Vec& theta) const {
        require(circle_factors() == theta.size(), "invalid-argument", "angle vector size mismatch",
                ErrorKind::usage);
        Vec q(ambient_dim());
        for (int f = 0; f < circle_factors(); ++f) {
            q(2 * f) = radius() * std::cos(theta(f));
            q(2 * f + 1) = radius() * std::sin(theta(f));
        }
        return q;
    }

    /// Deterministic point lattice used to seed searches.
    std::vector<Vec> lattice(int per_axis) const {
        std::vector<Vec> pts;
        const double two_pi = 2.0 * std::numbers::pi;
        if (spec_.kind != ManifoldKind::round_sphere) {
            const int n = circle_factors();
            long total = 1;
            for (int i = 0; i < n; ++i) total *= per_axis;
            for (long idx = 0; idx < total; ++idx) {
                Vec th(n);
                long rem = idx;
                for (int f = 0; f < n; ++f) {
                    th(f) = two_pi * static_cast<double>(rem % per_axis) / per_axis;
                    rem /= per_axis;
                }
                pts.push_back(from_angles(th));
            }
            return pts;
        }
        // Fibonacci-style points on the unit sphere; higher dimensions use
        // the coordinate cross.
        const int d = ambient_dim();
        if (d == 3) {
            const int count = std::max(2, per_axis * per_axis);
            const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
            for (int i = 0; i < count; ++i) {
                const double z = 1.0 - 2.0 * (i + 0.5) / count;
                const double rr = std::sqrt(1.0 - z * z);
                Vec q(3);
                q << rr * std::cos(golden * i), rr * std::sin(golden * i), z;
                pts.push_back(radius() * q);
            }
            return pts;
        }
        for (int i = 0; i < d; ++i)
            for (double s : {1.0, -1.0}) {
                Vec q = Vec::Zero(d);
                q(i) = s * radius();
                pts.push_back(q);
            }
        return pts;
    }

    void check_ambient(const Vec& q) const {
        if (q.size() != ambient_dim())
            throw Error("dimension-mismatch", "ambient vector has wrong length", ErrorKind::usage);
    }

private:
    // Points already on M up to rounding are returned unchanged, which makes
    // projection idempotent bit for bit.
    static bool on_sphere(double n, double r) { return std::abs(n - r) <= 8.0 * std::numeric_limits<double>::epsilon() * r; }

    ManifoldSpec spec_;
    double eps_;
};

} // namespace loopflow

#pragma once

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include "loopflow/loopspace.hpp"
#include "loopflow/parallel.hpp"

namespace loopflow {

/// Closed orthonormal frame E_j along a loop. Neighbouring frames differ by
/// the discrete transport followed by the constant twist G = exp(-Theta/N),
/// where exp(Theta) is the holonomy of the projected-transport frame.
struct LoopFrame {
    std::vector<Mat> E;
    Mat G;
    Mat holonomy;
    int n = 0;

    int samples() const { return static_cast<int>(E.size()); }

    Vec coeffs(const LoopField& f) const {
        Vec a(samples() * n);
        for (int j = 0; j < samples(); ++j) a.segment(j * n, n) = E[static_cast<size_t>(j)].transpose() * f.vectors.col(j);
        return a;
    }

    LoopField field(const Vec& a) const {
        LoopField f{Mat(E.front().rows(), samples())};
        for (int j = 0; j < samples(); ++j) f.vectors.col(j) = E[static_cast<size_t>(j)] * a.segment(j * n, n);
        return f;
    }
};

namespace detail {

inline Mat polar_factor(const Mat& M) {
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().minCoeff() < 1e-8)
        throw Error("frame-construction-failed", "projected frame became singular");
    return svd.matrixU() * svd.matrixV().transpose();
}

/// Real logarithm of a rotation (closed form for n <= 2).
inline Mat rotation_log(const Mat& H) {
    const auto n = H.rows();
    if (n == 1) return Mat::Zero(1, 1);
    if (n == 2) {
        const double phi = std::atan2(H(1, 0) - H(0, 1), H(0, 0) + H(1, 1));
        Mat L(2, 2);
        L << 0, -phi, phi, 0;
        return L;
    }
    Mat L = H.log();
    return 0.5 * (L - L.transpose());
}

} // namespace detail

inline LoopFrame build_frame(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    const int N = x.size();
    LoopFrame fr;
    fr.n = m.dim();
    std::vector<Mat> F(static_cast<size_t>(N));
    F[0] = m.tangent_basis(x.point(0));
    for (int j = 1; j < N; ++j)
        F[static_cast<size_t>(j)] = detail::polar_factor(m.projector(x.point(j)) * F[static_cast<size_t>(j - 1)]);
    const Mat FN = detail::polar_factor(m.projector(x.point(0)) * F[static_cast<size_t>(N - 1)]);
    fr.holonomy = F[0].transpose() * FN;
    if (fr.holonomy.determinant() < 0)
        throw Error("frame-construction-failed", "holonomy reverses orientation");
    const Mat theta = detail::rotation_log(fr.holonomy);
    fr.G = (-theta / N).exp();
    fr.E.resize(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j)
        fr.E[static_cast<size_t>(j)] = F[static_cast<size_t>(j)] * (-(static_cast<double>(j) / N) * theta).exp();
    return fr;
}

/// Discrete A_x = -nabla_t nabla_t - R(., xdot) xdot - H_V(x) in frame
/// coordinates: the exact second variation of the chord action. Each edge
/// contributes the Hessian of (N/2) d(x_j, x_{j+1})^2, which on the sphere
/// carries the curvature through the Jacobi coefficients theta cot theta and
/// theta / sin theta. Coefficients use the Euclidean pairing; the L^2 weight
/// 1/N cancels between both sides.
class HessianOperator {
public:
    HessianOperator(const DiscreteLoop& x, const Perturbation& V) : frame_(build_frame(x)) {
        const Manifold& m = x.manifold();
        const int N = x.size(), n = frame_.n;
        const bool pointwise = V.pointwise();
        blocks_.resize(static_cast<size_t>(N));
        K1_.resize(static_cast<size_t>(N));
        K2_.resize(static_cast<size_t>(N));
        for (int j = 0; j < N; ++j) {
            const size_t js = static_cast<size_t>(j);
            blocks_[js] = pointwise ? Mat(-V.pointwise_hessian(x, j, frame_.E[js])) : Mat::Zero(n, n);
            if (m.is_flat()) {
                K1_[js] = K2_[js] = Mat::Identity(n, n);
                continue;
            }
            // Edge j -> j+1, expressed at x_{j+1}.
            const int jp = x.next(j);
            const Vec back = m.log(x.point(jp), x.point(j));
            const double theta = back.norm() / m.radius();
            Vec w = Vec::Zero(n);
            if (back.norm() > 0) w = -(frame_.E[static_cast<size_t>(jp)].transpose() * back) / back.norm();
            const Mat ww = w * w.transpose();
            const Mat perp = Mat::Identity(n, n) - ww;
            const double c1 = theta < 1e-4 ? 1.0 - theta * theta / 3.0 : theta * std::cos(theta) / std::sin(theta);
            const double c2 = 1.0 / detail::sinc(theta);
            K1_[js] = ww + c1 * perp;
            K2_[js] = ww + c2 * perp;
        }
        if (!pointwise) {
            dense_ = Mat::Zero(N * n, N * n);
            for (int j = 0; j < N; ++j)
                for (int a = 0; a < n; ++a) {
                    LoopField e = LoopField::zero(x);
                    e.vectors.col(j) = frame_.E[static_cast<size_t>(j)].col(a);
                    dense_->col(j * n + a) = -frame_.coeffs(V.hessian_apply(x, e));
                }
        }
    }

    const LoopFrame& frame() const { return frame_; }
    int size() const { return frame_.samples() * frame_.n; }

    Vec apply_coeffs(const Vec& a) const {
        const int N = frame_.samples(), n = frame_.n;
        const double n2 = static_cast<double>(N) * N;
        Vec out = Vec::Zero(a.size());
        for (int j = 0; j < N; ++j) {
            const size_t js = static_cast<size_t>(j);
            const int jp = (j + 1) % N;
            const Vec y = frame_.G.transpose() * a.segment(j * n, n);
            const Vec z = a.segment(jp * n, n);
            out.segment(j * n, n) += n2 * (frame_.G * (K1_[js] * y - K2_[js] * z)) + blocks_[js] * a.segment(j * n, n);
            out.segment(jp * n, n) += n2 * (K1_[js] * z - K2_[js] * y);
        }
        if (dense_) out += *dense_ * a;
        return out;
    }

    LoopField apply(const LoopField& xi) const { return frame_.field(apply_coeffs(frame_.coeffs(xi))); }

    /// Dense matrix before symmetrization.
    Mat matrix() const {
        const int N = frame_.samples(), n = frame_.n;
        const double n2 = static_cast<double>(N) * N;
        const Mat& G = frame_.G;
        Mat A = Mat::Zero(N * n, N * n);
        for (int j = 0; j < N; ++j) {
            const size_t js = static_cast<size_t>(j);
            const int jp = (j + 1) % N;
            A.block(j * n, j * n, n, n) += n2 * G * K1_[js] * G.transpose() + blocks_[js];
            A.block(j * n, jp * n, n, n) -= n2 * G * K2_[js];
            A.block(jp * n, j * n, n, n) -= n2 * K2_[js] * G.transpose();
            A.block(jp * n, jp * n, n, n) += n2 * K1_[js];
        }
        if (dense_) A += *dense_;
        return A;
    }

private:
    LoopFrame frame_;
    std::vector<Mat> blocks_;
    std::vector<Mat> K1_, K2_;
    std::optional<Mat> dense_;
};

struct HessianAssembly {
    Mat matrix; // symmetrized
    double asymmetry_defect = 0.0;
    LoopFrame frame;
};

inline HessianAssembly assemble_hessian(const DiscreteLoop& x, const Perturbation& V) {
    const HessianOperator op(x, V);
    const Mat A = op.matrix();
    HessianAssembly h;
    h.asymmetry_defect = (A - A.transpose()).cwiseAbs().maxCoeff();
    h.matrix = 0.5 * (A + A.transpose());
    h.frame = op.frame();
    return h;
}

struct Spectrum {
    Vec values;  // ascending
    Mat vectors; // unit Euclidean coefficient columns, largest entry positive
    LoopFrame frame;

    /// Eigenfield k, normalized in L^2.
    LoopField field(int k) const {
        const double scale = std::sqrt(static_cast<double>(frame.samples()));
        return frame.field(scale * vectors.col(k));
    }
};

inline Spectrum hessian_spectrum(const HessianAssembly& h) {
    Eigen::SelfAdjointEigenSolver<Mat> es(h.matrix);
    if (es.info() != Eigen::Success) throw Error("eigensolver-failed", "Hessian eigendecomposition failed");
    Spectrum s{es.eigenvalues(), es.eigenvectors(), h.frame};
    for (Eigen::Index k = 0; k < s.vectors.cols(); ++k) {
        Eigen::Index i = 0;
        s.vectors.col(k).cwiseAbs().maxCoeff(&i);
        if (s.vectors(i, k) < 0) s.vectors.col(k) *= -1.0;
    }
    return s;
}

inline Vec hessian_eigenvalues(const DiscreteLoop& x, const Perturbation& V) {
    Eigen::SelfAdjointEigenSolver<Mat> es(assemble_hessian(x, V).matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

struct CriticalPoint {
    DiscreteLoop loop;
    double action = 0.0;
    Spectrum spectrum;
    int morse_index = 0;
    double nondeg_margin = 0.0;
    bool degenerate = false;
    double residual_sup = 0.0;
    double asymmetry_defect = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;
    std::vector<int> winding;

    const Vec& eigenvalues() const { return spectrum.values; }
    LoopField eigenfield(int k) const { return spectrum.field(k); }

    /// L^2-orthonormal basis of the negative eigenspace.
    std::vector<LoopField> unstable_fields() const {
        std::vector<LoopField> out;
        for (int k = 0; k < morse_index; ++k) out.push_back(eigenfield(k));
        return out;
    }
};

struct NewtonOptions {
    double tol_crit = -1.0; // <= 0 selects 1e-9 sqrt(N)
    int max_iter = 50;
    double tol_nondeg = 1e-6;

    double tolerance(int n) const { return tol_crit > 0 ? tol_crit : 1e-9 * std::sqrt(static_cast<double>(n)); }
};

/// Builds the CriticalPoint record of an already converged loop.
inline CriticalPoint describe_critical(const DiscreteLoop& x, const Perturbation& V, double tol_nondeg = 1e-6) {
    const HessianAssembly h = assemble_hessian(x, V);
    CriticalPoint cp{x, action(x, V), hessian_spectrum(h)};
    const Vec& ev = cp.spectrum.values;
    cp.morse_index = static_cast<int>((ev.array() < 0).count());
    cp.nondeg_margin = ev.cwiseAbs().minCoeff();
    cp.degenerate = cp.nondeg_margin <= tol_nondeg;
    cp.residual_sup = sup_norm(heat_residual(x, V));
    cp.asymmetry_defect = h.asymmetry_defect;
    cp.winding = winding(x);
    return cp;
}

/// Damped Newton iteration on F(x) = nabla_t xdot + grad V(x), solving
/// A_x xi = F and retracting with the exponential map.
inline CriticalPoint newton_solve(const DiscreteLoop& seed, const Perturbation& V, const NewtonOptions& opt = {}) {
    const double tol = opt.tolerance(seed.size());
    const double iota = seed.manifold().injectivity_radius();
    DiscreteLoop x = seed;
    std::vector<double> history;
    for (int it = 0; it <= opt.max_iter; ++it) {
        const LoopField F = heat_residual(x, V);
        const double r = sup_norm(F);
        history.push_back(r);
        if (r <= tol) {
            CriticalPoint cp = describe_critical(x, V, opt.tol_nondeg);
            cp.iterations = it;
            cp.residual_history = std::move(history);
            return cp;
        }
        if (it == opt.max_iter) break;
        const Spectrum sp = hessian_spectrum(assemble_hessian(x, V));
        if (sp.values.cwiseAbs().minCoeff() < opt.tol_nondeg)
            throw Error("degenerate-hessian", "Newton system singular within tol_nondeg");
        const Vec b = sp.vectors.transpose() * sp.frame.coeffs(F);
        const LoopField xi = sp.frame.field(sp.vectors * b.cwiseQuotient(sp.values));
        const double phi0 = inner(F, F);
        double alpha = std::min(1.0, 0.5 * iota / std::max(sup_norm(xi), 1e-300));
        bool accepted = false;
        while (alpha > 1e-10) {
            const DiscreteLoop trial = exp_field(x, alpha * xi);
            const LoopField Ft = heat_residual(trial, V);
            const double phi = inner(Ft, Ft);
            if ((phi0 < 1e-4 && alpha == 1.0) || phi <= (1.0 - 1e-4 * alpha) * phi0) {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) throw Error("no-convergence", "line search failed to reduce the residual");
    }
    throw Error("no-convergence", "Newton iteration exceeded max_iter");
}

struct EnumerateOptions {
    int lattice_per_axis = 8;
    int max_winding = 0;                   // geodesic seeds |w_f| <= max_winding per factor
    std::optional<std::vector<int>> component; // winding filter (circle/torus only)
    std::vector<DiscreteLoop> extra_seeds;
    NewtonOptions newton;
    double dedup_radius = -1.0; // <= 0 selects 1e-4 iota
    double tol_reg = 1e-6;
    int n_samples = 64;
};

struct EnumerateResult {
    std::vector<CriticalPoint> points; // sorted by action, S <= a
    int seeds_tried = 0;
    int seeds_failed = 0;
    int degenerate = 0;
};

inline std::vector<DiscreteLoop> default_seeds(const Manifold& m, const EnumerateOptions& opt) {
    std::vector<DiscreteLoop> seeds;
    const std::vector<Vec> base = m.lattice(opt.lattice_per_axis);
    for (const auto& q : base) seeds.push_back(DiscreteLoop::constant(m, q, opt.n_samples));
    const int nf = m.circle_factors();
    if (opt.max_winding > 0 && nf > 0) {
        const int w = opt.max_winding, span = 2 * w + 1;
        long total = 1;
        for (int f = 0; f < nf; ++f) total *= span;
        for (long idx = 0; idx < total; ++idx) {
            Vec wind(nf);
            long rem = idx;
            bool zero = true;
            for (int f = 0; f < nf; ++f) {
                wind(f) = static_cast<double>(rem % span - w);
                zero = zero && wind(f) == 0.0;
                rem /= span;
            }
            if (zero) continue;
            for (const auto& q : base) {
                const Vec th0 = m.angles(q);
                seeds.push_back(DiscreteLoop::from_angle_function(
                    m, opt.n_samples, [&](double t) { return Vec(th0 + 2.0 * std::numbers::pi * t * wind); }));
            }
        }
    }
    if (m.kind() == ManifoldKind::round_sphere && m.dim() == 2) {
        // Great circles through the lattice points.
        for (const auto& q : base) {
            const Mat B = m.tangent_basis(q);
            Mat pts(m.ambient_dim(), opt.n_samples);
            for (int j = 0; j < opt.n_samples; ++j) {
                const double th = 2.0 * std::numbers::pi * j / opt.n_samples;
                pts.col(j) = std::cos(th) * q + std::sin(th) * m.radius() * B.col(0);
            }
            seeds.push_back(DiscreteLoop::projected(m, pts));
        }
    }
    for (const auto& s : opt.extra_seeds) seeds.push_back(s);
    return seeds;
}

/// Lexicographic order on (action, coordinates) for deterministic passes.
inline bool critical_less(const CriticalPoint& a, const CriticalPoint& b) {
    if (a.action != b.action) return a.action < b.action;
    const Mat& pa = a.loop.points();
    const Mat& pb = b.loop.points();
    for (Eigen::Index i = 0; i < pa.size(); ++i)
        if (pa(i) != pb(i)) return pa(i) < pb(i);
    return false;
}

/// Critical points with action <= a found from the deterministic seed family.
inline EnumerateResult enumerate_below(const Perturbation& V, double a, const Manifold& m,
                                       const EnumerateOptions& opt = {}) {
    const std::vector<DiscreteLoop> seeds = default_seeds(m, opt);
    std::vector<std::optional<CriticalPoint>> found(seeds.size());
    parallel_for(seeds.size(), [&](size_t i) {
        try {
            found[i] = newton_solve(seeds[i], V, opt.newton);
        } catch (const Error&) {
            found[i].reset();
        }
    });
    EnumerateResult res;
    res.seeds_tried = static_cast<int>(seeds.size());
    std::vector<CriticalPoint> all;
    for (auto& f : found) {
        if (!f) {
            ++res.seeds_failed;
            continue;
        }
        if (opt.component && m.circle_factors() > 0 && f->winding != *opt.component) continue;
        all.push_back(std::move(*f));
    }
    std::sort(all.begin(), all.end(), critical_less);
    const double radius = opt.dedup_radius > 0 ? opt.dedup_radius : 1e-4 * m.injectivity_radius();
    for (auto& cp : all) {
        bool dup = false;
        for (const auto& kept : res.points)
            if (loop_distance(cp.loop, kept.loop, LoopNorm::C0) < radius) {
                dup = true;
                break;
            }
        if (dup) continue;
        if (std::abs(cp.action - a) < opt.tol_reg)
            throw Error("a-is-critical", "a critical value lies within tol_reg of the level", ErrorKind::usage);
        if (cp.action > a) continue;
        if (cp.degenerate) ++res.degenerate;
        res.points.push_back(std::move(cp));
    }
    return res;
}

} // namespace loopflow

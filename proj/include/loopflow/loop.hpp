#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "loopflow/manifold.hpp"

namespace loopflow {

/// N equispaced samples x(j/N) of a loop in M, stored as ambient columns.
class DiscreteLoop {
public:
    DiscreteLoop(Manifold manifold, Mat points) : manifold_(std::move(manifold)), points_(std::move(points)) {
        const auto n = points_.cols();
        if (points_.rows() != manifold_.ambient_dim())
            throw Error("dimension-mismatch", "loop rows must equal the ambient dimension", ErrorKind::usage);
        if (n < 16 || (n & (n - 1)) != 0)
            throw Error("invalid-grid", "sample count must be a power of two >= 16", ErrorKind::usage);
    }

    /// Projects every column onto M first.
    static DiscreteLoop projected(const Manifold& m, const Mat& pts) {
        Mat p(pts.rows(), pts.cols());
        for (Eigen::Index j = 0; j < pts.cols(); ++j) p.col(j) = m.project(pts.col(j));
        return {m, std::move(p)};
    }

    static DiscreteLoop constant(const Manifold& m, const Vec& q, int n) {
        const Vec p = m.project(q);
        return {m, p.replicate(1, n)};
    }

    /// Loop t -> angles(t) for circle and torus factors.
    template <class F>
    static DiscreteLoop from_angle_function(const Manifold& m, int n, F&& angles_of_t) {
        Mat p(m.ambient_dim(), n);
        for (int j = 0; j < n; ++j) p.col(j) = m.from_angles(angles_of_t(static_cast<double>(j) / n));
        return {m, std::move(p)};
    }

    const Manifold& manifold() const { return manifold_; }
    const Mat& points() const { return points_; }
    Mat& points() { return points_; }
    int size() const { return static_cast<int>(points_.cols()); }
    auto point(int j) const { return points_.col(j); }
    double t(int j) const { return static_cast<double>(j) / size(); }
    int next(int j) const { return (j + 1) % size(); }
    int prev(int j) const { return (j + size() - 1) % size(); }

    double max_offset() const {
        double m = 0.0;
        for (int j = 0; j < size(); ++j) m = std::max(m, manifold_.distance_to(point(j)));
        return m;
    }

private:
    Manifold manifold_;
    Mat points_;
};

/// Tangent vectors along a loop, one ambient column per sample.
struct LoopField {
    Mat vectors;

    static LoopField zero(const DiscreteLoop& x) { return {Mat::Zero(x.manifold().ambient_dim(), x.size())}; }
    int size() const { return static_cast<int>(vectors.cols()); }

    LoopField& operator+=(const LoopField& o) { vectors += o.vectors; return *this; }
    LoopField& operator-=(const LoopField& o) { vectors -= o.vectors; return *this; }
    LoopField& operator*=(double s) { vectors *= s; return *this; }
    friend LoopField operator+(LoopField a, const LoopField& b) { return a += b; }
    friend LoopField operator-(LoopField a, const LoopField& b) { return a -= b; }
    friend LoopField operator*(double s, LoopField a) { return a *= s; }
};

inline void check_same_grid(const DiscreteLoop& x, const DiscreteLoop& y) {
    if (x.size() != y.size() || !(x.manifold().spec() == y.manifold().spec()))
        throw Error("grid-mismatch", "loops live on different grids or manifolds");
}

inline void check_same_grid(const DiscreteLoop& x, const LoopField& f) {
    if (x.size() != f.size() || f.vectors.rows() != x.manifold().ambient_dim())
        throw Error("grid-mismatch", "field does not match the loop grid");
}

/// L^2 inner product with the uniform quadrature weight 1/N.
inline double inner(const LoopField& a, const LoopField& b) {
    return a.vectors.cwiseProduct(b.vectors).sum() / a.size();
}

inline double l2_norm(const LoopField& a) { return std::sqrt(inner(a, a)); }

inline double sup_norm(const LoopField& a) { return a.vectors.colwise().norm().maxCoeff(); }

inline double lp_norm(const LoopField& a, double p) {
    double s = 0.0;
    for (int j = 0; j < a.size(); ++j) s += std::pow(a.vectors.col(j).norm(), p);
    return std::pow(s / a.size(), 1.0 / p);
}

inline LoopField tangent_part(const DiscreteLoop& x, const LoopField& f) {
    LoopField out{Mat(f.vectors.rows(), f.size())};
    for (int j = 0; j < x.size(); ++j) out.vectors.col(j) = x.manifold().tangent_part(x.point(j), f.vectors.col(j));
    return out;
}

/// Covariant t-derivative by projected centered differences.
inline LoopField covariant_dt(const DiscreteLoop& x, const LoopField& f) {
    const int n = x.size();
    LoopField out{Mat(f.vectors.rows(), n)};
    for (int j = 0; j < n; ++j) {
        const Vec d = 0.5 * n * (f.vectors.col(x.next(j)) - f.vectors.col(x.prev(j)));
        out.vectors.col(j) = x.manifold().tangent_part(x.point(j), d);
    }
    return out;
}

struct LoopNorms {
    double l2 = 0, lp = 0, p = 2, sup = 0, w12 = 0, w22 = 0;
};

inline LoopNorms norms(const DiscreteLoop& x, const LoopField& f, double p = 4.0) {
    check_same_grid(x, f);
    LoopNorms out;
    out.p = p;
    out.l2 = l2_norm(f);
    out.lp = lp_norm(f, p);
    out.sup = sup_norm(f);
    const LoopField d1 = covariant_dt(x, f);
    const LoopField d2 = covariant_dt(x, d1);
    const double n1 = l2_norm(d1), n2 = l2_norm(d2);
    out.w12 = std::sqrt(out.l2 * out.l2 + n1 * n1);
    out.w22 = std::sqrt(out.l2 * out.l2 + n1 * n1 + n2 * n2);
    return out;
}

enum class LoopNorm { L2, C0, W12 };

/// Norm of the ambient pointwise difference x - y.
inline double loop_distance(const DiscreteLoop& x, const DiscreteLoop& y, LoopNorm norm = LoopNorm::L2) {
    check_same_grid(x, y);
    const Mat diff = x.points() - y.points();
    const int n = x.size();
    switch (norm) {
    case LoopNorm::C0: return diff.colwise().norm().maxCoeff();
    case LoopNorm::L2: return std::sqrt(diff.squaredNorm() / n);
    case LoopNorm::W12: {
        double s = diff.squaredNorm() / n;
        for (int j = 0; j < n; ++j) {
            const Vec d = 0.5 * n * (diff.col(x.next(j)) - diff.col(x.prev(j)));
            s += d.squaredNorm() / n;
        }
        return std::sqrt(s);
    }
    }
    return 0.0;
}

/// Pointwise exponential map x_j -> exp_{x_j}(xi_j).
inline DiscreteLoop exp_field(const DiscreteLoop& x, const LoopField& xi) {
    check_same_grid(x, xi);
    Mat p(x.points().rows(), x.size());
    for (int j = 0; j < x.size(); ++j) p.col(j) = x.manifold().exp(x.point(j), xi.vectors.col(j));
    return {x.manifold(), std::move(p)};
}

/// Pointwise logarithm: the field along x pointing to y.
inline LoopField log_field(const DiscreteLoop& x, const DiscreteLoop& y) {
    check_same_grid(x, y);
    LoopField out{Mat(x.points().rows(), x.size())};
    for (int j = 0; j < x.size(); ++j) out.vectors.col(j) = x.manifold().log(x.point(j), y.point(j));
    return out;
}

/// Winding number of every circle factor (empty for the sphere).
inline std::vector<int> winding(const DiscreteLoop& x) {
    const Manifold& m = x.manifold();
    std::vector<int> w(static_cast<size_t>(m.circle_factors()), 0);
    for (int f = 0; f < m.circle_factors(); ++f) {
        double total = 0.0;
        for (int j = 0; j < x.size(); ++j) {
            const Vec a = m.angles(x.point(j));
            const Vec b = m.angles(x.point(x.next(j)));
            total += detail::wrap_angle(b(f) - a(f));
        }
        w[static_cast<size_t>(f)] = static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
    }
    return w;
}

// --- CSV: one row per sample with columns t, coord_1..coord_d ---------------

inline void write_loop_csv(std::ostream& os, const DiscreteLoop& x) {
    os << "t";
    for (int i = 0; i < x.manifold().ambient_dim(); ++i) os << ",coord_" << (i + 1);
    os << '\n' << std::setprecision(17);
    for (int j = 0; j < x.size(); ++j) {
        os << x.t(j);
        for (int i = 0; i < x.manifold().ambient_dim(); ++i) os << ',' << x.points()(i, j);
        os << '\n';
    }
}

inline void write_loop_csv(const std::string& path, const DiscreteLoop& x) {
    std::ofstream os(path);
    if (!os) throw Error("io-error", "cannot write " + path, ErrorKind::usage);
    write_loop_csv(os, x);
}

/// Reads the coordinate columns of a loop CSV (header required).
inline Mat read_coords_csv(std::istream& is, int ambient_dim) {
    std::string line;
    if (!std::getline(is, line)) throw Error("parse-error", "empty loop csv", ErrorKind::usage);
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<int>(row.size()) != ambient_dim + 1)
            throw Error("parse-error", "loop csv row has wrong column count", ErrorKind::usage);
        rows.push_back(std::move(row));
    }
    Mat pts(ambient_dim, static_cast<Eigen::Index>(rows.size()));
    for (size_t j = 0; j < rows.size(); ++j)
        for (int i = 0; i < ambient_dim; ++i) pts(i, static_cast<Eigen::Index>(j)) = rows[j][static_cast<size_t>(i + 1)];
    return pts;
}

inline DiscreteLoop read_loop_csv(const std::string& path, const Manifold& m) {
    std::ifstream is(path);
    if (!is) throw Error("io-error", "cannot read " + path, ErrorKind::usage);
    return DiscreteLoop::projected(m, read_coords_csv(is, m.ambient_dim()));
}

} // namespace loopflow

#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include "loopflow/moduli.hpp"

namespace loopflow {

using BigInt = boost::multiprecision::cpp_int;

/// Dense integer matrix, row-major.
template <class T>
struct IntMatrix {
    size_t rows = 0, cols = 0;
    std::vector<T> data;

    IntMatrix() = default;
    IntMatrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    const T& operator()(size_t i, size_t j) const { return data[i * cols + j]; }
    bool is_zero() const {
        return std::all_of(data.begin(), data.end(), [](const T& v) { return v == 0; });
    }
};

using Boundary = IntMatrix<long long>;

inline IntMatrix<BigInt> to_big(const Boundary& m) {
    IntMatrix<BigInt> b(m.rows, m.cols);
    for (size_t i = 0; i < m.data.size(); ++i) b.data[i] = m.data[i];
    return b;
}

struct Generator {
    size_t id = 0; // position in the critical-point list
    int index = 0;
    double action = 0.0;
};

/// A signed orbit count n_u for an orbit from `source` to `target`, taken
/// with the default orientation of both endpoints.
struct OrbitSign {
    size_t source = 0, target = 0;
    int sign = 0;
};

/// Morse complex below a level: generators by degree and integer boundary
/// maps boundary[k] : CM_k -> CM_{k-1} (rows index degree k-1).
struct ChainComplex {
    double level = 0.0;
    std::vector<int> component;
    std::vector<std::vector<Generator>> generators;
    Orientations nu;
    std::vector<Boundary> boundary;

    int top_degree() const { return static_cast<int>(generators.size()) - 1; }
    size_t rank(int k) const {
        return k >= 0 && k <= top_degree() ? generators[static_cast<size_t>(k)].size() : 0;
    }
};

/// Fills n(x, y) as sums of characteristic signs. The orientation choice
/// nu multiplies each entry by nu(x) nu(y); degenerate points are not
/// generators.
inline ChainComplex assemble(const std::vector<CriticalPoint>& crit, const std::vector<OrbitSign>& orbits,
                             const Orientations& nu, double level = 0.0, std::vector<int> component = {}) {
    if (nu.size() != crit.size())
        throw Error("invalid-argument", "one orientation per critical point is required", ErrorKind::usage);
    ChainComplex cx;
    cx.level = level;
    cx.component = std::move(component);
    cx.nu = nu;
    int top = -1;
    for (const auto& x : crit)
        if (!x.degenerate) top = std::max(top, x.morse_index);
    cx.generators.resize(static_cast<size_t>(top + 1));
    std::vector<std::optional<size_t>> slot(crit.size());
    for (size_t i = 0; i < crit.size(); ++i) {
        if (crit[i].degenerate) continue;
        auto& g = cx.generators[static_cast<size_t>(crit[i].morse_index)];
        slot[i] = g.size();
        g.push_back({i, crit[i].morse_index, crit[i].action});
    }
    cx.boundary.resize(cx.generators.size());
    for (int k = 0; k <= top; ++k) cx.boundary[static_cast<size_t>(k)] = Boundary(cx.rank(k - 1), cx.rank(k));
    for (const auto& o : orbits) {
        if (o.source >= crit.size() || o.target >= crit.size() || !slot[o.source] || !slot[o.target])
            throw Error("dangling-orbit", "orbit endpoint is not a generator of the complex");
        const int k = crit[o.source].morse_index;
        if (k - crit[o.target].morse_index != 1)
            throw Error("index-mismatch", "boundary orbits must drop the index by one", ErrorKind::usage);
        cx.boundary[static_cast<size_t>(k)](*slot[o.target], *slot[o.source]) += o.sign * nu[o.source] * nu[o.target];
    }
    return cx;
}

/// Signs of enumerated orbits under the default orientation.
inline std::vector<OrbitSign> orbit_signs(const std::vector<ConnectingOrbit>& orbits,
                                          const std::vector<CriticalPoint>& crit, const Perturbation& V,
                                          const FlowControls& flow = {}) {
    const Orientations one(crit.size(), 1);
    std::vector<OrbitSign> out(orbits.size());
    parallel_for(orbits.size(), [&](size_t i) {
        out[i] = {orbits[i].source, orbits[i].target, compute_sign(orbits[i], crit, V, one, flow)};
    });
    return out;
}

struct SquareDefect {
    int degree = 0; // of the source of boundary[k-1] boundary[k]
    size_t row = 0, col = 0;
    BigInt value;
};

struct DSquaredReport {
    bool ok = true;
    std::vector<SquareDefect> defects;
};

inline DSquaredReport check_d_squared(const ChainComplex& cx) {
    DSquaredReport r;
    for (int k = 2; k <= cx.top_degree(); ++k) {
        const auto a = to_big(cx.boundary[static_cast<size_t>(k - 1)]);
        const auto b = to_big(cx.boundary[static_cast<size_t>(k)]);
        for (size_t i = 0; i < a.rows; ++i)
            for (size_t j = 0; j < b.cols; ++j) {
                BigInt s = 0;
                for (size_t l = 0; l < a.cols; ++l) s += a(i, l) * b(l, j);
                if (s != 0) r.defects.push_back({k, i, j, s});
            }
    }
    r.ok = r.defects.empty();
    return r;
}

struct SmithForm {
    size_t rank = 0;
    std::vector<BigInt> invariant_factors; // positive, each dividing the next
};

/// Smith normal form by unimodular row and column operations. The pivot is
/// the nonzero entry of least absolute value, first in row-major order.
inline SmithForm smith_normal_form(IntMatrix<BigInt> A) {
    SmithForm f;
    const size_t m = A.rows, n = A.cols;
    auto swap_rows = [&](size_t a, size_t b) {
        for (size_t j = 0; j < n; ++j) std::swap(A(a, j), A(b, j));
    };
    auto swap_cols = [&](size_t a, size_t b) {
        for (size_t i = 0; i < m; ++i) std::swap(A(i, a), A(i, b));
    };
    for (size_t t = 0; t < std::min(m, n); ++t) {
        for (;;) {
            std::optional<std::pair<size_t, size_t>> piv;
            BigInt best = 0;
            for (size_t i = t; i < m; ++i)
                for (size_t j = t; j < n; ++j)
                    if (A(i, j) != 0 && (!piv || abs(A(i, j)) < best)) {
                        piv = {i, j};
                        best = abs(A(i, j));
                    }
            if (!piv) return f;
            swap_rows(t, piv->first);
            swap_cols(t, piv->second);
            const BigInt p = A(t, t);
            bool clean = true;
            for (size_t i = t + 1; i < m; ++i) {
                if (A(i, t) == 0) continue;
                const BigInt q = A(i, t) / p;
                for (size_t j = t; j < n; ++j) A(i, j) -= q * A(t, j);
                clean = clean && A(i, t) == 0;
            }
            for (size_t j = t + 1; j < n; ++j) {
                if (A(t, j) == 0) continue;
                const BigInt q = A(t, j) / p;
                for (size_t i = t; i < m; ++i) A(i, j) -= q * A(i, t);
                clean = clean && A(t, j) == 0;
            }
            if (!clean) continue;
            // The pivot must divide the remaining block; otherwise fold the
            // offending row into row t and repeat.
            std::optional<size_t> bad;
            for (size_t i = t + 1; i < m && !bad; ++i)
                for (size_t j = t + 1; j < n; ++j)
                    if (A(i, j) % p != 0) {
                        bad = i;
                        break;
                    }
            if (!bad) break;
            for (size_t j = t; j < n; ++j) A(t, j) += A(*bad, j);
        }
        f.invariant_factors.push_back(abs(A(t, t)));
        ++f.rank;
    }
    return f;
}

struct HomologyResult {
    std::vector<int> betti;
    std::vector<std::vector<BigInt>> torsion; // invariant factors > 1 per degree
};

/// H_k = ker boundary[k] / im boundary[k+1] over the integers.
inline HomologyResult homology(const ChainComplex& cx) {
    if (!check_d_squared(cx).ok) throw Error("not-a-complex", "boundary maps do not compose to zero");
    const int top = cx.top_degree();
    std::vector<SmithForm> snf(static_cast<size_t>(top + 2));
    for (int k = 1; k <= top; ++k) snf[static_cast<size_t>(k)] = smith_normal_form(to_big(cx.boundary[static_cast<size_t>(k)]));
    HomologyResult h;
    long euler_gen = 0, euler_betti = 0;
    for (int k = 0; k <= top; ++k) {
        const size_t rk = snf[static_cast<size_t>(k)].rank, rk1 = snf[static_cast<size_t>(k + 1)].rank;
        const int b = static_cast<int>(cx.rank(k) - rk - rk1);
        h.betti.push_back(b);
        std::vector<BigInt> tors;
        for (const auto& d : snf[static_cast<size_t>(k + 1)].invariant_factors)
            if (d > 1) tors.push_back(d);
        h.torsion.push_back(std::move(tors));
        const long sgn = k % 2 == 0 ? 1 : -1;
        euler_gen += sgn * static_cast<long>(cx.rank(k));
        euler_betti += sgn * b;
    }
    if (euler_gen != euler_betti)
        throw Error("invariant-violated", "Euler characteristic of homology differs from the chain groups",
                    ErrorKind::invariant);
    return h;
}

struct ReferenceReport {
    std::string status; // "match", "mismatch" or "no-reference"
    std::vector<int> mismatched_degrees;
};

/// Degree-wise comparison of Betti numbers; missing degrees count as zero.
inline ReferenceReport compare_reference(const HomologyResult& h, const std::optional<std::vector<int>>& reference) {
    ReferenceReport r;
    if (!reference) {
        r.status = "no-reference";
        return r;
    }
    const size_t n = std::max(h.betti.size(), reference->size());
    for (size_t k = 0; k < n; ++k) {
        const int got = k < h.betti.size() ? h.betti[k] : 0;
        const int want = k < reference->size() ? (*reference)[k] : 0;
        if (got != want) r.mismatched_degrees.push_back(static_cast<int>(k));
    }
    r.status = r.mismatched_degrees.empty() ? "match" : "mismatch";
    return r;
}

} // namespace loopflow

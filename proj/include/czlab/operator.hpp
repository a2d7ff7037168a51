#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "czlab/goodness.hpp"
#include "czlab/measure.hpp"
#include "czlab/numeric.hpp"

namespace czlab {

inline double point_dist(const Point& x, const Point& y) {
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d = std::max(d, std::fabs(x[i].to_double() - y[i].to_double()));
    return d;
}

inline std::vector<double> point_coords(const Point& x) { return to_doubles(x); }

/// Off-diagonal kernel K(x, y) evaluated in double precision; K(x, x) is taken to be zero.
struct Kernel {
    std::string name;
    double amplitude = 1;
    double s = 1;              // decay exponent of the size bound
    double eta = 1;            // smoothness exponent
    bool antisymmetric = false;
    std::function<double(const std::vector<double>&, const std::vector<double>&)> fn;

    double operator()(const std::vector<double>& x, const std::vector<double>& y) const {
        if (x == y) return 0.0;
        return fn(x, y);
    }
    double operator()(const Point& x, const Point& y) const { return (*this)(to_doubles(x), to_doubles(y)); }

    /// Analytic smoothness constant against lambda(r) = A r^s (eta = 1 derivative bound, rescaled for
    /// other exponents by the factor 2^{eta-1}); zero kernels need none.
    double declared_smoothness(double lambda_amplitude, double eta_used) const {
        if (name == "zero" || name == "constant") return 0.0;
        double lip = name == "riesz-2d" ? (s + 2) : s;
        return amplitude * lip * std::pow(2.0, s + eta_used) * lambda_amplitude;
    }
};

inline double sup_norm_diff(const std::vector<double>& x, const std::vector<double>& y) {
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d = std::max(d, std::fabs(x[i] - y[i]));
    return d;
}

inline Kernel zero_kernel() {
    Kernel k;
    k.name = "zero";
    k.amplitude = 0;
    k.s = 0;
    k.antisymmetric = true;
    k.fn = [](const std::vector<double>&, const std::vector<double>&) { return 0.0; };
    return k;
}

inline Kernel constant_kernel(double c) {
    Kernel k;
    k.name = "constant";
    k.amplitude = c;
    k.s = 0;
    k.fn = [c](const std::vector<double>&, const std::vector<double>&) { return c; };
    return k;
}

/// a sign(x - y) |x - y|^{-s} in one dimension.
inline Kernel sign_power_kernel(double s, double a = 1) {
    if (!(s > 0)) throw std::invalid_argument("sign-power kernel: s must be positive");
    Kernel k;
    k.name = "sign-power";
    k.amplitude = a;
    k.s = s;
    k.antisymmetric = true;
    k.fn = [s, a](const std::vector<double>& x, const std::vector<double>& y) {
        double d = x[0] - y[0];
        if (x.size() != 1) throw std::invalid_argument("sign-power kernel is one-dimensional");
        return (d > 0 ? a : -a) * std::pow(std::fabs(d), -s);
    };
    return k;
}

/// a (x_1 - y_1) / |x - y|^{s+1} with the sup norm.
inline Kernel riesz_kernel(double s, double a = 1) {
    if (!(s > 0)) throw std::invalid_argument("riesz kernel: s must be positive");
    Kernel k;
    k.name = "riesz-2d";
    k.amplitude = a;
    k.s = s;
    k.antisymmetric = true;
    k.fn = [s, a](const std::vector<double>& x, const std::vector<double>& y) {
        double r = sup_norm_diff(x, y);
        return a * (x[0] - y[0]) / std::pow(r, s + 1);
    };
    return k;
}

/// Builds a catalog kernel from its name: zero, constant, sign-power, riesz-2d.
inline Kernel make_kernel(const std::string& name, double s, double a) {
    if (name == "zero") return zero_kernel();
    if (name == "constant") return constant_kernel(a);
    if (name == "sign-power") return sign_power_kernel(s, a);
    if (name == "riesz-2d") return riesz_kernel(s, a);
    throw std::invalid_argument("unknown kernel: " + name);
}

struct KernelReport {
    double c_size = 0;
    double c_smooth = 0;
    std::size_t pairs = 0, triples = 0;
    bool antisymmetric = true;
};

/// Empirical size and smoothness constants over atoms; all triples when N <= max_exhaustive,
/// otherwise a seeded sample of `samples` triples.
inline KernelReport verify_kernel(const Kernel& k, const Measure& m, const DominatingFunction& lambda, double eta,
                                  std::size_t max_exhaustive = 256, std::size_t samples = 2000000,
                                  std::uint64_t seed = 1) {
    KernelReport rep;
    const std::size_t n = m.size();
    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = to_doubles(m.position(i));
    std::vector<double> km(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) km[i * n + j] = k(x[i], x[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double r = sup_norm_diff(x[i], x[j]);
            rep.c_size = std::max(rep.c_size, std::fabs(km[i * n + j]) * lambda.eval(r));
            if (km[i * n + j] != -km[j * n + i]) rep.antisymmetric = false;
            ++rep.pairs;
        }
    auto triple = [&](std::size_t a, std::size_t b, std::size_t c) {
        // x = a, x' = b, y = c; and the mirrored second-variable condition.
        if (a == b || a == c || b == c) return;
        double r = sup_norm_diff(x[a], x[c]), h = sup_norm_diff(x[a], x[b]);
        if (r < 2 * h) return;
        double scale = lambda.eval(r) * std::pow(r / h, eta);
        rep.c_smooth = std::max(rep.c_smooth, std::fabs(km[a * n + c] - km[b * n + c]) * scale);
        rep.c_smooth = std::max(rep.c_smooth, std::fabs(km[c * n + a] - km[c * n + b]) * scale);
        ++rep.triples;
    };
    if (n <= max_exhaustive) {
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t c = 0; c < n; ++c) triple(a, b, c);
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (std::size_t s = 0; s < samples; ++s) triple(pick(rng), pick(rng), pick(rng));
    }
    return rep;
}

/// Dense matrix A[x][y] = K(x_x, x_y) over atoms (diagonal zero), together with the weights.
class OperatorMatrix {
public:
    OperatorMatrix() = default;
    OperatorMatrix(const Kernel& k, const Measure& m) : mu_(&m), n_(m.size()), a_(n_ * n_), w_(n_) {
        std::vector<std::vector<double>> x(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            x[i] = to_doubles(m.position(i));
            w_[i] = m.weight(i).to_double();
        }
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) a_[i * n_ + j] = i == j ? 0.0 : k(x[i], x[j]);
    }

    const Measure& measure() const { return *mu_; }
    std::size_t size() const { return n_; }
    double at(std::size_t x, std::size_t y) const { return a_[x * n_ + y]; }
    double weight(std::size_t i) const { return w_[i]; }

    /// Tf(x) = sum_y K(x, y) f(y) w_y
    template <class S>
    std::vector<S> apply(const std::vector<S>& f) const {
        std::vector<S> out(n_);
        std::vector<S> fw(n_);
        for (std::size_t y = 0; y < n_; ++y) fw[y] = f[y] * scalar_from_double<S>(w_[y]);
        for (std::size_t x = 0; x < n_; ++x) {
            S acc{};
            for (std::size_t y = 0; y < n_; ++y)
                if (a_[x * n_ + y] != 0.0 && !is_zero(fw[y])) acc += scalar_from_double<S>(a_[x * n_ + y]) * fw[y];
            out[x] = acc;
        }
        return out;
    }

    /// Adjoint with respect to mu: T*g(y) = sum_x K(x, y) g(x) w_x
    template <class S>
    std::vector<S> adjoint(const std::vector<S>& g) const {
        std::vector<S> out(n_);
        for (std::size_t x = 0; x < n_; ++x) {
            if (is_zero(g[x])) continue;
            S gw = g[x] * scalar_from_double<S>(w_[x]);
            for (std::size_t y = 0; y < n_; ++y)
                if (a_[x * n_ + y] != 0.0) out[y] += scalar_from_double<S>(a_[x * n_ + y]) * gw;
        }
        return out;
    }

    /// T 1_E at atoms, E given as an atom list.
    std::vector<double> apply_indicator(const std::vector<int>& e) const {
        std::vector<double> out(n_);
        for (std::size_t x = 0; x < n_; ++x) {
            double acc = 0;
            for (int y : e) acc += a_[x * n_ + static_cast<std::size_t>(y)] * w_[static_cast<std::size_t>(y)];
            out[x] = acc;
        }
        return out;
    }

private:
    const Measure* mu_ = nullptr;
    std::size_t n_ = 0;
    std::vector<double> a_, w_;
};

/// Exact values K(x, y) w_x w_y held as integers at one binary exponent.
class ExactPairing {
public:
    ExactPairing() = default;
    explicit ExactPairing(const OperatorMatrix& t) : n_(t.size()), v_(n_ * n_) {
        const Measure& m = t.measure();
        std::vector<Dyadic> kw(n_ * n_);
        bool first = true;
        int emin = 0, top = 0;
        for (std::size_t x = 0; x < n_; ++x)
            for (std::size_t y = 0; y < n_; ++y) {
                Dyadic d = Dyadic::from_double(t.at(x, y)) * m.weight(x) * m.weight(y);
                kw[x * n_ + y] = d;
                if (d.is_zero()) continue;
                emin = first ? d.exponent() : std::min(emin, d.exponent());
                top = first ? d.ilog2() : std::max(top, d.ilog2());
                first = false;
            }
        exp_ = emin;
        int headroom = 2;
        for (std::size_t k = n_ * n_; k > 1; k >>= 1) ++headroom;
        if (!first && top - emin + headroom > 125)
            throw std::overflow_error("exact pairing: dynamic range of kernel times weights too large");
        for (std::size_t i = 0; i < kw.size(); ++i) {
            const Dyadic& d = kw[i];
            if (d.is_zero()) continue;
            v_[i] = static_cast<__int128>(d.mantissa()) << (d.exponent() - exp_);
        }
    }

    std::size_t size() const { return n_; }
    int exponent() const { return exp_; }
    __int128 raw(std::size_t x, std::size_t y) const { return v_[x * n_ + y]; }

    /// <T 1_A, 1_B> = sum over x in B, y in A.
    FixedSum sets(const std::vector<int>& a, const std::vector<int>& b) const {
        __int128 s = 0;
        for (int x : b)
            for (int y : a) s += v_[static_cast<std::size_t>(x) * n_ + static_cast<std::size_t>(y)];
        return FixedSum(s);
    }

    template <class S>
    S value(FixedSum s) const {
        return fixed_to_scalar<S>(s, exp_);
    }

private:
    std::size_t n_ = 0;
    int exp_ = 0;
    std::vector<__int128> v_;
};

/// Two-dimensional prefix sums of an exact pairing with rows in one atom order (x side) and
/// columns in another (y side), so that pairings of contiguous atom ranges cost four lookups.
class RangePairing {
public:
    RangePairing() = default;
    RangePairing(const ExactPairing& p, const std::vector<int>& row_order, const std::vector<int>& col_order)
        : n_(p.size()), pre_((n_ + 1) * (n_ + 1)) {
        if (n_ > 2048) throw std::length_error("range pairing: too many atoms for the prefix table");
        for (std::size_t i = 0; i < n_; ++i) {
            __int128 row = 0;
            for (std::size_t j = 0; j < n_; ++j) {
                row += p.raw(static_cast<std::size_t>(row_order[i]), static_cast<std::size_t>(col_order[j]));
                pre_[(i + 1) * (n_ + 1) + j + 1] = pre_[i * (n_ + 1) + j + 1] + row;
            }
        }
    }

    /// Sum over rows [r0, r1) and columns [c0, c1).
    FixedSum rect(int r0, int r1, int c0, int c1) const {
        auto at = [&](int r, int c) { return pre_[static_cast<std::size_t>(r) * (n_ + 1) + static_cast<std::size_t>(c)]; };
        return FixedSum(at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0));
    }

private:
    std::size_t n_ = 0;
    std::vector<__int128> pre_;
};

/// Boxes used as the test family for testing and BMO constants.
struct CubeFamily {
    std::vector<Cube> cubes;
    std::string description;
};

/// Support cubes of `grids` sampled grids plus atom-centred cubes of every side 2^k, k in the
/// grid level range.
inline CubeFamily testing_family(const Measure& m, int grids, std::uint64_t seed) {
    CubeFamily fam;
    int kmin = resolving_level(m), kc = covering_level(m);
    for (int g = 0; g < grids; ++g) {
        DyadicGrid grid = DyadicGrid::sample(m, seed + static_cast<std::uint64_t>(g), 1, kmin, kc);
        GridTree t(m, grid);
        for (const auto& nd : t.nodes()) fam.cubes.push_back(nd.cube);
    }
    for (std::size_t i = 0; i < m.size(); ++i)
        for (int k = kmin; k <= kc; ++k) {
            Cube c{0, k, m.position(i)};
            for (auto& a : c.anchor) a -= Dyadic::pow2(k - 1);
            fam.cubes.push_back(std::move(c));
        }
    fam.description = std::to_string(grids) + " sampled grids (seed " + std::to_string(seed) +
                      ") and atom-centred cubes of side 2^k for k in [" + std::to_string(kmin) + ", " +
                      std::to_string(kc) + "]";
    return fam;
}

inline std::vector<int> atoms_in(const Measure& m, const Cube& c) {
    std::vector<int> out;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (c.contains(m.position(i))) out.push_back(static_cast<int>(i));
    return out;
}

/// Half-open box with the same centre and sigma times the side.
inline std::vector<int> atoms_in_dilate(const Measure& m, const Cube& c, const Dyadic& sigma) {
    Dyadic side = c.side();
    Dyadic half_growth = (sigma * side - side).scaled(-1);
    std::vector<int> out;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Point& x = m.position(i);
        bool in = true;
        for (std::size_t d = 0; d < x.size() && in; ++d) {
            Dyadic lo = c.anchor[d] - half_growth, hi = c.anchor[d] + side + half_growth;
            in = !(x[d] < lo) && x[d] < hi;
        }
        if (in) out.push_back(static_cast<int>(i));
    }
    return out;
}

struct TestingReport {
    double c_testing = 0;       // sup (mu(Q)^{-1} int_Q |T 1_Q|^{p1})^{1/p1}
    double c_testing_adj = 0;   // same for the adjoint with p2
    double c_wbp = 0;           // sup |<T 1_Q, 1_Q>| / mu(Q)
    std::size_t cubes = 0;
    std::string family;
};

inline TestingReport testing_constants(const OperatorMatrix& t, const CubeFamily& fam, double p1, double p2) {
    const Measure& m = t.measure();
    TestingReport rep;
    rep.family = fam.description;
    for (const Cube& c : fam.cubes) {
        std::vector<int> q = atoms_in(m, c);
        if (q.empty()) continue;
        ++rep.cubes;
        double mu = 0, a1 = 0, a2 = 0, pair = 0;
        for (int x : q) mu += t.weight(static_cast<std::size_t>(x));
        for (int x : q) {
            double tx = 0, ax = 0;
            for (int y : q) {
                tx += t.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) * t.weight(static_cast<std::size_t>(y));
                ax += t.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) * t.weight(static_cast<std::size_t>(y));
            }
            double wx = t.weight(static_cast<std::size_t>(x));
            a1 += std::pow(std::fabs(tx), p1) * wx;
            a2 += std::pow(std::fabs(ax), p2) * wx;
            pair += tx * wx;
        }
        rep.c_testing = std::max(rep.c_testing, std::pow(a1 / mu, 1 / p1));
        rep.c_testing_adj = std::max(rep.c_testing_adj, std::pow(a2 / mu, 1 / p2));
        rep.c_wbp = std::max(rep.c_wbp, std::fabs(pair) / mu);
    }
    return rep;
}

struct BmoReport {
    double norm = 0;
    double worst_bound_ratio = 0;  // bracket over 2 max|b| (mu(Q)/mu(sigma Q))^{1/p}; at most 1
    std::size_t cubes = 0;
};

/// sup over the family of (mu(sigma Q)^{-1} int_Q |b - <b>_Q|^p)^{1/p}; empty cubes are skipped.
inline BmoReport bmo_norm(const Measure& m, const std::vector<double>& b, const Dyadic& sigma, double p,
                          const CubeFamily& fam) {
    if (sigma < Dyadic(1)) throw std::invalid_argument("bmo: dilation must be at least 1");
    BmoReport rep;
    double bmax = 0;
    for (double v : b) bmax = std::max(bmax, std::fabs(v));
    for (const Cube& c : fam.cubes) {
        std::vector<int> q = atoms_in(m, c);
        if (q.empty()) continue;
        ++rep.cubes;
        double mu = 0, mb = 0;
        for (int x : q) {
            mu += m.weight(static_cast<std::size_t>(x)).to_double();
            mb += b[static_cast<std::size_t>(x)] * m.weight(static_cast<std::size_t>(x)).to_double();
        }
        mb /= mu;
        double musig = 0;
        for (int x : atoms_in_dilate(m, c, sigma)) musig += m.weight(static_cast<std::size_t>(x)).to_double();
        double acc = 0;
        for (int x : q) acc += std::pow(std::fabs(b[static_cast<std::size_t>(x)] - mb), p) * m.weight(static_cast<std::size_t>(x)).to_double();
        double val = std::pow(acc / musig, 1 / p);
        rep.norm = std::max(rep.norm, val);
        double bound = 2 * bmax * std::pow(mu / musig, 1 / p);
        if (bound > 0) rep.worst_bound_ratio = std::max(rep.worst_bound_ratio, val / bound);
    }
    return rep;
}

struct NormEstimate {
    double p = 2;
    double lower = 0;
    double upper = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    std::string method;
    bool consistent() const { return lower <= upper * (1 + 1e-9); }
};

/// Largest singular value of B = W^{1/2} A W^{1/2} (the L^2(mu) norm) by Lanczos iteration on B^T B
/// with full reorthogonalisation; Ritz values increase to the top eigenvalue.
inline NormEstimate l2_norm(const OperatorMatrix& t, double tol = 1e-10, std::uint64_t seed = 1) {
    const std::size_t n = t.size();
    NormEstimate est;
    est.p = 2;
    est.method = "lanczos";
    if (n == 0) {
        est.lower = est.upper = 0;
        est.converged = true;
        return est;
    }
    std::vector<double> sw(n);
    for (std::size_t i = 0; i < n; ++i) sw[i] = std::sqrt(t.weight(i));
    auto mult = [&](const std::vector<double>& v) {  // B^T B v
        std::vector<double> u(n), out(n);
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0;
            for (std::size_t y = 0; y < n; ++y) acc += t.at(x, y) * sw[y] * v[y];
            u[x] = acc * sw[x];
        }
        for (std::size_t x = 0; x < n; ++x) {
            double ux = u[x] * sw[x];
            if (ux == 0) continue;
            for (std::size_t y = 0; y < n; ++y) out[y] += t.at(x, y) * ux;
        }
        for (std::size_t y = 0; y < n; ++y) out[y] *= sw[y];
        return out;
    };
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
        return s;
    };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> basis;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    double nv = std::sqrt(dot(v, v));
    for (auto& x : v) x /= nv;
    std::vector<double> alpha, beta;
    double theta = 0, prev = -1;
    int stable = 0;
    // Top eigenvalue of the symmetric tridiagonal matrix by Sturm-sequence bisection.
    auto top_eig = [&]() {
        std::size_t k = alpha.size();
        double lo = 0, hi = 0;
        for (std::size_t i = 0; i < k; ++i) {
            double r = std::fabs(alpha[i]) + (i ? std::fabs(beta[i - 1]) : 0) + (i + 1 < k ? std::fabs(beta[i]) : 0);
            hi = std::max(hi, r);
        }
        auto count_above = [&](double x) {
            int c = 0;
            double d = 1;
            for (std::size_t i = 0; i < k; ++i) {
                double b2 = i ? beta[i - 1] * beta[i - 1] : 0;
                d = alpha[i] - x - (i ? b2 / d : 0);
                if (d == 0) d = -1e-300;
                if (d > 0) ++c;
            }
            return c;
        };
        for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
            double mid = 0.5 * (lo + hi);
            (count_above(mid) > 0 ? lo : hi) = mid;
        }
        return hi;
    };
    for (std::size_t k = 0; k < n; ++k) {
        basis.push_back(v);
        std::vector<double> w = mult(v);
        double a = dot(w, v);
        alpha.push_back(a);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& q : basis) {
                double c = dot(w, q);
                for (std::size_t i = 0; i < n; ++i) w[i] -= c * q[i];
            }
        double b = std::sqrt(dot(w, w));
        theta = top_eig();
        ++est.iterations;
        stable = (prev >= 0 && std::fabs(theta - prev) <= tol * theta * 1e-3) ? stable + 1 : 0;
        prev = theta;
        if (stable >= 3 || b <= 1e-14 * std::max(theta, 1e-300)) {
            est.converged = true;
            break;
        }
        beta.push_back(b);
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / b;
    }
    if (basis.size() == n) est.converged = true;
    est.lower = est.upper = std::sqrt(std::max(theta, 0.0));
    return est;
}

/// Operator norms on L^1(mu) (max column sum) and L^infinity(mu) (max row sum).
inline double l1_norm(const OperatorMatrix& t) {
    double best = 0;
    for (std::size_t y = 0; y < t.size(); ++y) {
        double s = 0;
        for (std::size_t x = 0; x < t.size(); ++x) s += std::fabs(t.at(x, y)) * t.weight(x);
        best = std::max(best, s);
    }
    return best;
}

inline double linf_norm(const OperatorMatrix& t) {
    double best = 0;
    for (std::size_t x = 0; x < t.size(); ++x) {
        double s = 0;
        for (std::size_t y = 0; y < t.size(); ++y) s += std::fabs(t.at(x, y)) * t.weight(y);
        best = std::max(best, s);
    }
    return best;
}

/// Lower bound for ||T||_{L^p(mu)} by a nonlinear power ascent (Boyd's iteration) from several
/// starts; upper bound by Riesz-Thorin between L^2 and L^1 or L^infinity.
inline NormEstimate lp_norm_estimate(const OperatorMatrix& t, double p, std::uint64_t seed = 1, int restarts = 6,
                                     int max_iter = 400) {
    if (!(p > 1)) throw std::invalid_argument("operator norm: p must exceed 1");
    if (p == 2) return l2_norm(t, 1e-10, seed);
    const std::size_t n = t.size();
    NormEstimate est;
    est.p = p;
    est.method = "boyd-ascent/riesz-thorin";
    NormEstimate two = l2_norm(t, 1e-10, seed);
    double q = p / (p - 1);
    est.upper = p < 2 ? std::pow(l1_norm(t), 1 - 2 / q) * std::pow(two.upper, 2 / q)
                      : std::pow(two.upper, 2 / p) * std::pow(linf_norm(t), 1 - 2 / p);
    auto norm_p = [&](const std::vector<double>& f) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += std::pow(std::fabs(f[i]), p) * t.weight(i);
        return std::pow(s, 1 / p);
    };
    auto signed_pow = [](double v, double e) { return v == 0 ? 0.0 : std::copysign(std::pow(std::fabs(v), e), v); };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    for (int r = 0; r < restarts; ++r) {
        std::vector<double> f(n);
        for (std::size_t i = 0; i < n; ++i) f[i] = r == 0 ? 1.0 : (r == 1 ? (i < n / 2 ? 1.0 : -1.0) : nd(rng));
        double prev = -1;
        for (int it = 0; it < max_iter; ++it) {
            double nf = norm_p(f);
            if (nf == 0) break;
            for (auto& v : f) v /= nf;
            std::vector<double> g = t.apply(f);
            double ratio = norm_p(g);
            est.lower = std::max(est.lower, ratio);
            ++est.iterations;
            if (std::fabs(ratio - prev) <= 1e-12 * std::max(ratio, 1e-300)) break;
            prev = ratio;
            for (auto& v : g) v = signed_pow(v, p - 1);
            std::vector<double> z = t.adjoint(g);
            for (std::size_t i = 0; i < n; ++i) f[i] = signed_pow(z[i], q - 1);
        }
    }
    est.converged = two.converged;
    return est;
}

/// Minimal sup distance from the closed box q to R \ P, for q inside p inside r (infinite if R = P).
inline double dist_to_difference(const Cube& q, const Cube& p, const Cube& r) {
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = q.anchor.size();
    auto lo = [](const Cube& c, std::size_t i) { return c.anchor[i].to_double(); };
    auto hi = [](const Cube& c, std::size_t i) { return (c.anchor[i] + c.side()).to_double(); };
    for (std::size_t i = 0; i < n; ++i)
        for (int side = 0; side < 2; ++side) {
            // slab of R on one side of P along coordinate i
            double slo = side == 0 ? lo(r, i) : hi(p, i), shi = side == 0 ? lo(p, i) : hi(r, i);
            if (!(slo < shi)) continue;
            double d = 0;
            for (std::size_t j = 0; j < n; ++j) {
                double blo = j == i ? slo : lo(r, j), bhi = j == i ? shi : hi(r, j);
                d = std::max(d, std::max({0.0, blo - hi(q, j), lo(q, j) - bhi}));
            }
            best = std::min(best, d);
        }
    return best;
}

struct OffDiagonalReport {
    std::size_t triples = 0;
    std::size_t violations = 0;
    double worst_ratio = 0;  // lhs / bound
    double constant = 0;     // C_smooth C_lambda / (1 - 2^{-eta})
};

/// |T 1_{R\P}(x) - T 1_{R\P}(x_Q)| <= C (l Q / dist(Q, R\P))^eta for atoms x in Q, over seeded
/// nested triples Q in P in R of support cubes with l Q <= dist(Q, R\P).
inline OffDiagonalReport off_diagonal_check(const Kernel& k, const GridTree& t, const DominatingFunction& lambda,
                                            double eta, std::size_t triples, std::uint64_t seed,
                                            std::size_t max_attempts = 0) {
    const Measure& m = t.measure();
    OffDiagonalReport rep;
    double c_lambda = lambda.doubling_constant();
    rep.constant = k.declared_smoothness(lambda.amplitude, eta) * c_lambda / (1 - std::pow(2.0, -eta));
    if (max_attempts == 0) max_attempts = 200 * triples;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(1, t.size() > 1 ? t.size() - 1 : 1);
    std::vector<std::vector<double>> x(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) x[i] = to_doubles(m.position(i));
    for (std::size_t att = 0; att < max_attempts && rep.triples < triples && t.size() > 2; ++att) {
        int q = static_cast<int>(pick(rng));
        std::vector<int> chain;
        for (int a = t.node(q).parent; a >= 0; a = t.node(a).parent) chain.push_back(a);
        if (chain.size() < 2) continue;
        std::uniform_int_distribution<std::size_t> pi(0, chain.size() - 2);
        std::size_t ip = pi(rng);
        std::uniform_int_distribution<std::size_t> ri(ip + 1, chain.size() - 1);
        int p = chain[ip], r = chain[ri(rng)];
        const Cube &cq = t.node(q).cube, &cp = t.node(p).cube, &cr = t.node(r).cube;
        double dist = dist_to_difference(cq, cp, cr), lq = cq.side().to_double();
        if (!(lq <= dist) || !std::isfinite(dist)) continue;
        ++rep.triples;
        std::vector<int> diff;
        const GridNode &np = t.node(p), &nr = t.node(r);
        for (int pos = nr.begin; pos < nr.end; ++pos)
            if (pos < np.begin || pos >= np.end) diff.push_back(t.order()[static_cast<std::size_t>(pos)]);
        std::vector<double> center = to_doubles(cq.center());
        double bound = rep.constant * std::pow(lq / dist, eta);
        for (int pos = t.node(q).begin; pos < t.node(q).end; ++pos) {
            std::size_t a = static_cast<std::size_t>(t.order()[static_cast<std::size_t>(pos)]);
            double lhs = 0;
            for (int y : diff)
                lhs += (k(x[a], x[static_cast<std::size_t>(y)]) - k(center, x[static_cast<std::size_t>(y)])) *
                       m.weight(static_cast<std::size_t>(y)).to_double();
            lhs = std::fabs(lhs);
            double ratio = bound > 0 ? lhs / bound : (lhs > 0 ? std::numeric_limits<double>::infinity() : 0.0);
            rep.worst_ratio = std::max(rep.worst_ratio, ratio);
            if (lhs > bound * (1 + 1e-9)) {
                ++rep.violations;
                break;
            }
        }
    }
    return rep;
}

struct ContainmentReport {
    std::size_t pairs = 0;           // checked good pairs
    std::size_t failures = 0;        // Q not inside pi^{u + theta(u+m)} P
    std::size_t skipped = 0;         // target level above the grid range
    std::size_t attempts = 0;
    std::size_t kernel_pairs = 0;    // pairs with l Q <= dist(Q, P) used for the kernel constant
    double kernel_constant = 0;      // max |K(x,y) - K(x_Q,y)| mu(S) 2^{eta (u+m)/4}
};

/// For good Q of grid 2 and P of grid 1 with l Q = 2^{-m} l P, checks that Q lies in the level
/// l P + u + theta(u+m) ancestor S of P (2^u < D(Q,P)/l P <= 2^{u+1}), and records the empirical
/// kernel-difference constant. Per attempt both grids are resampled with their top a few levels
/// above level(Q) + theta(0), and level(Q) is drawn from the atom-resolving range.
inline ContainmentReport containment_check(const Measure& m, const Kernel& k, const GoodnessParams& gp,
                                           std::size_t target_pairs, std::uint64_t seed, int max_m = 4,
                                           std::size_t max_attempts = 200000) {
    ContainmentReport rep;
    int kmin = resolving_level(m), kc = covering_level(m);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> x(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) x[i] = to_doubles(m.position(i));
    std::uniform_int_distribution<std::size_t> atom(0, m.size() - 1);
    std::uniform_int_distribution<int> level(kmin, std::max(kmin, kc - 1));
    const double eta = gp.eta_d();
    const int th0 = theta(0, gp);
    while (rep.pairs < target_pairs && rep.attempts < max_attempts) {
        ++rep.attempts;
        std::uint64_t s = rng();
        int lq = level(rng);
        int top = std::max(kc, lq + th0 + static_cast<int>(rng() % 4));
        DyadicGrid g1 = DyadicGrid::sample(m, s, 1, kmin, top), g2 = DyadicGrid::sample(m, s, 2, kmin, top);
        const Point& xq = m.position(atom(rng));
        Cube q = g2.cube_at(xq, lq);
        if (!is_good(q, g1, g2, gp)) continue;
        for (int mi = 0; mi <= max_m; ++mi) {
            int lp = lq + mi;
            std::vector<std::size_t> near;
            Dyadic reach = Dyadic::pow2(lp + 2);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (sup_dist(m.position(i), xq) <= reach) near.push_back(i);
            const Point& xp = m.position(near[static_cast<std::size_t>(rng() % near.size())]);
            Cube p = g1.cube_at(xp, lp);
            Dyadic big_d = long_distance(q, p);
            double ratio = big_d.to_double() / p.side().to_double();
            int u = 0;
            while (std::ldexp(1.0, u + 1) < ratio) ++u;
            int ls = lp + u + theta(u + mi, gp);
            if (ls > g1.k_max()) {
                ++rep.skipped;
                continue;
            }
            ++rep.pairs;
            Cube sc = g1.parent(p, ls - lp);
            if (!q.subset_of(sc)) ++rep.failures;
            if (q.side() <= cube_dist(q, p)) {
                std::vector<int> aq = atoms_in(m, q), ap = atoms_in(m, p);
                if (aq.empty() || ap.empty()) continue;
                ++rep.kernel_pairs;
                double mus = 0;
                for (int a : atoms_in(m, sc)) mus += m.weight(static_cast<std::size_t>(a)).to_double();
                std::vector<double> cq = to_doubles(q.center());
                double best = 0;
                for (int a : aq)
                    for (int b : ap)
                        best = std::max(best, std::fabs(k(x[static_cast<std::size_t>(a)], x[static_cast<std::size_t>(b)]) -
                                                         k(cq, x[static_cast<std::size_t>(b)])));
                rep.kernel_constant = std::max(rep.kernel_constant, best * mus * std::pow(2.0, eta * (u + mi) / 4));
            }
        }
    }
    return rep;
}

}  // namespace czlab

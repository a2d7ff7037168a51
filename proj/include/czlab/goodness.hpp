#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "czlab/grid.hpp"
#include "czlab/numeric.hpp"

namespace czlab {

/// gamma = min{eta/(4d+eta), eta/(2(d+eta))}, exact.
inline Rational derive_gamma(const Rational& d, const Rational& eta) {
    if (sgn(d) <= 0) throw std::invalid_argument("derive_gamma: d must be positive");
    if (sgn(eta) <= 0 || eta > 1) throw std::invalid_argument("derive_gamma: eta must lie in (0,1]");
    Rational a = eta / (4 * d + eta), b = eta / (2 * (d + eta));
    Rational g = a < b ? a : b;
    g.canonicalize();
    return g;
}

/// Rational upper bound for a positive double (rounded outward to 2^-40).
inline Rational rational_ceil(double x) {
    Rational q(std::ceil(std::ldexp(x, 40)));
    q /= Rational(mpz_class(1) << 40);
    q.canonicalize();
    return q;
}

struct GoodnessParams {
    int r = 1;
    Rational gamma{1, 5};
    Rational eta{1};
    Rational d{1};

    /// d gamma/(1-gamma) <= eta/4 and gamma <= eta/(2(d+eta)), checked exactly.
    bool constraints_hold() const {
        return d * gamma / (1 - gamma) <= eta / 4 && gamma <= eta / (2 * (d + eta));
    }
    double gamma_d() const { return gamma.get_d(); }
    double eta_d() const { return eta.get_d(); }

    static GoodnessParams derived(int r, const Rational& d, const Rational& eta) {
        GoodnessParams p;
        p.r = r;
        p.d = d;
        p.eta = eta;
        p.gamma = derive_gamma(d, eta);
        return p;
    }
};

/// ceil((gamma j + r)/(1 - gamma)), exact.
inline int theta(int j, const GoodnessParams& p) {
    if (j < 0) throw std::invalid_argument("theta: j must be nonnegative");
    Rational v = (p.gamma * j + p.r) / (1 - p.gamma);
    mpz_class c;
    mpz_cdiv_q(c.get_mpz_t(), v.get_num_mpz_t(), v.get_den_mpz_t());
    return static_cast<int>(c.get_si());
}

/// dist <= 2^{gamma kq + (1-gamma) kp}, i.e. dist <= (l Q)^gamma (l P)^{1-gamma}, decided exactly.
inline bool within_threshold(const Dyadic& dist, int kq, int kp, const Rational& gamma) {
    if (dist.sign() <= 0) return true;
    std::int64_t m = dist.mantissa();
    int x = dist.exponent();
    // dist = m 2^x with m odd; compare log2 m against c = kp + gamma (kq - kp) - x
    Rational c = kp - x + gamma * (kq - kp);
    if (m == 1) return sgn(c) >= 0;
    long double lm = std::log2(static_cast<long double>(m));
    long double cl = static_cast<long double>(c.get_d());
    long double tol = 1e-12L * std::max<long double>(1.0L, std::fabs(cl));
    if (lm < cl - tol) return true;
    if (lm > cl + tol) return false;
    using big = boost::multiprecision::cpp_bin_float_100;
    big bm = boost::multiprecision::log2(big(m));
    big bc = big(c.get_num().get_str()) / big(c.get_den().get_str());
    if (boost::multiprecision::abs(bm - bc) < big("1e-90"))
        throw std::runtime_error("within_threshold: comparison unresolved at 100 digits");
    return bm <= bc;
}

struct BadnessResult {
    bool bad = false;
    bool vacuous = false;  // no admissible level in range
    int witness_level = 0;
    Dyadic witness_dist;
};

/// Whether Q is bad against grid g: some P of g with l P >= 2^r l Q has dist(Q, dP) at most the
/// threshold. Levels of P run from level(Q)+r to the top level of g.
inline BadnessResult k_bad(const Cube& q, const DyadicGrid& g, const GoodnessParams& p) {
    BadnessResult res;
    int lo = q.level + p.r, hi = g.k_max();
    if (lo > hi) {
        res.vacuous = true;
        return res;
    }
    for (int k = lo; k <= hi; ++k) {
        Dyadic d = g.lattice_boundary_dist(q, k);
        if (within_threshold(d, q.level, k, p.gamma)) {
            res.bad = true;
            res.witness_level = k;
            res.witness_dist = d;
            return res;
        }
    }
    return res;
}

inline bool is_k_bad(const Cube& q, const DyadicGrid& g, const GoodnessParams& p) { return k_bad(q, g, p).bad; }

struct Goodness {
    bool good = true;
    bool vacuous = false;
};

inline Goodness classify(const Cube& q, const DyadicGrid& g1, const DyadicGrid& g2, const GoodnessParams& p) {
    BadnessResult a = k_bad(q, g1, p), b = k_bad(q, g2, p);
    return {!(a.bad || b.bad), a.vacuous && b.vacuous};
}

inline bool is_good(const Cube& q, const DyadicGrid& g1, const DyadicGrid& g2, const GoodnessParams& p) {
    return classify(q, g1, g2, p).good;
}

/// Good flags for every node of a tree.
struct GoodnessMap {
    std::vector<char> good;
    std::vector<char> vacuous;
    bool operator[](int id) const { return good[static_cast<std::size_t>(id)] != 0; }
    std::size_t count_good() const {
        std::size_t c = 0;
        for (char g : good) c += g != 0;
        return c;
    }
};

inline GoodnessMap classify_tree(const GridTree& t, const DyadicGrid& g1, const DyadicGrid& g2,
                                 const GoodnessParams& p) {
    GoodnessMap m;
    m.good.resize(t.size());
    m.vacuous.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        Goodness c = classify(t.node(static_cast<int>(i)).cube, g1, g2, p);
        m.good[i] = c.good;
        m.vacuous[i] = c.vacuous;
    }
    return m;
}

struct BadnessStats {
    int r = 0;
    int level = 0;
    int span = 0;  // number of levels above Q in the sampled grids
    std::size_t samples = 0;
    std::size_t bad_own = 0;    // bad against the grid Q lives in
    std::size_t bad_other = 0;  // bad against the independent grid
    std::size_t bad = 0;        // either

    static double freq_of(std::size_t c, std::size_t n) { return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0; }
    double freq() const { return freq_of(bad, samples); }
    double freq_own() const { return freq_of(bad_own, samples); }
    double freq_other() const { return freq_of(bad_other, samples); }
    /// Binomial 3-sigma half width.
    double ci_halfwidth() const {
        if (!samples) return 0.0;
        double f = freq();
        return 3.0 * std::sqrt(f * (1 - f) / static_cast<double>(samples));
    }
};

/// Monte-Carlo badness frequency of the cube Q = Qhat + omega_j with Qhat = [0, 2^level)^n: both grids
/// are resampled per sample on the levels [level, level + span].
inline BadnessStats estimate_bad_probability(int level, int span, const GoodnessParams& p, std::size_t samples,
                                             std::uint64_t seed, int dim = 1) {
    if (samples < 100) throw std::invalid_argument("estimate_bad_probability: at least 100 samples required");
    BadnessStats st;
    st.r = p.r;
    st.level = level;
    st.span = span;
    st.samples = samples;
    Measure origin(dim, {Point(static_cast<std::size_t>(dim))}, {Dyadic(1)});
    for (std::size_t s = 0; s < samples; ++s) {
        std::uint64_t base = seed * 0x9e3779b97f4a7c15ull + s;
        DyadicGrid own(sample_shift(base, 1, level, level + span, dim), origin);
        DyadicGrid other(sample_shift(base, 2, level, level + span, dim), origin);
        Cube q{1, level, own.shift_sum(level)};
        bool a = is_k_bad(q, own, p), b = is_k_bad(q, other, p);
        st.bad_own += a;
        st.bad_other += b;
        st.bad += a || b;
    }
    return st;
}

inline void write_badness_csv_header(std::ostream& os) { os << "r,level,samples,freq,ci_halfwidth\n"; }

inline void write_badness_csv_row(std::ostream& os, const BadnessStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%d,%zu,%.6f,%.6f\n", s.r, s.level, s.samples, s.freq(), s.ci_halfwidth());
    os << buf;
}

}  // namespace czlab

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "czlab/grid.hpp"
#include "czlab/measure.hpp"
#include "czlab/numeric.hpp"

namespace czlab {

/// Values per atom, indexed like the measure.
template <class S>
using SupportFunction = std::vector<S>;

template <class S>
std::vector<S> weights_as(const Measure& m) {
    std::vector<S> w(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) w[i] = scalar_from_dyadic<S>(m.weight(i));
    return w;
}

template <class S>
S integral(const Measure& m, const SupportFunction<S>& f) {
    S s{};
    for (std::size_t i = 0; i < m.size(); ++i) s += f[i] * scalar_from_dyadic<S>(m.weight(i));
    return s;
}

/// <f, g>_mu
template <class S>
S inner(const Measure& m, const SupportFunction<S>& f, const SupportFunction<S>& g) {
    S s{};
    for (std::size_t i = 0; i < m.size(); ++i) s += f[i] * g[i] * scalar_from_dyadic<S>(m.weight(i));
    return s;
}

template <class S>
double lp_norm_pow(const Measure& m, const SupportFunction<S>& f, double p) {
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += std::pow(std::fabs(to_double(f[i])), p) * m.weight(i).to_double();
    return s;
}

template <class S>
double lp_norm(const Measure& m, const SupportFunction<S>& f, double p) {
    return std::pow(lp_norm_pow(m, f, p), 1.0 / p);
}

/// ||g||_p / ||f||_p (0 when f vanishes).
template <class S>
double lp_ratio(const Measure& m, const SupportFunction<S>& f, const SupportFunction<S>& g, double p) {
    double a = lp_norm(m, f, p);
    return a > 0 ? lp_norm(m, g, p) / a : 0.0;
}

/// Mean of f over an arbitrary cube; zero when the cube carries no mass.
template <class S>
S average(const Measure& m, const SupportFunction<S>& f, const Cube& q) {
    S num{};
    Dyadic mass;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (q.contains(m.position(i))) {
            num += f[i] * scalar_from_dyadic<S>(m.weight(i));
            mass += m.weight(i);
        }
    if (mass.is_zero()) return S{};
    return num / scalar_from_dyadic<S>(mass);
}

/// Integrals of f over every node, from a prefix sum in tree order.
template <class S>
std::vector<S> node_integrals(const GridTree& t, const SupportFunction<S>& f) {
    const Measure& m = t.measure();
    std::vector<S> pre(t.order().size() + 1);
    for (std::size_t p = 0; p < t.order().size(); ++p) {
        auto a = static_cast<std::size_t>(t.order()[p]);
        pre[p + 1] = pre[p] + f[a] * scalar_from_dyadic<S>(m.weight(a));
    }
    std::vector<S> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& nd = t.node(static_cast<int>(i));
        out[i] = pre[static_cast<std::size_t>(nd.end)] - pre[static_cast<std::size_t>(nd.begin)];
    }
    return out;
}

template <class S>
std::vector<S> node_averages(const GridTree& t, const SupportFunction<S>& f) {
    std::vector<S> a = node_integrals(t, f);
    for (std::size_t i = 0; i < t.size(); ++i) a[i] /= scalar_from_dyadic<S>(t.node(static_cast<int>(i)).mass);
    return a;
}

/// Child constants of Delta_Q f for one node; slots without mass carry 0.
template <class S>
std::vector<S> delta_coefficients(const GridTree& t, const std::vector<S>& avg, int id) {
    const auto& nd = t.node(id);
    std::vector<S> c(nd.child.size());
    for (std::size_t s = 0; s < nd.child.size(); ++s)
        if (nd.child[s] >= 0) c[s] = avg[static_cast<std::size_t>(nd.child[s])] - avg[static_cast<std::size_t>(id)];
    return c;
}

template <class S>
struct MartingaleExpansion {
    const GridTree* tree = nullptr;
    S top{};                           // <f>_{Q_0}
    std::vector<std::vector<S>> delta;  // per node, per child slot; empty at the finest level

    bool is_zero(int id) const {
        for (const S& v : delta[static_cast<std::size_t>(id)])
            if (!is_zero_scalar(v)) return false;
        return true;
    }

    /// Delta_Q f at an atom (0 outside Q).
    S value(int id, int atom) const {
        const auto& d = delta[static_cast<std::size_t>(id)];
        if (d.empty()) return S{};
        int c = tree->child_with_atom(id, atom);
        if (c < 0) return S{};
        return d[static_cast<std::size_t>(slot_of(id, c))];
    }

    int slot_of(int id, int child) const {
        const auto& ch = tree->node(id).child;
        for (std::size_t s = 0; s < ch.size(); ++s)
            if (ch[s] == child) return static_cast<int>(s);
        throw std::logic_error("slot_of: not a child");
    }

private:
    static bool is_zero_scalar(const S& v) { return czlab::is_zero(v); }
};

template <class S>
MartingaleExpansion<S> expand(const GridTree& t, const SupportFunction<S>& f) {
    if (f.size() != t.measure().size()) throw std::invalid_argument("expand: function length differs from atom count");
    std::vector<S> avg = node_averages(t, f);
    MartingaleExpansion<S> e;
    e.tree = &t;
    e.top = avg[0];
    e.delta.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!t.node(static_cast<int>(i)).child.empty()) e.delta[i] = delta_coefficients(t, avg, static_cast<int>(i));
    return e;
}

/// Walks the leaf-to-root chain of every atom and sums weighted differences; weights per node.
template <class S, class Coef>
SupportFunction<S> synthesize(const MartingaleExpansion<S>& e, Coef&& coef, const S& top) {
    const GridTree& t = *e.tree;
    SupportFunction<S> out(t.measure().size());
    for (std::size_t a = 0; a < out.size(); ++a) {
        S v = top;
        int id = t.leaf_of(static_cast<int>(a));
        int prev = -1;
        while (id >= 0) {
            if (prev >= 0 && !e.delta[static_cast<std::size_t>(id)].empty()) {
                S c = coef(id);
                if (!is_zero(c)) v += c * e.delta[static_cast<std::size_t>(id)][static_cast<std::size_t>(e.slot_of(id, prev))];
            }
            prev = id;
            id = t.node(id).parent;
        }
        out[a] = v;
    }
    return out;
}

template <class S>
SupportFunction<S> reconstruct(const MartingaleExpansion<S>& e) {
    return synthesize(e, [](int) { return S(1); }, e.top);
}

/// sum_Q eps_Q Delta_Q f without the top term; |eps_Q| <= 1 is a contract.
template <class S>
SupportFunction<S> transform(const MartingaleExpansion<S>& e, const std::vector<S>& eps) {
    if (eps.size() != e.delta.size()) throw std::invalid_argument("transform: one coefficient per node required");
    for (const S& v : eps)
        if (scalar_abs(v) > S(1)) throw std::invalid_argument("transform: coefficient outside [-1, 1]");
    return synthesize(e, [&](int id) { return eps[static_cast<std::size_t>(id)]; }, S{});
}

/// Delta_Q f as a function on atoms.
template <class S>
SupportFunction<S> delta_function(const MartingaleExpansion<S>& e, int id) {
    const GridTree& t = *e.tree;
    SupportFunction<S> out(t.measure().size());
    const auto& nd = t.node(id);
    if (e.delta[static_cast<std::size_t>(id)].empty()) return out;
    for (int p = nd.begin; p < nd.end; ++p) {
        int a = t.order()[static_cast<std::size_t>(p)];
        out[static_cast<std::size_t>(a)] = e.value(id, a);
    }
    return out;
}

/// sum over k of |Delta_{j,k} f|^2, pointwise (exact).
template <class S>
SupportFunction<S> square_function_sq(const MartingaleExpansion<S>& e) {
    const GridTree& t = *e.tree;
    SupportFunction<S> s(t.measure().size());
    for (std::size_t a = 0; a < s.size(); ++a) {
        S v{};
        int id = t.leaf_of(static_cast<int>(a)), prev = -1;
        while (id >= 0) {
            if (prev >= 0 && !e.delta[static_cast<std::size_t>(id)].empty()) {
                const S& d = e.delta[static_cast<std::size_t>(id)][static_cast<std::size_t>(e.slot_of(id, prev))];
                v += d * d;
            }
            prev = id;
            id = t.node(id).parent;
        }
        s[a] = v;
    }
    return s;
}

template <class S>
std::vector<double> square_function(const MartingaleExpansion<S>& e) {
    SupportFunction<S> sq = square_function_sq(e);
    std::vector<double> out(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) out[i] = std::sqrt(to_double(sq[i]));
    return out;
}

/// ||f||_2^2 - ||Sf||_2^2 - <f>_{Q0}^2 mu(Q0); zero by orthogonality.
template <class S>
S parseval_defect(const MartingaleExpansion<S>& e, const SupportFunction<S>& f) {
    const Measure& m = e.tree->measure();
    SupportFunction<S> one(m.size(), S(1));
    S lhs = inner(m, f, f);
    S sq = inner(m, square_function_sq(e), one);
    S top = e.top * e.top * scalar_from_dyadic<S>(m.total_mass());
    return lhs - sq - top;
}

/// Sum over distinct nested node pairs of |<Delta_Q f, Delta_Q' f>_mu|; disjoint pairs share no atom.
template <class S>
S orthogonality_defect(const MartingaleExpansion<S>& e) {
    const GridTree& t = *e.tree;
    const Measure& m = t.measure();
    S total{};
    for (std::size_t i = 0; i < t.size(); ++i) {
        int id = static_cast<int>(i);
        if (e.delta[i].empty()) continue;
        const auto& nd = t.node(id);
        for (int anc = nd.parent; anc >= 0; anc = t.node(anc).parent) {
            S ip{};
            for (int p = nd.begin; p < nd.end; ++p) {
                int a = t.order()[static_cast<std::size_t>(p)];
                ip += e.value(id, a) * e.value(anc, a) * scalar_from_dyadic<S>(m.weight(static_cast<std::size_t>(a)));
            }
            total += scalar_abs(ip);
        }
    }
    return total;
}

/// E_{j,k} f: average over the level-k cube containing each atom.
template <class S>
SupportFunction<S> conditional_expectation(const GridTree& t, const std::vector<S>& avg, int k) {
    SupportFunction<S> out(t.measure().size());
    for (std::size_t a = 0; a < out.size(); ++a) {
        int id = t.ancestor(t.leaf_of(static_cast<int>(a)), k);
        if (id >= 0 && t.node(id).level() == k) out[a] = avg[static_cast<std::size_t>(id)];
    }
    return out;
}

struct SteinSides {
    double lhs = 0, rhs = 0;
};

/// || (sum_k |E_k f_k|^2)^{1/2} ||_p against || (sum_k |f_k|^2)^{1/2} ||_p with f_k indexed from k_min.
template <class S>
SteinSides stein_sides(const GridTree& t, const std::vector<SupportFunction<S>>& fk, double p) {
    const int k0 = t.grid().k_min(), k1 = t.grid().k_max();
    if (static_cast<int>(fk.size()) != k1 - k0 + 1) throw std::invalid_argument("stein_sides: one function per level");
    const Measure& m = t.measure();
    std::vector<double> l(m.size()), r(m.size());
    for (int k = k0; k <= k1; ++k) {
        const auto& f = fk[static_cast<std::size_t>(k - k0)];
        SupportFunction<S> ek = conditional_expectation(t, node_averages(t, f), k);
        for (std::size_t a = 0; a < m.size(); ++a) {
            double x = to_double(ek[a]), y = to_double(f[a]);
            l[a] += x * x;
            r[a] += y * y;
        }
    }
    SteinSides s;
    for (std::size_t a = 0; a < m.size(); ++a) {
        double w = m.weight(a).to_double();
        s.lhs += std::pow(l[a], p / 2) * w;
        s.rhs += std::pow(r[a], p / 2) * w;
    }
    s.lhs = std::pow(s.lhs, 1 / p);
    s.rhs = std::pow(s.rhs, 1 / p);
    return s;
}

}  // namespace czlab

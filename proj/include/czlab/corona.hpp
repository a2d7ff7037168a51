#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <vector>

#include "czlab/goodness.hpp"
#include "czlab/martingale.hpp"

namespace czlab {

inline constexpr int kWholeSpace = -1;

/// Stopping family of one grid tree; cubes are indexed 0..size()-1 in construction (preorder) order.
template <class S>
struct StoppingTree {
    const GridTree* tree = nullptr;
    std::vector<int> node;    // grid-tree node of each stopping cube
    std::vector<S> sigma;     // <|f|>_S
    std::vector<int> parent;  // stopping parent or kWholeSpace
    std::vector<int> depth;   // roots have depth 0
    std::vector<std::vector<int>> children;
    std::vector<int> roots;
    std::vector<int> of_node;  // per grid node: minimal stopping cube containing it

    std::size_t size() const { return node.size(); }
    const Cube& cube(int s) const { return tree->node(node[static_cast<std::size_t>(s)]).cube; }
    const Dyadic& mass(int s) const { return tree->node(node[static_cast<std::size_t>(s)]).mass; }

    /// pi^t: t-fold stopping parent; kWholeSpace past the roots.
    int ancestor(int s, int t) const {
        while (s != kWholeSpace && t-- > 0) s = parent[static_cast<std::size_t>(s)];
        return s;
    }

    /// Minimal stopping cube containing the box q (any grid), or kWholeSpace.
    int parent_of_cube(const Cube& q) const {
        int id = tree->smallest_containing(q);
        return id < 0 ? kWholeSpace : of_node[static_cast<std::size_t>(id)];
    }

    /// pi^t_S of a grid-tree node of this grid (t = 0 gives the minimal containing stopping cube).
    int stopping_parent(int grid_node, int t = 0) const {
        return ancestor(of_node[static_cast<std::size_t>(grid_node)], t);
    }

    /// Stopping cubes t generations below s.
    std::vector<int> descendants(int s, int t) const {
        std::vector<int> cur{s};
        for (int i = 0; i < t; ++i) {
            std::vector<int> nxt;
            for (int c : cur)
                for (int d : children[static_cast<std::size_t>(c)]) nxt.push_back(d);
            cur.swap(nxt);
        }
        return cur;
    }

    /// Depth difference if d lies in the stopping subtree of s, else -1.
    int generation(int s, int d) const {
        int t = 0;
        while (d != kWholeSpace) {
            if (d == s) return t;
            d = parent[static_cast<std::size_t>(d)];
            ++t;
        }
        return -1;
    }
};

template <class S>
std::vector<S> abs_values(const SupportFunction<S>& f) {
    std::vector<S> a(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) a[i] = scalar_abs(f[i]);
    return a;
}

/// Corona construction: roots are the maximal good cubes; children of S are the maximal Q strictly
/// inside S with <|f|>_Q > 4 sigma(S) and (Q good or its parent good).
template <class S>
StoppingTree<S> build_stopping_tree(const GridTree& t, const SupportFunction<S>& f, const GoodnessMap& good) {
    StoppingTree<S> st;
    st.tree = &t;
    std::vector<S> avg = node_averages(t, abs_values(f));
    auto add = [&](int nd, int par) {
        int s = static_cast<int>(st.node.size());
        st.node.push_back(nd);
        st.sigma.push_back(avg[static_cast<std::size_t>(nd)]);
        st.parent.push_back(par);
        st.depth.push_back(par == kWholeSpace ? 0 : st.depth[static_cast<std::size_t>(par)] + 1);
        st.children.emplace_back();
        if (par == kWholeSpace)
            st.roots.push_back(s);
        else
            st.children[static_cast<std::size_t>(par)].push_back(s);
        return s;
    };
    // Depth-first over grid nodes with an explicit stack of (node, current stopping cube).
    std::vector<std::pair<int, int>> stack;
    stack.push_back({0, kWholeSpace});
    while (!stack.empty()) {
        auto [nd, cur] = stack.back();
        stack.pop_back();
        const GridNode& g = t.node(nd);
        int here = cur;
        if (cur == kWholeSpace) {
            if (good[nd]) here = add(nd, kWholeSpace);
        } else {
            bool cond2 = good[nd] || (g.parent >= 0 && good[g.parent]);
            if (cond2 && avg[static_cast<std::size_t>(nd)] > 4 * st.sigma[static_cast<std::size_t>(cur)]) here = add(nd, cur);
        }
        for (auto it = g.child.rbegin(); it != g.child.rend(); ++it)
            if (*it >= 0) stack.push_back({*it, here});
    }
    st.of_node.assign(t.size(), kWholeSpace);
    std::vector<int> at_node(t.size(), -1);
    for (std::size_t s = 0; s < st.node.size(); ++s) at_node[static_cast<std::size_t>(st.node[s])] = static_cast<int>(s);
    for (std::size_t i = 0; i < t.size(); ++i) {
        int p = t.node(static_cast<int>(i)).parent;
        int inherited = p >= 0 ? st.of_node[static_cast<std::size_t>(p)] : kWholeSpace;
        st.of_node[i] = at_node[i] >= 0 ? at_node[i] : inherited;
    }
    return st;
}

/// Brute-force minimal stopping cube containing q, by scanning every stopping cube.
template <class S>
int stopping_parent_scan(const StoppingTree<S>& st, const Cube& q) {
    int best = kWholeSpace;
    for (std::size_t s = 0; s < st.size(); ++s)
        if (q.subset_of(st.cube(static_cast<int>(s))) &&
            (best == kWholeSpace || st.cube(static_cast<int>(s)).level < st.cube(best).level))
            best = static_cast<int>(s);
    return best;
}

struct SparsenessReport {
    bool pass = true;
    std::size_t violations = 0;
    double worst_ratio = 0;       // max over S of sum_children mu / mu(S)
    double worst_carleson = 0;    // max over S of sum_{S' in S} mu(S') / mu(S)
};

/// Sum of children masses at most mu(S)/4 (exact) and the Carleson packing bound 4/3.
template <class S>
SparsenessReport check_sparseness(const StoppingTree<S>& st) {
    SparsenessReport r;
    std::vector<Dyadic> packed(st.size());
    for (std::size_t k = st.size(); k-- > 0;) {
        packed[k] += st.mass(static_cast<int>(k));
        Dyadic ch;
        for (int c : st.children[k]) {
            ch += st.mass(c);
            packed[k] += packed[static_cast<std::size_t>(c)];
        }
        Dyadic mu = st.mass(static_cast<int>(k));
        if (ch.scaled(2) > mu) {
            r.pass = false;
            ++r.violations;
        }
        r.worst_ratio = std::max(r.worst_ratio, ch.to_double() / mu.to_double());
        double carl = packed[k].to_double() / mu.to_double();
        r.worst_carleson = std::max(r.worst_carleson, carl);
        if (3 * packed[k].to_rational() > 4 * mu.to_rational()) {
            r.pass = false;
            ++r.violations;
        }
    }
    return r;
}

struct QuasiReport {
    double lhs = 0, rhs = 0;
    double ratio() const { return rhs > 0 ? lhs / rhs : 0; }
    bool pass() const { return lhs <= rhs * (1 + 1e-12); }
};

/// sum_S sigma(S)^p mu(S) against (4/3)(p/(p-1))^p ||f||_p^p.
template <class S>
QuasiReport quasi_orthogonality(const StoppingTree<S>& st, const SupportFunction<S>& f, double p) {
    if (!(p > 1)) throw std::invalid_argument("quasi_orthogonality: p must exceed 1");
    QuasiReport q;
    for (std::size_t s = 0; s < st.size(); ++s)
        q.lhs += std::pow(to_double(st.sigma[s]), p) * st.mass(static_cast<int>(s)).to_double();
    q.rhs = 4.0 / 3.0 * std::pow(p / (p - 1), p) * lp_norm_pow(st.tree->measure(), f, p);
    return q;
}

struct SigmaReport {
    std::size_t checked = 0, violations = 0;
};

/// <|f|>_Q <= 4 sigma(pi_S Q) for every Q strictly below the top with Q or its parent good.
template <class S>
SigmaReport check_sigma_estimate(const StoppingTree<S>& st, const SupportFunction<S>& f, const GoodnessMap& good) {
    const GridTree& t = *st.tree;
    std::vector<S> avg = node_averages(t, abs_values(f));
    SigmaReport r;
    for (std::size_t i = 1; i < t.size(); ++i) {
        const GridNode& g = t.node(static_cast<int>(i));
        if (!(good[static_cast<int>(i)] || good[g.parent])) continue;
        ++r.checked;
        int s = st.of_node[i];
        if (s == kWholeSpace || avg[i] > 4 * st.sigma[static_cast<std::size_t>(s)]) ++r.violations;
    }
    return r;
}

/// P_{j,S} f = sum of Delta_Q f over grid cubes whose minimal stopping cube is S.
template <class S>
SupportFunction<S> coronal_projection(const StoppingTree<S>& st, const MartingaleExpansion<S>& e, int s) {
    return synthesize(e, [&](int id) { return st.of_node[static_cast<std::size_t>(id)] == s ? S(1) : S(0); }, S{});
}

/// Differences of cubes outside every stopping cube.
template <class S>
SupportFunction<S> uncovered_projection(const StoppingTree<S>& st, const MartingaleExpansion<S>& e) {
    return synthesize(e, [&](int id) { return st.of_node[static_cast<std::size_t>(id)] == kWholeSpace ? S(1) : S(0); }, S{});
}

/// sum_S ||P_S f||_p^p / ||f||_p^p
template <class S>
double projection_sum_ratio(const StoppingTree<S>& st, const MartingaleExpansion<S>& e, const SupportFunction<S>& f,
                            double p) {
    const Measure& m = st.tree->measure();
    double num = 0;
    for (std::size_t s = 0; s < st.size(); ++s) num += lp_norm_pow(m, coronal_projection(st, e, static_cast<int>(s)), p);
    double den = lp_norm_pow(m, f, p);
    return den > 0 ? num / den : 0;
}

/// One line per stopping cube: level, anchor, sigma, parent index.
template <class S>
void dump_tree(std::ostream& os, const StoppingTree<S>& st) {
    for (std::size_t s = 0; s < st.size(); ++s) {
        const Cube& c = st.cube(static_cast<int>(s));
        os << c.level << ' ' << point_str(c.anchor) << ' ' << to_double(st.sigma[s]) << ' ' << st.parent[s] << '\n';
    }
}

/// L_2(S) for one S in the first stopping family, with layer indices.
struct LayerFamily {
    int base = 0;                     // stopping cube of tree 1
    std::vector<int> members;         // stopping cubes of tree 2
    std::vector<int> layer;           // parallel to members
    std::size_t containment_violations = 0;  // layer >= 2(r+1) but not inside the base
    std::size_t estimate_violations = 0;     // 2^{k-1} l R > 2^r l S for some layer k >= 1
};

/// Builds L_2(S) from (S, R) incidences: S = pi_{S1} P_Q and R = pi_{S2} Q for inside pairs.
template <class S1, class S2>
std::vector<LayerFamily> build_layers(const StoppingTree<S1>& st1, const StoppingTree<S2>& st2,
                                      const std::vector<std::pair<int, int>>& incidences, int r) {
    std::map<int, std::set<int>> fam;
    for (auto [s, rr] : incidences)
        if (s != kWholeSpace && rr != kWholeSpace) fam[s].insert(rr);
    std::vector<LayerFamily> out;
    for (auto& [s, members] : fam) {
        LayerFamily lf;
        lf.base = s;
        const Cube& sc = st1.cube(s);
        for (int rr : members) {
            int k = 0;
            for (int a = st2.parent[static_cast<std::size_t>(rr)]; a != kWholeSpace; a = st2.parent[static_cast<std::size_t>(a)])
                k += members.count(a) ? 1 : 0;
            lf.members.push_back(rr);
            lf.layer.push_back(k);
            const Cube& rc = st2.cube(rr);
            if (k >= 2 * (r + 1) && !rc.subset_of(sc)) ++lf.containment_violations;
            if (k >= 1 && rc.level + k - 1 > sc.level + r) ++lf.estimate_violations;
        }
        out.push_back(std::move(lf));
    }
    return out;
}

}  // namespace czlab

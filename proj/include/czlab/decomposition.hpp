#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "czlab/corona.hpp"
#include "czlab/goodness.hpp"
#include "czlab/martingale.hpp"
#include "czlab/operator.hpp"

namespace czlab {

enum class PairClass { inside, separated, nearby };

inline const char* class_name(PairClass c) {
    switch (c) {
        case PairClass::inside: return "inside";
        case PairClass::separated: return "separated";
        case PairClass::nearby: return "nearby";
    }
    return "?";
}

/// Membership flags of a pair (P, Q) with l Q <= l P in the three classes.
struct PairMembership {
    bool inside = false, separated = false, nearby = false;
    int count() const { return inside + separated + nearby; }
    PairClass cls() const { return inside ? PairClass::inside : (separated ? PairClass::separated : PairClass::nearby); }
};

inline PairMembership classify_pair(const Cube& p, const Cube& q, int r) {
    if (q.level > p.level) throw std::invalid_argument("classify_pair: requires l Q <= l P");
    PairMembership m;
    int gap = p.level - q.level;
    Dyadic dist = cube_dist(q, p);
    m.inside = gap > r && q.subset_of(p);
    m.separated = q.side() <= dist;
    m.nearby = gap <= r && dist < q.side();
    return m;
}

template <class S>
struct Perturbation {
    SupportFunction<S> f;
    std::size_t bad_cubes = 0;
    bool projection_ok = true;  // f~ - f equals the bad-cube projection atomwise
    bool deltas_ok = true;      // Delta_Q f = Delta_Q f~ on good cubes and 0 on bad ones
};

/// f = <f~>_{Q0} + sum over good Q of Delta_Q f~.
template <class S>
Perturbation<S> perturb(const GridTree& t, const GoodnessMap& good, const SupportFunction<S>& ft, double tol = 1e-12) {
    MartingaleExpansion<S> e = expand(t, ft);
    Perturbation<S> out;
    out.f = synthesize(e, [&](int id) { return good[id] ? S(1) : S(0); }, e.top);
    SupportFunction<S> bad = synthesize(e, [&](int id) { return good[id] ? S(0) : S(1); }, S{});
    double scale = 0;
    for (const S& v : ft) scale = std::max(scale, std::fabs(to_double(v)));
    for (std::size_t a = 0; a < ft.size(); ++a)
        if (!agrees<S>(ft[a] - out.f[a], bad[a], tol, scale)) out.projection_ok = false;
    MartingaleExpansion<S> ef = expand(t, out.f);
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!good[static_cast<int>(i)]) ++out.bad_cubes;
        for (std::size_t s = 0; s < e.delta[i].size(); ++s) {
            S want = good[static_cast<int>(i)] ? e.delta[i][s] : S{};
            if (!agrees<S>(ef.delta[i][s], want, tol, scale)) out.deltas_ok = false;
        }
    }
    return out;
}

/// Seeded test function with values in {-2, -7/4, ..., 2} and a few large spikes, so that stopping
/// trees have several generations.
template <class S>
SupportFunction<S> random_test_function(std::size_t n, std::uint64_t seed, double spike_rate = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> v(-8, 8);
    std::uniform_real_distribution<double> u(0, 1);
    SupportFunction<S> f(n);
    for (auto& x : f) {
        double d = v(rng) / 4.0;
        if (u(rng) < spike_rate) d = (u(rng) < 0.5 ? -1 : 1) * std::ldexp(1.0, 4 + static_cast<int>(rng() % 5));
        x = scalar_from_double<S>(d);
    }
    return f;
}

/// The (f~1, f~2) pair used for instance `seed`.
template <class S>
std::pair<SupportFunction<S>, SupportFunction<S>> seeded_functions(std::size_t n, std::uint64_t seed) {
    return {random_test_function<S>(n, 2 * seed + 1), random_test_function<S>(n, 2 * seed + 2)};
}

/// Per-grid data used by the form decomposition.
template <class S>
struct FormSide {
    const GridTree* tree = nullptr;
    const GoodnessMap* good = nullptr;
    MartingaleExpansion<S> exp;
    StoppingTree<S> stop;
    std::vector<S> avg;

    FormSide() = default;
    FormSide(const GridTree& t, const GoodnessMap& g, const SupportFunction<S>& f)
        : tree(&t), good(&g), exp(expand(t, f)), stop(build_stopping_tree(t, f, g)), avg(node_averages(t, f)) {}

    const Cube& cube(int id) const { return tree->node(id).cube; }
    bool has_delta(int id) const { return !exp.delta[static_cast<std::size_t>(id)].empty() && !exp.is_zero(id); }
};

struct DecompositionConfig {
    GoodnessParams goodness;
    Dyadic upsilon{1, -2};
    Dyadic eps{1, -3};
    bool surgery = true;
    bool record_pairs = false;
    double tol = 1e-9;
};

/// j with upsilon/64 <= 2^j < upsilon/32.
inline int layer_offset(const Dyadic& upsilon) {
    if (upsilon.sign() <= 0 || !(upsilon < Dyadic(1))) throw std::invalid_argument("upsilon must lie in (0,1)");
    int k = upsilon.ilog2();
    bool pow2 = upsilon == Dyadic::pow2(k);
    return (pow2 ? k : k + 1) - 6;
}

/// Closed box with the centre of c and side rho * l(c) contains x.
inline bool in_closed_dilate(const Point& x, const Cube& c, const Dyadic& rho) {
    Dyadic half = c.side().scaled(-1);
    Dyadic reach = rho * half;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Dyadic ctr = c.anchor[i] + half;
        if (x[i] < ctr - reach || x[i] > ctr + reach) return false;
    }
    return true;
}

/// x in closed (1+v)c minus closed (1-v)c.
inline bool in_collar(const Point& x, const Cube& c, const Dyadic& v) {
    return in_closed_dilate(x, c, Dyadic(1) + v) && !in_closed_dilate(x, c, Dyadic(1) - v);
}

/// Atom sets of the nearby surgery for one child pair (Q_i, P_j).
struct SurgerySets {
    std::vector<int> q_bd, q_sep, dq, p_bd, p_sep, dp;
    int layer_level = 0;
    std::vector<int> dq_L, dp_L, dq_bd, dp_bd;
    std::vector<int> dq_prime, dq_tilde, dp_prime, dp_tilde;
    std::size_t layer_cubes = 0, enlarged = 0;
    bool trichotomy_ok = true;
    bool union_ok = true;
};

inline std::string cube_key(const Cube& c) { return std::to_string(c.level) + ":" + point_str(c.anchor); }

/// Builds the boundary, separated and intersecting sets, the layer adaptation on grid g3 and the
/// eps-collar split. qi/pj are the atom lists of Q_i and P_j.
inline SurgerySets surgery_sets(const Measure& m, const std::vector<int>& qi, const std::vector<int>& pj,
                                const Cube& qc, const Cube& pc, const Dyadic& upsilon, const Dyadic& eps,
                                const DyadicGrid& g3) {
    SurgerySets s;
    for (int a : qi) {
        const Point& x = m.position(static_cast<std::size_t>(a));
        if (in_collar(x, pc, upsilon))
            s.q_bd.push_back(a);
        else if (pc.contains(x))
            s.dq.push_back(a);
        else
            s.q_sep.push_back(a);
    }
    for (int a : pj) {
        const Point& x = m.position(static_cast<std::size_t>(a));
        if (in_collar(x, qc, upsilon))
            s.p_bd.push_back(a);
        else if (qc.contains(x))
            s.dp.push_back(a);
        else
            s.p_sep.push_back(a);
    }
    s.layer_level = std::min(qc.level, pc.level) + layer_offset(upsilon);
    const int L = s.layer_level;
    auto layer_of = [&](int a) { return g3.cube_at(m.position(static_cast<std::size_t>(a)), L); };
    std::map<std::string, std::pair<Cube, std::pair<int, int>>> meet;  // counts in dq, dp
    for (int a : s.dq) {
        Cube g = layer_of(a);
        auto& e = meet.emplace(cube_key(g), std::make_pair(g, std::make_pair(0, 0))).first->second;
        ++e.second.first;
    }
    for (int a : s.dp) {
        Cube g = layer_of(a);
        auto& e = meet.emplace(cube_key(g), std::make_pair(g, std::make_pair(0, 0))).first->second;
        ++e.second.second;
    }
    std::set<int> dq(s.dq.begin(), s.dq.end()), dp(s.dp.begin(), s.dp.end());
    std::set<int> dqL = dq, dpL = dp;
    for (auto& [key, e] : meet) {
        const Cube& g = e.first;
        if (e.second.first == 0 || e.second.second == 0) continue;
        ++s.enlarged;
        if (!g.subset_of(qc) || !g.subset_of(pc)) s.union_ok = false;
        for (int a : qi)
            if (g.contains(m.position(static_cast<std::size_t>(a)))) {
                if (!dq.count(a)) s.dq_bd.push_back(a);
                if (!dp.count(a)) s.dp_bd.push_back(a);
                dqL.insert(a);
                dpL.insert(a);
            }
    }
    s.dq_L.assign(dqL.begin(), dqL.end());
    s.dp_L.assign(dpL.begin(), dpL.end());
    // Disjoint-union structure: the added pieces lie in the boundary sets intersected with the other cube.
    std::set<int> qbd(s.q_bd.begin(), s.q_bd.end()), pbd(s.p_bd.begin(), s.p_bd.end());
    for (int a : s.dq_bd)
        if (!qbd.count(a) || !pc.contains(m.position(static_cast<std::size_t>(a))) || dq.count(a)) s.union_ok = false;
    for (int a : s.dp_bd)
        if (!pbd.count(a) || !qc.contains(m.position(static_cast<std::size_t>(a))) || dp.count(a)) s.union_ok = false;
    if (s.dq_L.size() != s.dq.size() + s.dq_bd.size() || s.dp_L.size() != s.dp.size() + s.dp_bd.size()) s.union_ok = false;
    // Trichotomy per layer cube meeting either adapted set.
    std::map<std::string, std::pair<Cube, std::pair<std::vector<int>, std::vector<int>>>> per;
    for (int a : s.dq_L) {
        Cube g = layer_of(a);
        per.emplace(cube_key(g), std::make_pair(g, std::make_pair(std::vector<int>{}, std::vector<int>{})))
            .first->second.second.first.push_back(a);
    }
    for (int a : s.dp_L) {
        Cube g = layer_of(a);
        per.emplace(cube_key(g), std::make_pair(g, std::make_pair(std::vector<int>{}, std::vector<int>{})))
            .first->second.second.second.push_back(a);
    }
    s.layer_cubes = per.size();
    for (auto& [key, e] : per) {
        auto& [a, b] = e.second;
        if (a.empty() || b.empty()) continue;
        std::vector<int> all = atoms_in(m, e.first);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != all || b != all) s.trichotomy_ok = false;
    }
    // eps-collars of the layer cubes; a point can only lie in collars of its own cube and neighbours.
    const int n = m.dim();
    auto in_L_eps = [&](int a) {
        const Point& x = m.position(static_cast<std::size_t>(a));
        Cube g = layer_of(a);
        int combos = 1;
        for (int i = 0; i < n; ++i) combos *= 3;
        for (int c = 0; c < combos; ++c) {
            Cube h = g;
            int code = c;
            for (int i = 0; i < n; ++i) {
                int off = code % 3 - 1;
                code /= 3;
                if (off) h.anchor[static_cast<std::size_t>(i)] += off > 0 ? g.side() : -g.side();
            }
            if (in_collar(x, h, eps)) return true;
        }
        return false;
    };
    for (int a : s.dq_L) (in_L_eps(a) ? s.dq_prime : s.dq_tilde).push_back(a);
    for (int a : s.dp_L) (in_L_eps(a) ? s.dp_prime : s.dp_tilde).push_back(a);
    return s;
}

struct PairRecord {
    int outer = 0, inner = 0;
    PairClass cls = PairClass::inside;
    double value = 0;
};

template <class S>
struct InsideSplit {
    S para{}, stop{}, error{};
    std::map<int, S> stop_by_t, error_by_t;
    std::size_t pairs = 0;
    std::size_t pair_identity_failures = 0;
    std::size_t pointwise_failures = 0;
    std::size_t child_containment_failures = 0;
    std::size_t uncovered = 0;  // P_Q outside every stopping cube
    std::size_t null_children = 0;
};

struct EpsilonStats {
    std::size_t coefficients = 0;
    std::size_t zero_sigma = 0;
    std::size_t telescope_checked = 0;
    std::size_t telescope_failures = 0;
    std::size_t bound_violations = 0;
    double max_abs = 0;
};

template <class S>
struct RegroupReport {
    S not_sub{}, sub{};
    std::size_t terms_not_sub = 0, terms_sub = 0;
    std::size_t generation_failures = 0;
    std::size_t bracket_failures = 0;  // bracket changed by the tau constant
    std::size_t tau_nonzero = 0;
    S total() const { return not_sub + sub; }
};

struct LayerStats {
    std::size_t families = 0, members = 0;
    std::size_t containment_violations = 0, estimate_violations = 0;
    int max_layer = 0;
};

template <class S>
struct SurgeryStats {
    std::size_t pairs = 0, surgeries = 0;
    std::size_t tenf_failures = 0, ekahaj_failures = 0, alpha1_failures = 0;
    std::size_t trichotomy_failures = 0, union_failures = 0, pair_total_failures = 0;
    std::size_t enlarged = 0;
    S m[5]{};      // sum of c_j d_i M_k
    S alpha[3]{};
    S beta[3]{};
};

template <class S>
struct TriangleResult {
    bool mirror = false;
    S inside{}, separated{}, nearby{};
    std::size_t good_pairs = 0, unclassified = 0, multiclassified = 0;
    std::size_t n_inside = 0, n_separated = 0, n_nearby = 0;
    InsideSplit<S> split;
    EpsilonStats eps;
    RegroupReport<S> regroup;
    LayerStats layers;
    SurgeryStats<S> surgery;
    std::map<std::pair<int, int>, S> separated_by_um;
    std::vector<PairRecord> pairs;
    S total() const { return inside + separated + nearby; }
};

template <class S>
struct FormLedger {
    S direct{};
    S e_top{};    // <T E f1, f2>
    S e_mixed{};  // <T (f1 - E f1), E f2>
    TriangleResult<S> main, mirror;
    double tol = 1e-9;
    double scale = 0;

    S sum() const { return e_top + e_mixed + main.total() + mirror.total(); }
    double residual() const {
        double d = std::fabs(to_double(S(direct - sum())));
        return scale > 0 ? d / scale : d;
    }
    bool reconstructs() const { return agrees<S>(direct, sum(), tol, scale); }

    /// Names of every violated invariant.
    std::vector<std::string> failures() const {
        std::vector<std::string> f;
        if (!reconstructs()) f.push_back("reconstruction");
        for (const TriangleResult<S>* t : {&main, &mirror}) {
            std::string pre = t->mirror ? "mirror." : "main.";
            if (t->unclassified || t->multiclassified) f.push_back(pre + "partition");
            const auto& sp = t->split;
            if (!agrees<S>(t->inside, S(sp.para - sp.stop + sp.error), tol, scale) || sp.pair_identity_failures)
                f.push_back(pre + "inside_split");
            if (sp.pointwise_failures) f.push_back(pre + "inside_pointwise");
            if (sp.child_containment_failures || sp.uncovered) f.push_back(pre + "inside_structure");
            if (t->eps.telescope_failures) f.push_back(pre + "epsilon_telescope");
            if (t->eps.bound_violations) f.push_back(pre + "epsilon_bound");
            if (!agrees<S>(t->regroup.total(), sp.para, tol, scale) || t->regroup.generation_failures ||
                t->regroup.bracket_failures)
                f.push_back(pre + "paraproduct_regroup");
            if (t->layers.containment_violations || t->layers.estimate_violations) f.push_back(pre + "layers");
            const auto& su = t->surgery;
            if (su.tenf_failures) f.push_back(pre + "surgery_tenf");
            if (su.ekahaj_failures) f.push_back(pre + "surgery_ekahaj");
            if (su.alpha1_failures) f.push_back(pre + "surgery_alpha1");
            if (su.trichotomy_failures) f.push_back(pre + "surgery_trichotomy");
            if (su.union_failures) f.push_back(pre + "surgery_unions");
            if (su.pair_total_failures) f.push_back(pre + "surgery_pair_total");
        }
        return f;
    }
};

namespace detail {

/// One triangle of the pair sum: "outer" plays the larger cube P, "inner" the smaller Q. The pairing
/// <T_role 1_A, 1_B> uses T for the main triangle and the adjoint for the mirror one.
template <class S>
class Triangle {
public:
    Triangle(const FormSide<S>& outer, const FormSide<S>& inner, bool mirror, const ExactPairing& ex,
             const RangePairing& rp, const Kernel& k, const DyadicGrid& g3, const DecompositionConfig& cfg, double scale)
        : o_(outer), i_(inner), mirror_(mirror), ex_(ex), rp_(rp), k_(k), g3_(g3), cfg_(cfg), scale_(scale),
          mu_(outer.tree->measure()) {}

    TriangleResult<S> run() {
        TriangleResult<S> res;
        res.mirror = mirror_;
        const int r = cfg_.goodness.r;
        std::vector<int> go, gi;
        for (std::size_t a = 0; a < o_.tree->size(); ++a)
            if ((*o_.good)[static_cast<int>(a)]) go.push_back(static_cast<int>(a));
        for (std::size_t a = 0; a < i_.tree->size(); ++a)
            if ((*i_.good)[static_cast<int>(a)]) gi.push_back(static_cast<int>(a));
        for (int p : go) {
            const Cube& pc = o_.cube(p);
            for (int q : gi) {
                const Cube& qc = i_.cube(q);
                if (mirror_ ? qc.level >= pc.level : qc.level > pc.level) continue;
                ++res.good_pairs;
                PairMembership mem = classify_pair(pc, qc, r);
                if (mem.count() == 0) {
                    ++res.unclassified;
                    continue;
                }
                if (mem.count() > 1) ++res.multiclassified;
                if (!o_.has_delta(p) || !i_.has_delta(q)) {
                    count(res, mem.cls());
                    continue;
                }
                count(res, mem.cls());
                S term = pair_term(p, q);
                if (cfg_.record_pairs) res.pairs.push_back({p, q, mem.cls(), to_double(term)});
                switch (mem.cls()) {
                    case PairClass::inside:
                        res.inside += term;
                        inside_pair(res, p, q, term);
                        break;
                    case PairClass::separated: {
                        res.separated += term;
                        res.separated_by_um[{u_index(qc, pc), pc.level - qc.level}] += term;
                        break;
                    }
                    case PairClass::nearby:
                        res.nearby += term;
                        if (cfg_.surgery) nearby_pair(res, p, q, term);
                        break;
                }
            }
        }
        finish_epsilon(res);
        regroup(res);
        layers(res);
        return res;
    }

private:
    const FormSide<S>& o_;
    const FormSide<S>& i_;
    bool mirror_;
    const ExactPairing& ex_;
    const RangePairing& rp_;
    const Kernel& k_;
    const DyadicGrid& g3_;
    const DecompositionConfig& cfg_;
    double scale_;
    const Measure& mu_;

    struct EpsEntry {
        S sum{};
        int p_minus = -1, p_minus_child = -1, p_plus = -1;
    };
    std::map<std::pair<int, int>, EpsEntry> eps_;  // (inner node Q, outer stopping cube S)
    std::vector<std::pair<int, int>> incid_;         // (S, R) incidences for layers

    static void count(TriangleResult<S>& res, PairClass c) {
        if (c == PairClass::inside) ++res.n_inside;
        if (c == PairClass::separated) ++res.n_separated;
        if (c == PairClass::nearby) ++res.n_nearby;
    }

    S val(FixedSum s) const { return ex_.template value<S>(s); }

    /// <T_role 1_{outer node}, 1_{inner node}>
    FixedSum pair(int on, int in) const {
        const GridNode &a = o_.tree->node(on), &b = i_.tree->node(in);
        return mirror_ ? rp_.rect(a.begin, a.end, b.begin, b.end) : rp_.rect(b.begin, b.end, a.begin, a.end);
    }
    /// <T_role 1_{outer node}, 1_{x}> for the atom at inner-tree position pos.
    FixedSum pair_atom(int on, int pos) const {
        const GridNode& a = o_.tree->node(on);
        return mirror_ ? rp_.rect(a.begin, a.end, pos, pos + 1) : rp_.rect(pos, pos + 1, a.begin, a.end);
    }
    /// <T_role 1_A, 1_B> for outer-side set A and inner-side set B.
    FixedSum sets(const std::vector<int>& a, const std::vector<int>& b) const {
        return mirror_ ? ex_.sets(b, a) : ex_.sets(a, b);
    }
    double kern(const std::vector<double>& x, const std::vector<double>& y) const { return mirror_ ? k_(y, x) : k_(x, y); }

    S pair_term(int p, int q) const {
        const GridNode &pn = o_.tree->node(p), &qn = i_.tree->node(q);
        const auto &cp = o_.exp.delta[static_cast<std::size_t>(p)], &cq = i_.exp.delta[static_cast<std::size_t>(q)];
        S acc{};
        for (std::size_t j = 0; j < pn.child.size(); ++j) {
            if (pn.child[j] < 0 || is_zero(cp[j])) continue;
            S in{};
            for (std::size_t i = 0; i < qn.child.size(); ++i) {
                if (qn.child[i] < 0 || is_zero(cq[i])) continue;
                in += cq[i] * val(pair(pn.child[j], qn.child[i]));
            }
            acc += cp[j] * in;
        }
        return acc;
    }

    /// sum_i d_i <T_role 1_{outer node}, 1_{Q_i}>
    S against_delta(int on, int q) const {
        if (on < 0) return S{};
        const GridNode& qn = i_.tree->node(q);
        const auto& cq = i_.exp.delta[static_cast<std::size_t>(q)];
        S in{};
        for (std::size_t i = 0; i < qn.child.size(); ++i)
            if (qn.child[i] >= 0 && !is_zero(cq[i])) in += cq[i] * val(pair(on, qn.child[i]));
        return in;
    }

    static int u_index(const Cube& q, const Cube& p) {
        Dyadic ratio = long_distance(q, p).scaled(-p.level);
        int k = ratio.ilog2();
        return ratio == Dyadic::pow2(k) ? k - 1 : k;
    }

    void inside_pair(TriangleResult<S>& res, int p, int q, const S& term) {
        auto& sp = res.split;
        ++sp.pairs;
        const GridNode& pn = o_.tree->node(p);
        const Cube &pc = pn.cube, &qc = i_.cube(q);
        int slot = 0;
        Dyadic half = Dyadic::pow2(pc.level - 1);
        Cube child{pc.grid, pc.level - 1, pc.anchor};
        for (std::size_t d = 0; d < qc.anchor.size(); ++d)
            if (!(qc.anchor[d] < pc.anchor[d] + half)) {
                slot |= 1 << d;
                child.anchor[d] += half;
            }
        if (!qc.subset_of(child)) ++sp.child_containment_failures;
        int cn = pn.child[static_cast<std::size_t>(slot)];
        if (cn < 0) ++sp.null_children;
        const S& cstar = o_.exp.delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(slot)];
        int s = o_.stop.parent_of_cube(child);
        if (s == kWholeSpace) {
            ++sp.uncovered;
            return;
        }
        int sn = o_.stop.node[static_cast<std::size_t>(s)];
        S on_s = against_delta(sn, q);
        S on_child = against_delta(cn, q);
        S para = cstar * on_s;
        S stop = cstar * (on_s - on_child);
        S err{};
        const auto& cp = o_.exp.delta[static_cast<std::size_t>(p)];
        for (std::size_t j = 0; j < pn.child.size(); ++j)
            if (static_cast<int>(j) != slot && pn.child[j] >= 0 && !is_zero(cp[j])) err += cp[j] * against_delta(pn.child[j], q);
        sp.para += para;
        sp.stop += stop;
        sp.error += err;
        int t = pc.level - qc.level;
        sp.stop_by_t[t] += stop;
        sp.error_by_t[t] += err;
        if (!agrees<S>(term, S(para - stop + err), cfg_.tol, scale_)) ++sp.pair_identity_failures;
        // Atomwise: Delta_P f = c 1_S - c 1_{S \ P_Q} + Delta_P f 1_{P \ P_Q} on S and P.
        const GridNode& sg = o_.tree->node(sn);
        auto in_range = [](const GridNode& g, int pos) { return g.begin <= pos && pos < g.end; };
        auto check = [&](int pos) {
            int atom = o_.tree->order()[static_cast<std::size_t>(pos)];
            bool in_s = in_range(sg, pos), in_p = in_range(pn, pos);
            bool in_c = cn >= 0 && in_range(o_.tree->node(cn), pos);
            S lhs = in_p ? o_.exp.value(p, atom) : S{};
            S rhs{};
            if (in_s) rhs += cstar;
            if (in_s && !in_c) rhs -= cstar;
            if (in_p && !in_c) rhs += lhs;
            if (!agrees<S>(lhs, rhs, 1e-12, std::fabs(to_double(cstar)) + std::fabs(to_double(lhs)))) ++sp.pointwise_failures;
        };
        for (int pos = sg.begin; pos < sg.end; ++pos) check(pos);
        for (int pos = pn.begin; pos < pn.end; ++pos)
            if (!in_range(sg, pos)) check(pos);
        EpsEntry& e = eps_[{q, s}];
        e.sum += cstar;
        if (cn >= 0) {
            if (e.p_minus < 0 || pc.level < o_.cube(e.p_minus).level) {
                e.p_minus = p;
                e.p_minus_child = cn;
            }
            if (e.p_plus < 0 || pc.level > o_.cube(e.p_plus).level) e.p_plus = p;
        }
        incid_.push_back({s, i_.stop.of_node[static_cast<std::size_t>(q)]});
    }

    void finish_epsilon(TriangleResult<S>& res) {
        auto& st = res.eps;
        for (auto& [key, e] : eps_) {
            ++st.coefficients;
            const S& sigma = o_.stop.sigma[static_cast<std::size_t>(key.second)];
            if (is_zero(sigma)) {
                ++st.zero_sigma;
                continue;
            }
            double eps = to_double(S(e.sum / sigma));
            st.max_abs = std::max(st.max_abs, std::fabs(eps));
            if (std::fabs(eps) > 8 * (1 + 1e-12)) ++st.bound_violations;
            S tele{};
            if (e.p_minus >= 0) {
                tele = o_.avg[static_cast<std::size_t>(e.p_minus_child)] - o_.avg[static_cast<std::size_t>(e.p_plus)];
                ++st.telescope_checked;
            }
            if (!agrees<S>(e.sum, tele, cfg_.tol, scale_ + std::fabs(to_double(e.sum)))) ++st.telescope_failures;
        }
    }

    std::map<std::string, S> tau_cache_;

    /// T_role 1_{S \ E}(c) with E a box, S a stopping cube of the outer side.
    S tau(int s, const Cube& excl, const Point& c) {
        std::string key = std::to_string(s) + "|" + cube_key(excl) + "|" + point_str(c);
        auto it = tau_cache_.find(key);
        if (it != tau_cache_.end()) return it->second;
        const GridNode& sg = o_.tree->node(o_.stop.node[static_cast<std::size_t>(s)]);
        std::vector<double> x = to_doubles(c);
        double acc = 0;
        for (int pos = sg.begin; pos < sg.end; ++pos) {
            std::size_t a = static_cast<std::size_t>(o_.tree->order()[static_cast<std::size_t>(pos)]);
            if (excl.contains(mu_.position(a))) continue;
            acc += kern(x, to_doubles(mu_.position(a))) * mu_.weight(a).to_double();
        }
        S v = scalar_from_double<S>(acc);
        tau_cache_.emplace(key, v);
        return v;
    }

    /// <1_A (T_role 1_S - tau), Delta_Q f_inner> over atoms of Q in the indicator set A; also checks
    /// that the tau term contributes nothing.
    S bracket(TriangleResult<S>& res, int s, int q, const std::vector<const Cube*>& ind, const S& tau_v) {
        const GridNode& qn = i_.tree->node(q);
        int sn = o_.stop.node[static_cast<std::size_t>(s)];
        S with{}, without{}, tau_part{};
        double mag = 0;
        for (int pos = qn.begin; pos < qn.end; ++pos) {
            int atom = i_.tree->order()[static_cast<std::size_t>(pos)];
            const Point& x = mu_.position(static_cast<std::size_t>(atom));
            bool in = true;
            for (const Cube* c : ind) in = in && c->contains(x);
            if (!in) continue;
            S d = i_.exp.value(q, atom);
            S ts = val(pair_atom(sn, pos));
            S w = scalar_from_dyadic<S>(mu_.weight(static_cast<std::size_t>(atom)));
            without += d * ts;
            tau_part += d * w;
            mag += std::fabs(to_double(d)) * (std::fabs(to_double(ts)) + std::fabs(to_double(tau_v)) * to_double(w));
        }
        with = without - tau_v * tau_part;
        if (!agrees<S>(with, without, cfg_.tol, mag)) ++res.regroup.bracket_failures;
        return with;
    }

    void regroup(TriangleResult<S>& res) {
        auto& rg = res.regroup;
        const int r = cfg_.goodness.r;
        const int cut = 2 * r + 1;
        for (auto& [key, e] : eps_) {
            auto [q, s] = key;
            const Cube& qc = i_.cube(q);
            const Cube& sc = o_.stop.cube(s);
            int rp = i_.stop.of_node[static_cast<std::size_t>(q)];
            if (rp == kWholeSpace) {
                ++rg.generation_failures;
                continue;
            }
            const Cube& rc = i_.stop.cube(rp);
            if (!rc.subset_of(sc)) {
                int sp = o_.stop.parent_of_cube(qc);
                int t = sp == kWholeSpace ? -1 : o_.stop.generation(s, sp);
                if (t < 0) {
                    ++rg.generation_failures;
                    continue;
                }
                S tv{};
                if (t > cut) {
                    tv = tau(s, o_.stop.cube(o_.stop.ancestor(sp, t / 2)), o_.stop.cube(sp).center());
                    ++rg.tau_nonzero;
                }
                rg.not_sub += e.sum * bracket(res, s, q, {&rc, &o_.stop.cube(sp)}, tv);
                ++rg.terms_not_sub;
            } else {
                int sp = o_.stop.parent_of_cube(rc);
                int t = sp == kWholeSpace ? -1 : o_.stop.generation(s, sp);
                if (t < 0) {
                    ++rg.generation_failures;
                    continue;
                }
                int top = rp;
                for (int up = i_.stop.parent[static_cast<std::size_t>(top)];
                     up != kWholeSpace && o_.stop.parent_of_cube(i_.stop.cube(up)) == sp;
                     up = i_.stop.parent[static_cast<std::size_t>(up)])
                    top = up;
                int k = i_.stop.depth[static_cast<std::size_t>(rp)] - i_.stop.depth[static_cast<std::size_t>(top)];
                S tv{};
                if (k > cut) {
                    tv = tau(s, i_.stop.cube(i_.stop.ancestor(rp, k / 2)), rc.center());
                    ++rg.tau_nonzero;
                } else if (t > cut) {
                    tv = tau(s, o_.stop.cube(o_.stop.ancestor(sp, t / 2)), o_.stop.cube(sp).center());
                    ++rg.tau_nonzero;
                }
                rg.sub += e.sum * bracket(res, s, q, {&rc}, tv);
                ++rg.terms_sub;
            }
        }
    }

    void layers(TriangleResult<S>& res) {
        auto fams = build_layers(o_.stop, i_.stop, incid_, cfg_.goodness.r);
        auto& ls = res.layers;
        ls.families = fams.size();
        for (const auto& f : fams) {
            ls.members += f.members.size();
            ls.containment_violations += f.containment_violations;
            ls.estimate_violations += f.estimate_violations;
            for (int k : f.layer) ls.max_layer = std::max(ls.max_layer, k);
        }
    }

    void nearby_pair(TriangleResult<S>& res, int p, int q, const S& term) {
        auto& su = res.surgery;
        ++su.pairs;
        const GridNode &pn = o_.tree->node(p), &qn = i_.tree->node(q);
        const auto &cp = o_.exp.delta[static_cast<std::size_t>(p)], &cq = i_.exp.delta[static_cast<std::size_t>(q)];
        auto atoms = [](const GridTree& t, int id) {
            const GridNode& g = t.node(id);
            return std::vector<int>(t.order().begin() + g.begin, t.order().begin() + g.end);
        };
        S total{};
        for (std::size_t j = 0; j < pn.child.size(); ++j) {
            if (pn.child[j] < 0) continue;
            std::vector<int> pj = atoms(*o_.tree, pn.child[j]);
            const Cube& pjc = o_.cube(pn.child[j]);
            for (std::size_t i = 0; i < qn.child.size(); ++i) {
                if (qn.child[i] < 0) continue;
                ++su.surgeries;
                std::vector<int> qi = atoms(*i_.tree, qn.child[i]);
                SurgerySets ss = surgery_sets(mu_, qi, pj, i_.cube(qn.child[i]), pjc, cfg_.upsilon, cfg_.eps, g3_);
                su.enlarged += ss.enlarged;
                FixedSum whole = pair(pn.child[j], qn.child[i]);
                FixedSum m[5] = {sets(ss.p_sep, qi), sets(ss.p_bd, qi), sets(ss.dp, ss.dq), sets(ss.dp, ss.q_bd),
                                 sets(ss.dp, ss.q_sep)};
                FixedSum a[3] = {sets(ss.dp_L, ss.dq_L), FixedSum() - sets(ss.dp_bd, ss.dq_L),
                                 FixedSum() - sets(ss.dp, ss.dq_bd)};
                FixedSum b[3] = {sets(ss.dp_prime, ss.dq_L), sets(ss.dp_tilde, ss.dq_prime), sets(ss.dp_tilde, ss.dq_tilde)};
                if (!(whole == m[0] + m[1] + m[2] + m[3] + m[4])) ++su.tenf_failures;
                if (!(m[2] == a[0] + a[1] + a[2])) ++su.ekahaj_failures;
                if (!(a[0] == b[0] + b[1] + b[2])) ++su.alpha1_failures;
                if (!ss.trichotomy_ok) ++su.trichotomy_failures;
                if (!ss.union_ok) ++su.union_failures;
                S cd = cp[j] * cq[i];
                if (is_zero(cd)) continue;
                S parts{};
                for (int k = 0; k < 5; ++k) {
                    S v = cd * val(m[k]);
                    su.m[k] += v;
                    parts += v;
                }
                for (int k = 0; k < 3; ++k) {
                    su.alpha[k] += cd * val(a[k]);
                    su.beta[k] += cd * val(b[k]);
                }
                total += parts;
            }
        }
        if (!agrees<S>(total, term, cfg_.tol, scale_)) ++su.pair_total_failures;
    }
};

}  // namespace detail

/// Full bilinear-form ledger for perturbed f1 (grid 1) and f2 (grid 2). g3 supplies the layer cubes
/// of the nearby surgery and must reach level k_min + layer_offset(upsilon) - 1.
template <class S>
FormLedger<S> expand_form(const OperatorMatrix& t, const Kernel& k, const GridTree& t1, const GridTree& t2,
                          const GoodnessMap& good1, const GoodnessMap& good2, const DyadicGrid& g3,
                          const SupportFunction<S>& f1, const SupportFunction<S>& f2, const DecompositionConfig& cfg) {
    const Measure& m = t.measure();
    const std::size_t n = m.size();
    ExactPairing ex(t);
    RangePairing rp(ex, t2.order(), t1.order());
    FormSide<S> s1(t1, good1, f1), s2(t2, good2, f2);
    FormLedger<S> L;
    L.tol = cfg.tol;
    // Direct value and scale from the matrix.
    std::vector<S> row(n);
    double scale = 0;
    for (std::size_t x = 0; x < n; ++x) {
        S acc{};
        double mag = 0;
        __int128 rs = 0;
        for (std::size_t y = 0; y < n; ++y) {
            __int128 v = ex.raw(x, y);
            if (v == 0) continue;
            rs += v;
            if (!is_zero(f1[y])) acc += ex.template value<S>(FixedSum(v)) * f1[y];
            mag += std::fabs(std::ldexp(static_cast<double>(v), ex.exponent()) * to_double(f1[y]));
        }
        L.direct += acc * f2[x];
        scale += mag * std::fabs(to_double(f2[x]));
        row[x] = ex.template value<S>(FixedSum(rs));
    }
    L.scale = scale;
    S top1 = s1.exp.top, top2 = s2.exp.top;
    for (std::size_t x = 0; x < n; ++x) L.e_top += top1 * row[x] * f2[x];
    for (std::size_t y = 0; y < n; ++y) {
        if (f1[y] == top1) continue;
        __int128 cs = 0;
        for (std::size_t x = 0; x < n; ++x) cs += ex.raw(x, y);
        L.e_mixed += top2 * ex.template value<S>(FixedSum(cs)) * (f1[y] - top1);
    }
    L.main = detail::Triangle<S>(s1, s2, false, ex, rp, k, g3, cfg, scale).run();
    L.mirror = detail::Triangle<S>(s2, s1, true, ex, rp, k, g3, cfg, scale).run();
    return L;
}

struct DecayRow {
    std::string kind;  // stop, error, separated
    int t = 0;         // depth (or u + m)
    int u = 0, m = 0;
    double value = 0;
    double envelope = 0;
};

struct DecayFit {
    std::string kind;
    double envelope_exponent = 0;  // envelope rate per unit of t
    double fitted_exponent = 0;    // -slope of log2 |value| against t
    double fitted_constant = 0;    // max |value| / envelope
    std::size_t points = 0;
};

struct DecayTable {
    std::vector<DecayRow> rows;
    std::vector<DecayFit> fits;
    bool finite = true;
};

/// Groups stop/error by depth t and separated terms by (u, m) with their envelopes
/// 2^{-t eta (1-gamma)}, 2^{-t eta/4}, 2^{-eta (u+m)/4}; slopes by least squares on log2 scale.
template <class S>
DecayTable decay_diagnostics(const FormLedger<S>& L, const GoodnessParams& gp) {
    DecayTable tab;
    const double eta = gp.eta_d(), gamma = gp.gamma_d();
    std::map<int, double> stop, err, sep;
    std::map<std::pair<int, int>, double> sep_um;
    for (const TriangleResult<S>* t : {&L.main, &L.mirror}) {
        for (auto& [k, v] : t->split.stop_by_t) stop[k] += to_double(v);
        for (auto& [k, v] : t->split.error_by_t) err[k] += to_double(v);
        for (auto& [k, v] : t->separated_by_um) sep_um[k] += to_double(v);
    }
    auto emit = [&](const std::string& kind, const std::map<int, double>& mp, double rate) {
        DecayFit fit;
        fit.kind = kind;
        fit.envelope_exponent = rate;
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (auto& [t, v] : mp) {
            double env = std::pow(2.0, -rate * t);
            tab.rows.push_back({kind, t, 0, 0, std::fabs(v), env});
            if (!std::isfinite(v)) tab.finite = false;
            fit.fitted_constant = std::max(fit.fitted_constant, std::fabs(v) / env);
            if (v == 0) continue;
            double y = std::log2(std::fabs(v));
            sx += t;
            sy += y;
            sxx += double(t) * t;
            sxy += t * y;
            ++fit.points;
        }
        double np = static_cast<double>(fit.points);
        if (fit.points >= 2 && np * sxx - sx * sx != 0) fit.fitted_exponent = -(np * sxy - sx * sy) / (np * sxx - sx * sx);
        tab.fits.push_back(fit);
    };
    emit("stop", stop, eta * (1 - gamma));
    emit("error", err, eta / 4);
    for (auto& [um, v] : sep_um) sep[um.first + um.second] += v;
    emit("separated", sep, eta / 4);
    for (auto& [um, v] : sep_um)
        tab.rows.push_back({"separated_um", um.first + um.second, um.first, um.second, std::fabs(v),
                            std::pow(2.0, -eta * (um.first + um.second) / 4)});
    return tab;
}

/// Owns grids, trees and goodness maps of one decomposition instance (addresses stay fixed).
template <class S>
struct DecompositionRun {
    std::unique_ptr<DyadicGrid> g1, g2, g3;
    std::unique_ptr<GridTree> t1, t2;
    GoodnessMap good1, good2;
    Perturbation<S> pert1, pert2;
    FormLedger<S> ledger;
};

/// Samples three grids from `seed` (grid tops raised by extra1/extra2 levels above the covering
/// level), perturbs f~1 and f~2 and builds the ledger.
template <class S>
DecompositionRun<S> run_decomposition(const Measure& m, const Kernel& k, const OperatorMatrix& t,
                                      const SupportFunction<S>& f1t, const SupportFunction<S>& f2t, std::uint64_t seed,
                                      const DecompositionConfig& cfg, int extra1 = 0, int extra2 = 0) {
    DecompositionRun<S> run;
    int kmin = resolving_level(m), kc = covering_level(m);
    run.g1 = std::make_unique<DyadicGrid>(DyadicGrid::sample(m, seed, 1, kmin, kc + extra1));
    run.g2 = std::make_unique<DyadicGrid>(DyadicGrid::sample(m, seed, 2, kmin, kc + extra2));
    run.g3 = std::make_unique<DyadicGrid>(DyadicGrid::sample(m, seed, 3, kmin - 2 + layer_offset(cfg.upsilon), kc));
    run.t1 = std::make_unique<GridTree>(m, *run.g1);
    run.t2 = std::make_unique<GridTree>(m, *run.g2);
    run.good1 = classify_tree(*run.t1, *run.g1, *run.g2, cfg.goodness);
    run.good2 = classify_tree(*run.t2, *run.g1, *run.g2, cfg.goodness);
    run.pert1 = perturb(*run.t1, run.good1, f1t);
    run.pert2 = perturb(*run.t2, run.good2, f2t);
    run.ledger = expand_form(t, k, *run.t1, *run.t2, run.good1, run.good2, *run.g3, run.pert1.f, run.pert2.f, cfg);
    return run;
}

}  // namespace czlab

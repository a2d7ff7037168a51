#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "czlab/dyadic.hpp"
#include "czlab/measure.hpp"

namespace czlab {

/// Random bits omega_{j,k} in {0,1}^n for k in [k_min, k_max], one bitmask per level.
struct ShiftSequence {
    int grid = 1;
    int dim = 1;
    int k_min = 0;
    int k_max = 0;
    std::vector<std::uint32_t> bits;  // bits[k - k_min]
    std::uint64_t seed = 0;

    std::uint32_t at(int k) const {
        if (k < k_min || k > k_max) return 0;
        return bits[static_cast<std::size_t>(k - k_min)];
    }

    /// "j k_min k_max hex-bits seed"; level k_min occupies the lowest bits.
    std::string serialize() const {
        std::vector<int> flat;
        for (auto b : bits)
            for (int c = 0; c < dim; ++c) flat.push_back((b >> c) & 1);
        std::string hex;
        const char* digits = "0123456789abcdef";
        for (std::size_t i = 0; i < flat.size(); i += 4) {
            int v = 0;
            for (std::size_t t = 0; t < 4 && i + t < flat.size(); ++t) v |= flat[i + t] << t;
            hex.push_back(digits[v]);
        }
        if (hex.empty()) hex = "0";
        std::ostringstream os;
        os << grid << ' ' << k_min << ' ' << k_max << ' ' << hex << ' ' << seed;
        return os.str();
    }

    static ShiftSequence deserialize(const std::string& line, int dim) {
        std::istringstream is(line);
        ShiftSequence s;
        std::string hex;
        s.dim = dim;
        if (!(is >> s.grid >> s.k_min >> s.k_max >> hex >> s.seed) || s.k_max < s.k_min)
            throw std::invalid_argument("malformed shift line: " + line);
        std::size_t levels = static_cast<std::size_t>(s.k_max - s.k_min + 1);
        s.bits.assign(levels, 0);
        for (std::size_t i = 0; i < levels * static_cast<std::size_t>(dim); ++i) {
            std::size_t h = i / 4;
            if (h >= hex.size()) break;
            char c = hex[h];
            int v = std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : 10 + (std::tolower(c) - 'a');
            if (v < 0 || v > 15) throw std::invalid_argument("bad hex digit in shift line: " + line);
            if ((v >> (i % 4)) & 1) s.bits[i / static_cast<std::size_t>(dim)] |= 1u << (i % static_cast<std::size_t>(dim));
        }
        return s;
    }
};

/// Bit stream for grid j derived from (seed, j).
class ShiftStream {
public:
    ShiftStream(std::uint64_t seed, int grid) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(grid), 0x5eedu};
        rng_.seed(seq);
    }
    std::uint32_t next(int dim) {
        std::uint32_t b = 0;
        for (int c = 0; c < dim; ++c) b |= static_cast<std::uint32_t>(rng_() & 1u) << c;
        return b;
    }

private:
    std::mt19937_64 rng_;
};

/// Independent uniform bits for each level of [k_min, k_max], deterministic in (seed, j).
inline ShiftSequence sample_shift(std::uint64_t seed, int grid, int k_min, int k_max, int dim = 1) {
    if (k_max < k_min) throw std::invalid_argument("sample_shift: empty level range");
    ShiftSequence s;
    s.grid = grid;
    s.dim = dim;
    s.k_min = k_min;
    s.k_max = k_max;
    s.seed = seed;
    ShiftStream stream(seed, grid);
    for (int k = k_min; k <= k_max; ++k) s.bits.push_back(stream.next(dim));
    return s;
}

inline ShiftSequence zero_shift(int grid, int k_min, int k_max, int dim = 1) {
    ShiftSequence s;
    s.grid = grid;
    s.dim = dim;
    s.k_min = k_min;
    s.k_max = k_max;
    s.bits.assign(static_cast<std::size_t>(k_max - k_min + 1), 0);
    return s;
}

/// Half-open box [anchor, anchor + 2^level)^n of grid `grid`.
struct Cube {
    int grid = 1;
    int level = 0;
    Point anchor;

    Dyadic side() const { return Dyadic::pow2(level); }
    Point upper() const {
        Point u = anchor;
        for (auto& x : u) x += side();
        return u;
    }
    Point center() const {
        Point c = anchor;
        for (auto& x : c) x += Dyadic::pow2(level - 1);
        return c;
    }
    bool contains(const Point& x) const {
        Dyadic l = side();
        for (std::size_t i = 0; i < anchor.size(); ++i)
            if (x[i] < anchor[i] || !(x[i] < anchor[i] + l)) return false;
        return true;
    }
    /// Set inclusion of half-open boxes.
    bool subset_of(const Cube& p) const {
        if (level > p.level) return false;
        Dyadic l = side(), lp = p.side();
        for (std::size_t i = 0; i < anchor.size(); ++i)
            if (anchor[i] < p.anchor[i] || anchor[i] + l > p.anchor[i] + lp) return false;
        return true;
    }
    std::string str() const { return "L" + std::to_string(level) + "[" + point_str(anchor) + "]"; }
    friend bool operator==(const Cube& a, const Cube& b) {
        return a.grid == b.grid && a.level == b.level && a.anchor == b.anchor;
    }
};

/// Sup-norm distance between the closed boxes.
inline Dyadic cube_dist(const Cube& q, const Cube& p) {
    Dyadic best;
    Dyadic lq = q.side(), lp = p.side();
    for (std::size_t i = 0; i < q.anchor.size(); ++i) {
        Dyadic g1 = p.anchor[i] - (q.anchor[i] + lq);
        Dyadic g2 = q.anchor[i] - (p.anchor[i] + lp);
        Dyadic g = g1 > g2 ? g1 : g2;
        if (g > best) best = g;
    }
    return best;
}

/// D(Q,P) = l(Q) + dist(Q,P) + l(P).
inline Dyadic long_distance(const Cube& q, const Cube& p) { return q.side() + cube_dist(q, p) + p.side(); }

/// dist(closure Q, boundary of P).
inline Dyadic boundary_dist(const Cube& q, const Cube& p) {
    Dyadic lq = q.side(), lp = p.side();
    bool inside_open = true;
    Dyadic face;
    bool first = true;
    for (std::size_t i = 0; i < q.anchor.size(); ++i) {
        Dyadic lo = q.anchor[i] - p.anchor[i];
        Dyadic hi = (p.anchor[i] + lp) - (q.anchor[i] + lq);
        if (lo.sign() <= 0 || hi.sign() <= 0) inside_open = false;
        Dyadic m = lo < hi ? lo : hi;
        if (first || m < face) face = m;
        first = false;
    }
    if (inside_open) return face;
    // closure of Q meets or lies outside P; the boundary is then as close as P itself.
    return cube_dist(q, p);
}

class RangeError : public std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Shifted dyadic lattice D(omega) with its top cube.
class DyadicGrid {
public:
    DyadicGrid() = default;

    /// Uses the given shifts; the top cube is the level-k_max cube containing the first atom, which
    /// must then contain every atom.
    DyadicGrid(ShiftSequence shift, const Measure& m) : shift_(std::move(shift)) {
        build_shift_sums();
        top_ = cube_at(m.position(0), shift_.k_max);
        for (const auto& x : m.positions())
            if (!top_.contains(x)) throw RangeError("grid top cube does not contain the support");
    }

    /// Samples shifts on [k_min, k_start] and raises the top level with fresh bits until a single
    /// top cube contains the support.
    static DyadicGrid sample(const Measure& m, std::uint64_t seed, int grid, int k_min, int k_start,
                             int max_extensions = 64) {
        ShiftSequence s;
        s.grid = grid;
        s.dim = m.dim();
        s.k_min = k_min;
        s.k_max = k_start;
        s.seed = seed;
        ShiftStream stream(seed, grid);
        for (int k = k_min; k <= k_start; ++k) s.bits.push_back(stream.next(m.dim()));
        for (int ext = 0; ext <= max_extensions; ++ext) {
            DyadicGrid g;
            g.shift_ = s;
            g.build_shift_sums();
            g.top_ = g.cube_at(m.position(0), s.k_max);
            bool ok = true;
            for (const auto& x : m.positions())
                if (!g.top_.contains(x)) {
                    ok = false;
                    break;
                }
            if (ok) {
                g.extensions_ = ext;
                return g;
            }
            s.bits.push_back(stream.next(m.dim()));
            ++s.k_max;
        }
        throw RangeError("could not find a top cube containing the support");
    }

    const ShiftSequence& shift() const { return shift_; }
    int id() const { return shift_.grid; }
    int dim() const { return shift_.dim; }
    int k_min() const { return shift_.k_min; }
    int k_max() const { return shift_.k_max; }
    const Cube& top() const { return top_; }
    int extensions() const { return extensions_; }

    /// Sum over k_min <= k' < k of 2^{k'} omega_{k'}.
    const Point& shift_sum(int k) const {
        if (k < shift_.k_min || k > shift_.k_max + 1) throw RangeError("level outside grid range");
        return sums_[static_cast<std::size_t>(k - shift_.k_min)];
    }

    /// Level-k cube of the lattice containing x (no top-cube restriction).
    Cube cube_at(const Point& x, int k) const {
        const Point& s = shift_sum(k);
        Cube c{shift_.grid, k, Point(x.size())};
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::int64_t idx = (x[i] - s[i]).floor_div_pow2(k);
            c.anchor[i] = Dyadic(idx, k) + s[i];
        }
        return c;
    }

    Cube cube_containing(const Point& x, int k) const {
        if (!top_.contains(x)) throw RangeError("point outside the top cube");
        if (k < shift_.k_min || k > shift_.k_max) throw RangeError("level outside grid range");
        return cube_at(x, k);
    }

    std::vector<Cube> children(const Cube& q) const {
        if (q.level - 1 < shift_.k_min) throw RangeError("children below the finest level");
        int n = dim();
        std::vector<Cube> out;
        Dyadic h = Dyadic::pow2(q.level - 1);
        for (int mask = 0; mask < (1 << n); ++mask) {
            Cube c{q.grid, q.level - 1, q.anchor};
            for (int i = 0; i < n; ++i)
                if ((mask >> i) & 1) c.anchor[static_cast<std::size_t>(i)] += h;
            out.push_back(std::move(c));
        }
        return out;
    }

    Cube parent(const Cube& q, int t = 1) const {
        if (q.level + t > shift_.k_max + 1) throw RangeError("parent above the shift range");
        return cube_at(q.anchor, q.level + t);
    }

    /// Anchor recomputed from the unshifted lattice index plus the shift sum.
    bool consistent(const Cube& q) const {
        const Point& s = shift_sum(q.level);
        for (std::size_t i = 0; i < q.anchor.size(); ++i) {
            Dyadic rel = q.anchor[i] - s[i];
            if (Dyadic(rel.floor_div_pow2(q.level), q.level) != rel) return false;
        }
        return true;
    }

    /// Minimal sup distance from the closed box Q to the union of all level-k cube boundaries.
    Dyadic lattice_boundary_dist(const Cube& q, int k) const {
        const Point& s = shift_sum(k);
        Dyadic lk = Dyadic::pow2(k), lq = q.side();
        Dyadic best;
        bool first = true;
        for (std::size_t i = 0; i < q.anchor.size(); ++i) {
            Dyadic rel = q.anchor[i] - s[i];
            Dyadic t = rel - Dyadic(rel.floor_div_pow2(k), k);  // in [0, 2^k)
            Dyadic d;
            if (!t.is_zero()) {
                Dyadic right = lk - t - lq;
                d = right.sign() <= 0 ? Dyadic{} : (t < right ? t : right);
            }
            if (first || d < best) best = d;
            first = false;
        }
        return best;
    }

private:
    ShiftSequence shift_;
    std::vector<Point> sums_;
    Cube top_;
    int extensions_ = 0;

    void build_shift_sums() {
        int n = shift_.dim;
        sums_.clear();
        Point acc(static_cast<std::size_t>(n));
        for (int k = shift_.k_min; k <= shift_.k_max + 1; ++k) {
            sums_.push_back(acc);
            std::uint32_t b = shift_.at(k);
            for (int i = 0; i < n; ++i)
                if ((b >> i) & 1) acc[static_cast<std::size_t>(i)] += Dyadic::pow2(k);
        }
    }
};

/// A cube of positive measure inside the top cube.
struct GridNode {
    Cube cube;
    int parent = -1;
    std::vector<int> child;  // by child slot (bitmask of upper halves); -1 when the child is empty
    int begin = 0, end = 0;  // atom range in tree order
    Dyadic mass;
    int depth = 0;
    int present_children() const {
        int c = 0;
        for (int x : child) c += x >= 0;
        return c;
    }
    int level() const { return cube.level; }
};

class ResolutionError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// All positive-measure cubes of a grid between the top and the finest level, with atoms sorted so
/// that every cube is a contiguous range.
class GridTree {
public:
    GridTree() = default;
    GridTree(const Measure& m, const DyadicGrid& g) : mu_(&m), grid_(&g) { build(); }

    const Measure& measure() const { return *mu_; }
    const DyadicGrid& grid() const { return *grid_; }
    std::size_t size() const { return nodes_.size(); }
    const GridNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    const std::vector<GridNode>& nodes() const { return nodes_; }
    const std::vector<int>& order() const { return order_; }  // tree position -> atom
    int position_of(int atom) const { return pos_[static_cast<std::size_t>(atom)]; }
    int leaf_of(int atom) const { return leaf_[static_cast<std::size_t>(atom)]; }

    /// Node id of the support cube equal to q, or -1.
    int find(const Cube& q) const {
        if (q.level < grid_->k_min() || q.level > grid_->k_max() || q.anchor.empty()) return -1;
        if (!grid_->top().contains(q.anchor)) return -1;
        int id = 0;
        while (id >= 0 && nodes_[static_cast<std::size_t>(id)].cube.level > q.level)
            id = child_towards(id, q.anchor);
        if (id < 0 || !(nodes_[static_cast<std::size_t>(id)].cube == q)) return -1;
        return id;
    }

    /// Smallest support cube containing the whole box q (q need not be a cube of this grid), or -1.
    int smallest_containing(const Cube& q) const {
        if (!q.subset_of(grid_->top())) return -1;
        int id = 0;
        for (;;) {
            int c = child_towards(id, q.anchor);
            if (c < 0 || !q.subset_of(nodes_[static_cast<std::size_t>(c)].cube)) return id;
            id = c;
        }
    }

    /// Ancestor of node at the given level (level >= node level).
    int ancestor(int id, int level) const {
        while (id >= 0 && nodes_[static_cast<std::size_t>(id)].cube.level < level) id = nodes_[static_cast<std::size_t>(id)].parent;
        return id;
    }

    /// Child of `id` containing atom position.
    int child_with_atom(int id, int atom) const {
        int p = pos_[static_cast<std::size_t>(atom)];
        for (int c : nodes_[static_cast<std::size_t>(id)].child)
            if (c >= 0 && nodes_[static_cast<std::size_t>(c)].begin <= p && p < nodes_[static_cast<std::size_t>(c)].end) return c;
        return -1;
    }

    bool is_ancestor_or_self(int a, int d) const {
        const auto& A = nodes_[static_cast<std::size_t>(a)];
        const auto& D = nodes_[static_cast<std::size_t>(d)];
        return A.begin <= D.begin && D.end <= A.end && A.cube.level >= D.cube.level;
    }

    /// Node ids grouped by level, coarse to fine.
    std::vector<int> ids_by_level_desc() const {
        std::vector<int> ids(nodes_.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
            return nodes_[static_cast<std::size_t>(a)].cube.level > nodes_[static_cast<std::size_t>(b)].cube.level;
        });
        return ids;
    }

private:
    const Measure* mu_ = nullptr;
    const DyadicGrid* grid_ = nullptr;
    std::vector<GridNode> nodes_;
    std::vector<int> order_, pos_, leaf_;

    int child_towards(int id, const Point& x) const {
        const auto& nd = nodes_[static_cast<std::size_t>(id)];
        if (nd.child.empty()) return -1;
        Dyadic mid = Dyadic::pow2(nd.cube.level - 1);
        int slot = 0;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!(x[i] < nd.cube.anchor[i] + mid)) slot |= 1 << i;
        return nd.child[static_cast<std::size_t>(slot)];
    }

    void build() {
        const Measure& m = *mu_;
        std::vector<int> atoms(m.size());
        for (std::size_t i = 0; i < atoms.size(); ++i) atoms[i] = static_cast<int>(i);
        order_.clear();
        nodes_.clear();
        leaf_.assign(m.size(), -1);
        build_node(grid_->top(), atoms, -1);
        pos_.assign(m.size(), -1);
        for (std::size_t p = 0; p < order_.size(); ++p) pos_[static_cast<std::size_t>(order_[p])] = static_cast<int>(p);
    }

    int build_node(const Cube& cube, const std::vector<int>& atoms, int parent) {
        const Measure& m = *mu_;
        const int n = m.dim();
        int id = static_cast<int>(nodes_.size());
        GridNode nd;
        nd.cube = cube;
        nd.parent = parent;
        nd.depth = parent >= 0 ? nodes_[static_cast<std::size_t>(parent)].depth + 1 : 0;
        nd.begin = static_cast<int>(order_.size());
        for (int a : atoms) nd.mass += m.weight(static_cast<std::size_t>(a));
        nodes_.push_back(std::move(nd));
        if (cube.level == grid_->k_min()) {
            if (atoms.size() > 1)
                throw ResolutionError("finest level " + std::to_string(cube.level) + " does not separate atoms");
            for (int a : atoms) {
                leaf_[static_cast<std::size_t>(a)] = id;
                order_.push_back(a);
            }
        } else {
            std::vector<std::vector<int>> buckets(static_cast<std::size_t>(1 << n));
            Dyadic mid = Dyadic::pow2(cube.level - 1);
            for (int a : atoms) {
                const Point& x = m.position(static_cast<std::size_t>(a));
                int slot = 0;
                for (int i = 0; i < n; ++i)
                    if (!(x[static_cast<std::size_t>(i)] < cube.anchor[static_cast<std::size_t>(i)] + mid)) slot |= 1 << i;
                buckets[static_cast<std::size_t>(slot)].push_back(a);
            }
            std::vector<int> child(static_cast<std::size_t>(1 << n), -1);
            for (int slot = 0; slot < (1 << n); ++slot) {
                if (buckets[static_cast<std::size_t>(slot)].empty()) continue;
                Cube c{cube.grid, cube.level - 1, cube.anchor};
                for (int i = 0; i < n; ++i)
                    if ((slot >> i) & 1) c.anchor[static_cast<std::size_t>(i)] += mid;
                child[static_cast<std::size_t>(slot)] = build_node(c, buckets[static_cast<std::size_t>(slot)], id);
            }
            nodes_[static_cast<std::size_t>(id)].child = std::move(child);
        }
        nodes_[static_cast<std::size_t>(id)].end = static_cast<int>(order_.size());
        return id;
    }
};

/// Finest level whose cubes separate every pair of atoms.
inline int resolving_level(const Measure& m) {
    Dyadic gap = m.min_gap();
    return gap.is_zero() ? 0 : gap.ilog2();
}

/// Smallest level whose cube side is at least the support diameter.
inline int covering_level(const Measure& m) {
    Dyadic d = m.diameter();
    if (d.is_zero()) return 0;
    int k = d.ilog2();
    return Dyadic::pow2(k) < d ? k + 1 : k;
}

}  // namespace czlab

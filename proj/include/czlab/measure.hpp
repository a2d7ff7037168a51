#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "czlab/dyadic.hpp"

namespace czlab {

/// Finite weighted point set in R^n with dyadic positions and weights.
class Measure {
public:
    Measure() = default;
    Measure(int n, std::vector<Point> positions, std::vector<Dyadic> weights)
        : n_(n), pos_(std::move(positions)), w_(std::move(weights)) {
        validate();
    }

    int dim() const { return n_; }
    std::size_t size() const { return pos_.size(); }
    const Point& position(std::size_t i) const { return pos_[i]; }
    const Dyadic& weight(std::size_t i) const { return w_[i]; }
    const std::vector<Point>& positions() const { return pos_; }
    const std::vector<Dyadic>& weights() const { return w_; }

    Dyadic total_mass() const {
        Dyadic t;
        for (const auto& w : w_) t += w;
        return t;
    }

    /// Smallest sup-norm distance between distinct atoms (zero for a single atom).
    Dyadic min_gap() const {
        Dyadic best;
        bool first = true;
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = i + 1; j < size(); ++j) {
                Dyadic d = sup_dist(pos_[i], pos_[j]);
                if (first || d < best) {
                    best = d;
                    first = false;
                }
            }
        return best;
    }

    /// Largest coordinate extent of the support.
    Dyadic diameter() const {
        Dyadic best;
        for (int c = 0; c < n_; ++c) {
            auto [lo, hi] = extent(c);
            if (hi - lo > best) best = hi - lo;
        }
        return best;
    }

    std::pair<Dyadic, Dyadic> extent(int c) const {
        Dyadic lo = pos_.at(0)[c], hi = pos_[0][c];
        for (const auto& p : pos_) {
            if (p[c] < lo) lo = p[c];
            if (p[c] > hi) hi = p[c];
        }
        return {lo, hi};
    }

    /// Copy with atoms listed in a different order.
    Measure permuted(const std::vector<std::size_t>& perm) const {
        std::vector<Point> p;
        std::vector<Dyadic> w;
        for (auto i : perm) {
            p.push_back(pos_.at(i));
            w.push_back(w_.at(i));
        }
        return Measure(n_, std::move(p), std::move(w));
    }

private:
    int n_ = 1;
    std::vector<Point> pos_;
    std::vector<Dyadic> w_;

    void validate() const {
        if (n_ < 1) throw std::invalid_argument("measure dimension must be positive");
        if (pos_.empty()) throw std::invalid_argument("measure has no atoms");
        if (pos_.size() != w_.size()) throw std::invalid_argument("positions/weights length mismatch");
        for (const auto& p : pos_)
            if (static_cast<int>(p.size()) != n_) throw std::invalid_argument("atom with wrong dimension");
        for (const auto& w : w_)
            if (w.sign() <= 0) throw std::invalid_argument("atom weights must be strictly positive");
        std::set<std::vector<std::pair<std::int64_t, int>>> seen;
        for (const auto& p : pos_) {
            std::vector<std::pair<std::int64_t, int>> key;
            for (const auto& x : p) key.emplace_back(x.mantissa(), x.exponent());
            if (!seen.insert(key).second) throw std::invalid_argument("atom positions must be distinct");
        }
    }
};

/// 2^m atoms at i/2^m, weight 2^-m.
inline Measure uniform_1d(int m) {
    std::vector<Point> p;
    std::vector<Dyadic> w;
    for (std::int64_t i = 0; i < (std::int64_t{1} << m); ++i) {
        p.push_back({Dyadic(i, -m)});
        w.push_back(Dyadic::pow2(-m));
    }
    return Measure(1, std::move(p), std::move(w));
}

/// 4^m atoms on the lattice 2^-m Z^2 inside [0,1)^2, weight 4^-m.
inline Measure uniform_2d(int m) {
    std::vector<Point> p;
    std::vector<Dyadic> w;
    std::int64_t side = std::int64_t{1} << m;
    for (std::int64_t i = 0; i < side; ++i)
        for (std::int64_t j = 0; j < side; ++j) {
            p.push_back({Dyadic(i, -m), Dyadic(j, -m)});
            w.push_back(Dyadic::pow2(-2 * m));
        }
    return Measure(2, std::move(p), std::move(w));
}

/// Binary digits kept when rounding triadic Cantor points to dyadic positions.
inline constexpr int kCantorBits = 32;

/// Left endpoints of the 2^m level-m middle-thirds intervals, rounded to the nearest multiple of
/// 2^-32, weight 2^-m.
inline Measure cantor_third(int m) {
    std::vector<Point> p;
    std::vector<Dyadic> w;
    mpz_class three_m;
    mpz_ui_pow_ui(three_m.get_mpz_t(), 3, static_cast<unsigned long>(m));
    for (std::int64_t code = 0; code < (std::int64_t{1} << m); ++code) {
        mpz_class num = 0;
        for (int i = 1; i <= m; ++i) {
            num *= 3;
            if ((code >> (m - i)) & 1) num += 2;
        }
        mpz_class scaled = num << kCantorBits;
        mpz_class q, rem;
        mpz_fdiv_qr(q.get_mpz_t(), rem.get_mpz_t(), scaled.get_mpz_t(), three_m.get_mpz_t());
        if (2 * rem >= three_m) q += 1;
        p.push_back({Dyadic(q.get_si(), -kCantorBits)});
        w.push_back(Dyadic::pow2(-m));
    }
    return Measure(1, std::move(p), std::move(w));
}

/// Four-corner Cantor set: corners of the 4^m level-m squares of side 4^-m, weight 4^-m.
inline Measure cantor_quarter_2d(int m) {
    std::vector<Point> p;
    std::vector<Dyadic> w;
    std::int64_t count = std::int64_t{1} << (2 * m);
    for (std::int64_t code = 0; code < count; ++code) {
        std::int64_t x = 0, y = 0;
        for (int i = 0; i < m; ++i) {
            int digit = static_cast<int>((code >> (2 * (m - 1 - i))) & 3);
            x = 4 * x + ((digit & 1) ? 3 : 0);
            y = 4 * y + ((digit & 2) ? 3 : 0);
        }
        p.push_back({Dyadic(x, -2 * m), Dyadic(y, -2 * m)});
        w.push_back(Dyadic::pow2(-2 * m));
    }
    return Measure(2, std::move(p), std::move(w));
}

/// Text format: one atom per line "x1 ... xn weight"; '#' starts a comment line.
inline Measure parse_measure(std::istream& in, const std::string& source = "<stream>") {
    std::vector<Point> p;
    std::vector<Dyadic> w;
    int n = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        std::vector<std::string> tok;
        for (std::string t; ss >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() < 2)
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected coordinates and weight");
        int dim = static_cast<int>(tok.size()) - 1;
        if (n < 0) n = dim;
        if (dim != n) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": inconsistent dimension");
        Point x;
        try {
            for (int c = 0; c < dim; ++c) x.push_back(Dyadic::parse(tok[c]));
            w.push_back(Dyadic::parse(tok.back()));
        } catch (const std::exception& e) {
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
        p.push_back(std::move(x));
    }
    if (p.empty()) throw std::invalid_argument(source + ": no atoms");
    return Measure(n, std::move(p), std::move(w));
}

inline Measure load_measure(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open measure file: " + path);
    return parse_measure(in, path);
}

inline void write_measure(std::ostream& out, const Measure& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (const auto& x : m.position(i)) out << x.str() << ' ';
        out << m.weight(i).str() << '\n';
    }
}

/// mu(B(center, radius)) for the closed sup-norm ball.
inline Dyadic ball_mass(const Measure& m, const Point& center, const Dyadic& radius) {
    Dyadic s;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (sup_dist(m.position(i), center) <= radius) s += m.weight(i);
    return s;
}

inline double ball_mass(const Measure& m, const Point& center, double radius) {
    if (!(radius > 0)) throw std::invalid_argument("ball_mass: radius must be positive");
    return ball_mass(m, center, Dyadic::from_double(radius)).to_double();
}

enum class LambdaKind { power, clipped_power, tabulated };

/// lambda(x, r); the implemented kinds do not depend on x.
struct DominatingFunction {
    LambdaKind kind = LambdaKind::power;
    double amplitude = 1.0;
    double exponent = 0.0;
    double clip_radius = 0.0;                          // clipped-power: A * max(r, r0)^s
    std::vector<std::pair<double, double>> table;      // tabulated: (radius, value), step from above

    double operator()(const Point&, double r) const { return eval(r); }

    double eval(double r) const {
        switch (kind) {
            case LambdaKind::power:
                return amplitude * std::pow(r, exponent);
            case LambdaKind::clipped_power:
                return amplitude * std::pow(std::max(r, clip_radius), exponent);
            case LambdaKind::tabulated:
                for (const auto& [rad, val] : table)
                    if (r <= rad) return val;
                return table.empty() ? 0.0 : table.back().second;
        }
        return 0.0;
    }

    double doubling_constant() const {
        if (kind != LambdaKind::tabulated) return std::pow(2.0, exponent);
        double c = 1.0;
        for (const auto& [rad, val] : table) {
            double half = eval(rad / 2);
            if (half > 0) c = std::max(c, val / half);
        }
        return c;
    }

    double dimension() const { return std::log2(doubling_constant()); }

    static DominatingFunction power(double a, double s) {
        if (!(a > 0)) throw std::invalid_argument("dominating function amplitude must be positive");
        DominatingFunction l;
        l.amplitude = a;
        l.exponent = s;
        return l;
    }
    static DominatingFunction clipped_power(double a, double s, double r0) {
        DominatingFunction l = power(a, s);
        l.kind = LambdaKind::clipped_power;
        l.clip_radius = r0;
        return l;
    }
};

struct DoublingReport {
    bool pass = true;
    double worst_ratio = 0.0;
    std::size_t witness_atom = 0;
    double witness_radius = 0.0;
    std::string witness_condition;  // "mass", "doubling" or "monotone"
};

/// Relative slack for the floating-point doubling and monotonicity conditions.
inline constexpr double kDoublingTolerance = 1e-12;

/// Checks mass <= lambda (exactly), lambda(r) <= C lambda(r/2) and monotonicity at every atom
/// and radius.
inline DoublingReport verify_upper_doubling(const Measure& m, const DominatingFunction& lambda,
                                            std::vector<double> radii) {
    if (radii.empty()) throw std::invalid_argument("verify_upper_doubling: empty radius list");
    if (lambda.kind != LambdaKind::tabulated && !(lambda.amplitude > 0))
        throw std::invalid_argument("dominating function amplitude must be positive");
    std::sort(radii.begin(), radii.end());
    const double c = lambda.doubling_constant();
    DoublingReport rep;
    auto consider = [&](double ratio, bool ok, std::size_t atom, double r, const char* what) {
        if (ratio > rep.worst_ratio) {
            rep.worst_ratio = ratio;
            rep.witness_atom = atom;
            rep.witness_radius = r;
            rep.witness_condition = what;
        }
        if (!ok) rep.pass = false;
    };
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Point& x = m.position(i);
        double prev = -1.0;
        for (double r : radii) {
            double mass = ball_mass(m, x, r);
            double lam = lambda(x, r);
            consider(lam > 0 ? mass / lam : std::numeric_limits<double>::infinity(), mass <= lam, i, r, "mass");
            double half = lambda(x, r / 2);
            double dr = half > 0 ? lam / (c * half) : (lam > 0 ? std::numeric_limits<double>::infinity() : 0.0);
            consider(dr, dr <= 1 + kDoublingTolerance, i, r, "doubling");
            if (prev >= 0) {
                double mr = lam > 0 ? prev / lam : (prev > 0 ? std::numeric_limits<double>::infinity() : 0.0);
                consider(mr, mr <= 1 + kDoublingTolerance, i, r, "monotone");
            }
            prev = lam;
        }
    }
    return rep;
}

/// Powers of two from a quarter of the minimal atom gap to four times the support diameter.
inline std::vector<double> default_radii(const Measure& m) {
    Dyadic gap = m.min_gap(), diam = m.diameter();
    int lo = gap.is_zero() ? -2 : gap.ilog2() - 2;
    int hi = diam.is_zero() ? 2 : diam.ilog2() + 3;
    std::vector<double> r;
    for (int k = lo; k <= hi; ++k) r.push_back(std::ldexp(1.0, k));
    return r;
}

struct CalibrationError : std::runtime_error {
    std::size_t witness_atom;
    double witness_radius;
    CalibrationError(const std::string& msg, std::size_t atom, double r)
        : std::runtime_error(msg), witness_atom(atom), witness_radius(r) {}
};

/// Safety factor applied to the calibrated amplitude.
inline constexpr double kCalibrationSafety = 1.0 + 0x1p-20;

/// lambda(x,r) = A r^s with A the largest mass/r^s over atoms and radii in [min radii, max radii].
/// Besides the supplied radii, every atom-to-atom distance inside that range is evaluated, so the
/// result dominates the ball masses on the whole continuous range, not only on the grid.
inline DominatingFunction calibrate_dominating(const Measure& m, double s, std::vector<double> radii) {
    if (s < 0) throw std::invalid_argument("calibrate_dominating: exponent must be nonnegative");
    if (radii.empty()) throw std::invalid_argument("calibrate_dominating: empty radius list");
    std::sort(radii.begin(), radii.end());
    const double rmin = radii.front(), rmax = radii.back();
    if (s == 0 && m.size() >= 2) {
        Dyadic gap = m.min_gap();
        throw CalibrationError("exponent 0 cannot give a doubling constant above 1 with several atoms", 0,
                               gap.to_double());
    }
    double best = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Point& x = m.position(i);
        std::vector<std::pair<double, double>> dist;  // (distance, weight)
        dist.reserve(m.size());
        for (std::size_t j = 0; j < m.size(); ++j)
            dist.emplace_back(sup_dist(x, m.position(j)).to_double(), m.weight(j).to_double());
        std::sort(dist.begin(), dist.end());
        std::vector<double> prefix(dist.size());
        double acc = 0;
        for (std::size_t j = 0; j < dist.size(); ++j) prefix[j] = acc += dist[j].second;
        auto mass_at = [&](double r) {
            auto it = std::upper_bound(dist.begin(), dist.end(), std::make_pair(r, std::numeric_limits<double>::infinity()));
            return it == dist.begin() ? 0.0 : prefix[static_cast<std::size_t>(it - dist.begin()) - 1];
        };
        auto consider = [&](double r) { best = std::max(best, mass_at(r) / std::pow(r, s)); };
        for (double r : radii) consider(r);
        for (const auto& [d, w] : dist)
            if (d >= rmin && d <= rmax) consider(d);
    }
    return DominatingFunction::power(best * kCalibrationSafety, s);
}

}  // namespace czlab

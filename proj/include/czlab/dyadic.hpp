#pragma once

#include <cctype>
#include <cerrno>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <gmpxx.h>

namespace czlab {

using Rational = mpq_class;

/// Exact dyadic rational m * 2^e with m odd (or m = 0, e = 0).
class Dyadic {
public:
    Dyadic() = default;
    Dyadic(std::int64_t m, int e = 0) { assign(m, e); }

    static Dyadic pow2(int k) { return Dyadic(1, k); }

    std::int64_t mantissa() const { return m_; }
    int exponent() const { return e_; }
    bool is_zero() const { return m_ == 0; }
    int sign() const { return (m_ > 0) - (m_ < 0); }

    double to_double() const { return std::ldexp(static_cast<double>(m_), e_); }

    Rational to_rational() const {
        Rational q{mpz_class(static_cast<long>(m_))};
        if (e_ >= 0)
            mpq_mul_2exp(q.get_mpq_t(), q.get_mpq_t(), static_cast<unsigned long>(e_));
        else
            mpq_div_2exp(q.get_mpq_t(), q.get_mpq_t(), static_cast<unsigned long>(-e_));
        return q;
    }

    /// Exact conversion; every finite double is dyadic.
    static Dyadic from_double(double x) {
        if (!std::isfinite(x)) throw std::domain_error("Dyadic::from_double: non-finite value");
        if (x == 0.0) return {};
        int ex = 0;
        double fr = std::frexp(x, &ex);
        auto m = static_cast<std::int64_t>(std::ldexp(fr, 53));
        return Dyadic(m, ex - 53);
    }

    /// floor(value / 2^k)
    std::int64_t floor_div_pow2(int k) const {
        if (m_ == 0) return 0;
        int sh = e_ - k;
        if (sh >= 0) return checked_shift(m_, sh);
        if (sh <= -63) return m_ < 0 ? -1 : 0;
        return m_ >> (-sh);
    }

    /// Bit length of |value| in the sense floor(log2|value|).
    int ilog2() const {
        if (m_ == 0) throw std::domain_error("Dyadic::ilog2 of zero");
        std::uint64_t a = m_ < 0 ? static_cast<std::uint64_t>(-m_) : static_cast<std::uint64_t>(m_);
        return 63 - __builtin_clzll(a) + e_;
    }

    Dyadic scaled(int k) const { return m_ == 0 ? Dyadic{} : Dyadic(m_, e_ + k); }

    Dyadic operator-() const {
        Dyadic r;
        r.m_ = -m_;
        r.e_ = e_;
        return r;
    }
    friend Dyadic operator+(const Dyadic& a, const Dyadic& b) {
        if (a.m_ == 0) return b;
        if (b.m_ == 0) return a;
        int e = a.e_ < b.e_ ? a.e_ : b.e_;
        __int128 s = wide_shift(a.m_, a.e_ - e) + wide_shift(b.m_, b.e_ - e);
        return from_wide(s, e);
    }
    friend Dyadic operator-(const Dyadic& a, const Dyadic& b) { return a + (-b); }
    friend Dyadic operator*(const Dyadic& a, const Dyadic& b) {
        if (a.m_ == 0 || b.m_ == 0) return {};
        __int128 p = static_cast<__int128>(a.m_) * b.m_;
        return from_wide(p, a.e_ + b.e_);
    }
    Dyadic& operator+=(const Dyadic& o) { return *this = *this + o; }
    Dyadic& operator-=(const Dyadic& o) { return *this = *this - o; }

    friend bool operator==(const Dyadic& a, const Dyadic& b) { return a.m_ == b.m_ && a.e_ == b.e_; }
    friend std::strong_ordering operator<=>(const Dyadic& a, const Dyadic& b) {
        int sa = a.sign(), sb = b.sign();
        if (sa != sb) return sa <=> sb;
        if (sa == 0) return std::strong_ordering::equal;
        int la = a.ilog2(), lb = b.ilog2();
        if (la != lb) return sa > 0 ? la <=> lb : lb <=> la;
        int e = a.e_ < b.e_ ? a.e_ : b.e_;
        __int128 x = wide_shift(a.m_, a.e_ - e), y = wide_shift(b.m_, b.e_ - e);
        return x < y ? std::strong_ordering::less
                     : (x > y ? std::strong_ordering::greater : std::strong_ordering::equal);
    }

    /// "m*2^e" (or "0").
    std::string str() const {
        if (m_ == 0) return "0";
        if (e_ == 0) return std::to_string(m_);
        return std::to_string(m_) + "*2^" + std::to_string(e_);
    }

    /// Accepts "m*2^e", integers, and decimals that are exactly dyadic (e.g. "0.375", "-1.25e-2").
    static Dyadic parse(const std::string& text) {
        std::string s;
        for (char c : text)
            if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
        if (s.empty()) throw std::invalid_argument("empty dyadic literal");
        auto star = s.find("*2^");
        if (star != std::string::npos) {
            std::int64_t m = parse_int(s.substr(0, star), text);
            long e = parse_int(s.substr(star + 3), text);
            return Dyadic(m, static_cast<int>(e));
        }
        Rational q = parse_decimal(s);
        mpz_class den = q.get_den();
        if (mpz_popcount(den.get_mpz_t()) != 1)
            throw std::invalid_argument("not an exactly dyadic value: " + text);
        int e = -static_cast<int>(mpz_sizeinbase(den.get_mpz_t(), 2) - 1);
        mpz_class num = q.get_num();
        if (!num.fits_slong_p()) throw std::overflow_error("dyadic mantissa too large: " + text);
        return Dyadic(num.get_si(), e);
    }

    /// Exact rational value of a decimal literal such as "-12.5e-3".
    static Rational parse_decimal(const std::string& s) {
        std::size_t i = 0;
        bool neg = false;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) neg = s[i++] == '-';
        std::string digits;
        long frac = 0;
        bool dot = false, any = false;
        for (; i < s.size(); ++i) {
            char c = s[i];
            if (std::isdigit(static_cast<unsigned char>(c))) {
                digits.push_back(c);
                any = true;
                if (dot) ++frac;
            } else if (c == '.' && !dot) {
                dot = true;
            } else {
                break;
            }
        }
        long ex = 0;
        if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
            ex = parse_int(s.substr(i + 1), s);
            i = s.size();
        }
        if (!any || i != s.size()) throw std::invalid_argument("malformed number: " + s);
        mpz_class num(digits, 10);
        long p = ex - frac;
        mpz_class ten = 10, scale;
        mpz_pow_ui(scale.get_mpz_t(), ten.get_mpz_t(), static_cast<unsigned long>(p < 0 ? -p : p));
        Rational q = p >= 0 ? Rational(num * scale) : Rational(num, scale);
        q.canonicalize();
        return neg ? Rational(-q) : q;
    }

private:
    std::int64_t m_ = 0;
    int e_ = 0;

    void assign(std::int64_t m, int e) {
        if (m == 0) {
            m_ = 0;
            e_ = 0;
            return;
        }
        int tz = __builtin_ctzll(static_cast<std::uint64_t>(m));
        m_ = m >> tz;
        e_ = e + tz;
    }

    static __int128 wide_shift(std::int64_t m, int sh) {
        if (sh > 62) throw std::overflow_error("Dyadic: exponent spread exceeds 128-bit range");
        return static_cast<__int128>(m) << sh;
    }
    static std::int64_t checked_shift(std::int64_t m, int sh) {
        __int128 w = wide_shift(m, sh);
        if (w > std::numeric_limits<std::int64_t>::max() || w < std::numeric_limits<std::int64_t>::min())
            throw std::overflow_error("Dyadic: integer overflow");
        return static_cast<std::int64_t>(w);
    }
    static Dyadic from_wide(__int128 w, int e) {
        if (w == 0) return {};
        while ((w & 1) == 0) {
            w >>= 1;
            ++e;
        }
        if (w > std::numeric_limits<std::int64_t>::max() || w < std::numeric_limits<std::int64_t>::min())
            throw std::overflow_error("Dyadic: mantissa overflow");
        return Dyadic(static_cast<std::int64_t>(w), e);
    }
    static long parse_int(const std::string& s, const std::string& ctx) {
        char* end = nullptr;
        errno = 0;
        long v = std::strtol(s.c_str(), &end, 10);
        if (s.empty() || *end != '\0' || errno != 0) throw std::invalid_argument("malformed integer in: " + ctx);
        return v;
    }
};

using Point = std::vector<Dyadic>;

inline std::string point_str(const Point& p) {
    std::string s;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) s += ' ';
        s += p[i].str();
    }
    return s;
}

inline std::vector<double> to_doubles(const Point& p) {
    std::vector<double> v(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) v[i] = p[i].to_double();
    return v;
}

/// Sup-norm distance between points.
inline Dyadic sup_dist(const Point& a, const Point& b) {
    Dyadic best;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Dyadic d = a[i] - b[i];
        if (d.sign() < 0) d = -d;
        if (d > best) best = d;
    }
    return best;
}

}  // namespace czlab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "czlab/dyadic.hpp"

namespace czlab {

enum class Arith { rational, floating };

inline std::string arith_name(Arith a) { return a == Arith::rational ? "rational" : "float"; }

template <class S>
inline constexpr bool is_exact_v = std::is_same_v<S, Rational>;

template <class S>
S scalar_from_double(double x) {
    if constexpr (is_exact_v<S>)
        return Rational(x);  // mpq_set_d is exact
    else
        return x;
}

template <class S>
S scalar_from_dyadic(const Dyadic& d) {
    if constexpr (is_exact_v<S>)
        return d.to_rational();
    else
        return d.to_double();
}

template <class S>
double to_double(const S& x) {
    if constexpr (is_exact_v<S>)
        return x.get_d();
    else
        return x;
}

template <class S>
S scalar_abs(const S& x) {
    if constexpr (is_exact_v<S>)
        return abs(x);
    else
        return std::fabs(x);
}

template <class S>
bool is_zero(const S& x) {
    if constexpr (is_exact_v<S>)
        return sgn(x) == 0;
    else
        return x == 0.0;
}

/// |a - b| <= tol * scale, or exact equality for exact scalars.
template <class S>
bool agrees(const S& a, const S& b, double rel_tol, double scale) {
    if constexpr (is_exact_v<S>)
        return a == b;
    else
        return std::fabs(a - b) <= rel_tol * std::max(scale, std::numeric_limits<double>::min());
}

/// Exact sum of dyadic values held as a 128-bit integer at a fixed binary exponent.
class FixedSum {
public:
    FixedSum() = default;
    explicit FixedSum(__int128 v) : v_(v) {}
    __int128 raw() const { return v_; }
    FixedSum& operator+=(FixedSum o) {
        v_ += o.v_;
        return *this;
    }
    FixedSum& operator-=(FixedSum o) {
        v_ -= o.v_;
        return *this;
    }
    friend FixedSum operator+(FixedSum a, FixedSum b) { return FixedSum(a.v_ + b.v_); }
    friend FixedSum operator-(FixedSum a, FixedSum b) { return FixedSum(a.v_ - b.v_); }
    friend bool operator==(FixedSum a, FixedSum b) { return a.v_ == b.v_; }

private:
    __int128 v_ = 0;
};

inline mpz_class mpz_from_int128(__int128 v) {
    bool neg = v < 0;
    unsigned __int128 u = neg ? static_cast<unsigned __int128>(-v) : static_cast<unsigned __int128>(v);
    auto hi = static_cast<std::uint64_t>(u >> 64), lo = static_cast<std::uint64_t>(u);
    mpz_class z = static_cast<unsigned long>(hi);
    z <<= 64;
    z += static_cast<unsigned long>(lo);
    return neg ? mpz_class(-z) : z;
}

/// Value raw * 2^exponent as a scalar.
template <class S>
S fixed_to_scalar(FixedSum s, int exponent) {
    if constexpr (is_exact_v<S>) {
        Rational q{mpz_from_int128(s.raw())};
        if (exponent >= 0)
            mpq_mul_2exp(q.get_mpq_t(), q.get_mpq_t(), static_cast<unsigned long>(exponent));
        else
            mpq_div_2exp(q.get_mpq_t(), q.get_mpq_t(), static_cast<unsigned long>(-exponent));
        return q;
    } else {
        return std::ldexp(static_cast<double>(s.raw()), exponent);
    }
}

/// Integer mantissa of d at binary exponent e (d must be a multiple of 2^e).
inline __int128 fixed_mantissa(const Dyadic& d, int e) {
    if (d.is_zero()) return 0;
    int sh = d.exponent() - e;
    if (sh < 0) throw std::logic_error("fixed_mantissa: value finer than the fixed exponent");
    if (sh > 62) throw std::overflow_error("fixed_mantissa: exact accumulator range exceeded");
    return static_cast<__int128>(d.mantissa()) << sh;
}

/// Convert a decimal / fraction literal ("0.2", "1/5", "3") to an exact rational.
inline Rational parse_rational(const std::string& text) {
    auto slash = text.find('/');
    if (slash != std::string::npos) {
        Rational a = Dyadic::parse_decimal(text.substr(0, slash));
        Rational b = Dyadic::parse_decimal(text.substr(slash + 1));
        if (sgn(b) == 0) throw std::invalid_argument("zero denominator: " + text);
        Rational q = a / b;
        q.canonicalize();
        return q;
    }
    return Dyadic::parse_decimal(text);
}

inline std::string rational_str(const Rational& q) { return q.get_str(); }

}  // namespace czlab

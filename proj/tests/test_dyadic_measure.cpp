#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "czlab/measure.hpp"

using namespace czlab;

namespace {

Rational q(long a, long b = 1) {
    Rational r(a, b);
    r.canonicalize();
    return r;
}

}  // namespace

TEST(Dyadic, ArithmeticMatchesRationalOracle) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::int64_t> mant(-(1 << 20), 1 << 20);
    std::uniform_int_distribution<int> ex(-20, 20);
    for (int i = 0; i < 2000; ++i) {
        Dyadic a(mant(rng), ex(rng)), b(mant(rng), ex(rng));
        Rational ra = a.to_rational(), rb = b.to_rational();
        EXPECT_EQ((a + b).to_rational(), Rational(ra + rb));
        EXPECT_EQ((a - b).to_rational(), Rational(ra - rb));
        EXPECT_EQ((a * b).to_rational(), Rational(ra * rb));
        EXPECT_EQ(a < b, ra < rb);
        EXPECT_EQ(a == b, ra == rb);
    }
}

TEST(Dyadic, CanonicalFormAndParsing) {
    EXPECT_EQ(Dyadic(12, 0), Dyadic(3, 2));
    EXPECT_EQ(Dyadic::parse("0.375"), Dyadic(3, -3));
    EXPECT_EQ(Dyadic::parse("5*2^-4"), Dyadic(5, -4));
    EXPECT_EQ(Dyadic::parse("-1.25e-1").to_rational(), q(-1, 8));
}

TEST(Dyadic, RejectsNonDyadicDecimal) { EXPECT_THROW(Dyadic::parse("0.1"), std::invalid_argument); }

TEST(Dyadic, FromDoubleIsExact) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 500; ++i) {
        double x = u(rng);
        EXPECT_EQ(Dyadic::from_double(x).to_rational(), Rational(x));
    }
}

TEST(Dyadic, MultiplicationOverflowThrows) {
    Dyadic big((std::int64_t{1} << 62) - 1, 0);
    EXPECT_THROW(big * big, std::overflow_error);
}

TEST(Dyadic, FloorDivAndLog) {
    EXPECT_EQ(Dyadic(3, -2).floor_div_pow2(-1), 1);  // 0.75 / 0.5
    EXPECT_EQ(Dyadic(-3, -2).floor_div_pow2(-1), -2);
    EXPECT_EQ(Dyadic(5, 3).ilog2(), 5);
}

TEST(Measure, BallMassOnEightPoints) {
    Measure m = uniform_1d(3);
    Point c{Dyadic(1, -1)};
    EXPECT_EQ(ball_mass(m, c, Dyadic(1, -2)), Dyadic(5, -3));
}

TEST(Measure, BallMassTrivialCases) {
    Measure m = uniform_1d(4);
    Point off{Dyadic(1, -5)};
    EXPECT_EQ(ball_mass(m, off, Dyadic(1, -6)), Dyadic());
    Point mid{Dyadic(1, -1)};
    EXPECT_EQ(ball_mass(m, mid, m.diameter()), m.total_mass());
}

TEST(Measure, BuiltinsHaveUnitMassAndExpectedSizes) {
    for (const Measure& m : {uniform_1d(5), uniform_2d(3), cantor_third(6), cantor_quarter_2d(3)}) {
        EXPECT_EQ(m.total_mass(), Dyadic(1));
    }
    EXPECT_EQ(uniform_1d(8).size(), 256u);
    EXPECT_EQ(uniform_2d(3).size(), 64u);
    EXPECT_EQ(cantor_third(6).size(), 64u);
    EXPECT_EQ(cantor_quarter_2d(3).size(), 64u);
}

TEST(Measure, CantorAtomsWithinRoundingOfTriadicPoints) {
    Measure m = cantor_third(5);
    for (std::size_t i = 0; i < m.size(); ++i) {
        double x = m.position(i)[0].to_double() * 243.0;
        EXPECT_NEAR(x, std::round(x), 243.0 * std::ldexp(1.0, -kCantorBits));
        long k = std::lround(x);
        for (int d = 0; d < 5; ++d, k /= 3) EXPECT_NE(k % 3, 1);
    }
}

TEST(Measure, ParseWriteRoundTrip) {
    Measure m = cantor_quarter_2d(2);
    std::stringstream ss;
    write_measure(ss, m);
    Measure back = parse_measure(ss);
    ASSERT_EQ(back.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_EQ(back.position(i), m.position(i));
        EXPECT_EQ(back.weight(i), m.weight(i));
    }
}

TEST(Measure, RejectsMalformedInput) {
    std::stringstream dup("0.5 0.5\n0.5 0.5\n");
    EXPECT_THROW(parse_measure(dup), std::invalid_argument);
    std::stringstream neg("0.5 -1\n");
    EXPECT_THROW(parse_measure(neg), std::invalid_argument);
}

TEST(UpperDoubling, LinearLambdaFailsOnSixteenPoints) {
    // A closed ball of radius 1/16 around an interior atom holds three atoms: 3/16 > 2/16.
    Measure m = uniform_1d(4);
    std::vector<double> radii;
    for (int k = -6; k <= 1; ++k) radii.push_back(std::ldexp(1.0, k));
    DoublingReport rep = verify_upper_doubling(m, DominatingFunction::power(2.0, 1.0), radii);
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(rep.witness_condition, "mass");
}

TEST(UpperDoubling, ClippedLambdaPassesOnSixteenPoints) {
    Measure m = uniform_1d(4);
    std::vector<double> radii;
    for (int k = -6; k <= 1; ++k) radii.push_back(std::ldexp(1.0, k));
    DominatingFunction l = DominatingFunction::clipped_power(3.0, 1.0, 1.0 / 16);
    DoublingReport rep = verify_upper_doubling(m, l, radii);
    EXPECT_TRUE(rep.pass) << rep.witness_condition << " at r=" << rep.witness_radius;
    EXPECT_DOUBLE_EQ(l.doubling_constant(), 2.0);
}

TEST(UpperDoubling, TwoUnitAtomsFailAtUnitRadius) {
    Measure m(1, {{Dyadic(0)}, {Dyadic(1)}}, {Dyadic(1), Dyadic(1)});
    DoublingReport rep = verify_upper_doubling(m, DominatingFunction::power(1.0, 1.0), {1.0});
    EXPECT_FALSE(rep.pass);
    EXPECT_DOUBLE_EQ(rep.worst_ratio, 2.0);
}

TEST(Calibration, SingleAtomGivesUnitConstant) {
    Measure m(1, {{Dyadic(1, -1)}}, {Dyadic(1)});
    DominatingFunction l = calibrate_dominating(m, 0.0, {0.25, 0.5, 1.0});
    EXPECT_NEAR(l.amplitude, 1.0, 1e-5);
}

TEST(Calibration, UniformMeasureAmplitudeMatchesOracle) {
    // Brute force over the supplied radii and every atom gap inside their range.
    Measure m = uniform_1d(8);
    std::vector<double> radii = default_radii(m);
    std::vector<double> cand = radii;
    for (int j = 1; j <= 256; ++j)
        if (j / 256.0 >= radii.front() && j / 256.0 <= radii.back()) cand.push_back(j / 256.0);
    double oracle = 0;
    for (double r : cand)
        for (std::size_t i = 0; i < m.size(); i += 17) oracle = std::max(oracle, ball_mass(m, m.position(i), r) / r);
    DominatingFunction l = calibrate_dominating(m, 1.0, radii);
    EXPECT_DOUBLE_EQ(oracle, 4.0);  // one atom in the smallest ball of radius gap/4
    EXPECT_NEAR(l.amplitude, oracle * kCalibrationSafety, 1e-12);
    EXPECT_NEAR(l.amplitude, 4.000003815, 1e-8);
    EXPECT_TRUE(verify_upper_doubling(m, l, radii).pass);
}

TEST(Calibration, CantorSixDominates) {
    Measure m = cantor_third(6);
    double s = std::log(2.0) / std::log(3.0);
    DominatingFunction l = calibrate_dominating(m, s, default_radii(m));
    EXPECT_LE(l.amplitude, 4.01);
    EXPECT_TRUE(verify_upper_doubling(m, l, default_radii(m)).pass);
    EXPECT_NEAR(l.doubling_constant(), std::pow(2.0, s), 1e-15);
}

#include <gtest/gtest.h>

#include <random>

#include "czlab/martingale.hpp"

using namespace czlab;

namespace {

std::vector<Rational> random_q(std::size_t n, std::mt19937_64& rng) {
    std::vector<Rational> f(n);
    for (auto& v : f) {
        v = Rational(static_cast<long>(rng() % 41) - 20, 8);
        v.canonicalize();
    }
    return f;
}

std::vector<double> random_d(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<double> f(n);
    for (auto& v : f) v = u(rng);
    return f;
}

struct Instance {
    Measure m;
    DyadicGrid g;
    GridTree t;
    Instance(Measure mm, std::uint64_t seed)
        : m(std::move(mm)), g(DyadicGrid::sample(m, seed, 1, resolving_level(m), covering_level(m))), t(m, g) {}
};

Measure two_atoms(Dyadic w0, Dyadic w1) { return Measure(1, {{Dyadic()}, {Dyadic(1, -1)}}, {w0, w1}); }

}  // namespace

TEST(Averages, FourAtomIndicator) {
    Measure m = uniform_1d(2);
    std::vector<Rational> f{0, 1, 0, 1};
    Cube unit{1, 0, {Dyadic()}};
    EXPECT_EQ(average(m, f, unit), Rational(1, 2));
    EXPECT_EQ(average(m, f, Cube{1, -1, {Dyadic(1, -1)}}), Rational(1, 2));
    EXPECT_EQ(average(m, f, Cube{1, -2, {Dyadic(3, -2)}}), Rational(1));
    EXPECT_EQ(average(m, f, Cube{1, 0, {Dyadic(4)}}), Rational(0));
}

TEST(Expansion, TwoAtomDifferences) {
    Measure m = two_atoms(Dyadic(1, -1), Dyadic(1, -1));
    DyadicGrid g(zero_shift(1, -1, 0), m);
    GridTree t(m, g);
    std::vector<Rational> f{3, 7};
    auto e = expand(t, f);
    EXPECT_EQ(e.top, Rational(5));
    EXPECT_EQ(e.value(0, 0), Rational(-2));
    EXPECT_EQ(e.value(0, 1), Rational(2));
    EXPECT_EQ(reconstruct(e), f);
}

TEST(Expansion, UnequalWeightsHaveZeroMeanDifferences) {
    Measure m = two_atoms(Dyadic(1, -2), Dyadic(3, -2));
    DyadicGrid g(zero_shift(1, -1, 0), m);
    GridTree t(m, g);
    std::vector<Rational> f{4, 0};
    auto e = expand(t, f);
    EXPECT_EQ(e.top, Rational(1));
    EXPECT_EQ(integral(m, delta_function(e, 0)), Rational(0));
    EXPECT_EQ(reconstruct(e), f);
}

TEST(Expansion, ReconstructionExactOnFiftyFunctions) {
    std::mt19937_64 rng(21);
    Instance inst(cantor_quarter_2d(3), 3);
    for (int i = 0; i < 50; ++i) {
        auto f = random_q(inst.m.size(), rng);
        EXPECT_EQ(reconstruct(expand(inst.t, f)), f);
    }
}

TEST(Expansion, DifferencesIntegrateToZeroOnEachCube) {
    std::mt19937_64 rng(22);
    Instance inst(cantor_third(5), 4);
    auto f = random_q(inst.m.size(), rng);
    auto e = expand(inst.t, f);
    for (std::size_t i = 0; i < inst.t.size(); ++i) EXPECT_EQ(integral(inst.m, delta_function(e, static_cast<int>(i))), 0);
}

TEST(Parseval, ExactInRationalArithmetic) {
    std::mt19937_64 rng(5);
    for (const Measure& m : {uniform_1d(6), cantor_third(6), cantor_quarter_2d(3)}) {
        Instance inst(m, 7);
        for (int i = 0; i < 10; ++i) {
            auto f = random_q(m.size(), rng);
            auto e = expand(inst.t, f);
            EXPECT_EQ(parseval_defect(e, f), 0);
            EXPECT_EQ(orthogonality_defect(e), 0);
        }
    }
}

TEST(Parseval, FloatDefectTiny) {
    std::mt19937_64 rng(6);
    Instance inst(uniform_1d(8), 2);
    for (int i = 0; i < 10; ++i) {
        auto f = random_d(inst.m.size(), rng);
        auto e = expand(inst.t, f);
        EXPECT_LE(std::fabs(parseval_defect(e, f)), 1e-12 * inner(inst.m, f, f));
    }
}

TEST(Transform, ConstantCoefficients) {
    std::mt19937_64 rng(8);
    Instance inst(uniform_1d(5), 1);
    auto f = random_q(inst.m.size(), rng);
    auto e = expand(inst.t, f);
    auto id = transform(e, std::vector<Rational>(inst.t.size(), Rational(1)));
    for (std::size_t a = 0; a < f.size(); ++a) EXPECT_EQ(id[a], f[a] - e.top);
    auto zero = transform(e, std::vector<Rational>(inst.t.size(), Rational(0)));
    for (const auto& v : zero) EXPECT_EQ(v, 0);
    EXPECT_THROW(transform(e, std::vector<Rational>(inst.t.size(), Rational(2))), std::invalid_argument);
}

TEST(Transform, BoundedCoefficientsDoNotIncreaseL2) {
    std::mt19937_64 rng(9);
    Instance inst(cantor_third(6), 5);
    for (int i = 0; i < 20; ++i) {
        auto f = random_q(inst.m.size(), rng);
        auto e = expand(inst.t, f);
        std::vector<Rational> eps(inst.t.size());
        for (auto& v : eps) {
            v = Rational(static_cast<long>(rng() % 9) - 4, 4);
            v.canonicalize();
        }
        auto tf = transform(e, eps);
        std::vector<Rational> centred(f.size());
        for (std::size_t a = 0; a < f.size(); ++a) centred[a] = f[a] - e.top;
        EXPECT_LE(inner(inst.m, tf, tf), inner(inst.m, centred, centred));
    }
}

TEST(Transform, SignsRespectBurkholderConstant) {
    std::mt19937_64 rng(10);
    Instance inst(uniform_1d(7), 3);
    for (double p : {1.5, 3.0}) {
        double pstar = std::max(p, p / (p - 1));
        for (int i = 0; i < 20; ++i) {
            auto f = random_d(inst.m.size(), rng);
            auto e = expand(inst.t, f);
            std::vector<double> eps(inst.t.size());
            for (auto& v : eps) v = (rng() & 1) ? 1.0 : -1.0;
            EXPECT_LE(lp_ratio(inst.m, f, transform(e, eps), p), pstar - 1 + 1e-12);
        }
    }
}

TEST(SquareFunction, MatchesDirectSum) {
    std::mt19937_64 rng(12);
    Instance inst(uniform_2d(3), 2);
    auto f = random_q(inst.m.size(), rng);
    auto e = expand(inst.t, f);
    auto sq = square_function_sq(e);
    for (std::size_t a = 0; a < f.size(); ++a) {
        Rational s = 0;
        for (std::size_t i = 0; i < inst.t.size(); ++i) {
            Rational v = e.value(static_cast<int>(i), static_cast<int>(a));
            s += v * v;
        }
        EXPECT_EQ(sq[a], s);
    }
}

TEST(ConditionalExpectation, FixesLevelMeasurableFunctions) {
    std::mt19937_64 rng(13);
    Instance inst(uniform_1d(6), 4);
    int k = inst.g.k_min() + 2;
    auto f = random_q(inst.m.size(), rng);
    auto ek = conditional_expectation(inst.t, node_averages(inst.t, f), k);
    auto again = conditional_expectation(inst.t, node_averages(inst.t, ek), k);
    EXPECT_EQ(ek, again);
    EXPECT_EQ(integral(inst.m, ek), integral(inst.m, f));
}

TEST(Stein, LowerSideBoundedAtPTwo) {
    std::mt19937_64 rng(14);
    Instance inst(cantor_third(6), 6);
    std::size_t levels = static_cast<std::size_t>(inst.g.k_max() - inst.g.k_min() + 1);
    for (int i = 0; i < 10; ++i) {
        std::vector<std::vector<double>> fk(levels);
        for (auto& f : fk) f = random_d(inst.m.size(), rng);
        SteinSides s = stein_sides(inst.t, fk, 2.0);
        EXPECT_LE(s.lhs, s.rhs * (1 + 1e-12));
        EXPECT_GT(s.rhs, 0);
    }
    EXPECT_THROW(stein_sides(inst.t, std::vector<std::vector<double>>(1), 2.0), std::invalid_argument);
}

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <random>

#include "czlab/operator.hpp"

using namespace czlab;

namespace {

Measure two_halves() { return Measure(1, {{Dyadic()}, {Dyadic(1, -1)}}, {Dyadic(1, -1), Dyadic(1, -1)}); }

double svd_norm(const OperatorMatrix& t) {
    const auto n = static_cast<Eigen::Index>(t.size());
    Eigen::MatrixXd b(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            b(i, j) = std::sqrt(t.weight(static_cast<std::size_t>(i))) * t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
                      std::sqrt(t.weight(static_cast<std::size_t>(j)));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b);
    return svd.singularValues()(0);
}

// Random kernel with a random dense table, stored through the atom coordinate.
Kernel table_kernel(const Measure& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    auto tab = std::make_shared<std::map<std::pair<double, double>, double>>();
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j)
            (*tab)[{m.position(i)[0].to_double(), m.position(j)[0].to_double()}] = nd(rng);
    Kernel k;
    k.name = "table";
    k.fn = [tab](const std::vector<double>& x, const std::vector<double>& y) { return tab->at({x[0], y[0]}); };
    return k;
}

}  // namespace

TEST(Kernel, CatalogAndValidation) {
    using V = std::vector<double>;
    EXPECT_EQ(make_kernel("zero", 1, 1)(V{0.0}, V{1.0}), 0.0);
    EXPECT_EQ(make_kernel("constant", 1, 3)(V{0.0}, V{1.0}), 3.0);
    EXPECT_DOUBLE_EQ(sign_power_kernel(1, 2)(V{0.0}, V{0.25}), -8.0);
    EXPECT_DOUBLE_EQ(sign_power_kernel(0.5)(V{1.0}, V{0.75}), 2.0);
    EXPECT_DOUBLE_EQ(riesz_kernel(2)(V{0.5, 0.0}, V{0.0, 0.25}), 0.5 / 0.125);
    EXPECT_EQ(sign_power_kernel(1)(V{0.5}, V{0.5}), 0.0);
    EXPECT_THROW(make_kernel("nope", 1, 1), std::invalid_argument);
    EXPECT_THROW(sign_power_kernel(0), std::invalid_argument);
}

TEST(Kernel, SizeConstantMatchesCalibration) {
    Measure m = cantor_third(5);
    double s = std::log(2.0) / std::log(3.0);
    DominatingFunction l = calibrate_dominating(m, s, default_radii(m));
    Kernel k = sign_power_kernel(s);
    KernelReport rep = verify_kernel(k, m, l, 1.0);
    EXPECT_TRUE(rep.antisymmetric);
    EXPECT_NEAR(rep.c_size, l.amplitude, 1e-9 * l.amplitude);
    EXPECT_GT(rep.triples, 0u);
    EXPECT_LE(rep.c_smooth, k.declared_smoothness(l.amplitude, 1.0));
}

TEST(Matrix, TwoAtomConstantKernel) {
    Measure m = two_halves();
    OperatorMatrix t(constant_kernel(1), m);
    std::vector<Rational> f{3, 8};
    auto tf = t.apply(f);
    EXPECT_EQ(tf[0], Rational(4));
    EXPECT_EQ(tf[1], Rational(3, 2));
    NormEstimate n = l2_norm(t);
    EXPECT_NEAR(n.upper, 0.5, 1e-12);
    EXPECT_TRUE(n.converged);
}

TEST(Matrix, ZeroKernelIsZero) {
    Measure m = uniform_1d(5);
    OperatorMatrix t(zero_kernel(), m);
    std::vector<double> f(m.size(), 1.0);
    for (double v : t.apply(f)) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(l2_norm(t).upper, 0.0);
    EXPECT_EQ(l1_norm(t), 0.0);
}

TEST(Matrix, AdjointDuality) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    Measure m = cantor_third(6);
    OperatorMatrix t(sign_power_kernel(0.63), m);
    for (int i = 0; i < 10; ++i) {
        std::vector<double> f(m.size()), g(m.size());
        for (auto& v : f) v = u(rng);
        for (auto& v : g) v = u(rng);
        auto tf = t.apply(f), tg = t.adjoint(g);
        double a = 0, b = 0, scale = 0;
        for (std::size_t x = 0; x < m.size(); ++x) {
            double w = m.weight(x).to_double();
            a += tf[x] * g[x] * w;
            b += f[x] * tg[x] * w;
            scale += std::fabs(tf[x] * g[x] * w);
        }
        EXPECT_NEAR(a, b, 1e-12 * scale);
    }
}

TEST(Norms, LanczosMatchesSvd) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        Measure m = seed % 2 ? cantor_third(6) : uniform_1d(6);
        OperatorMatrix t(table_kernel(m, seed), m);
        double oracle = svd_norm(t);
        NormEstimate est = l2_norm(t);
        EXPECT_NEAR(est.upper, oracle, 1e-8 * oracle);
    }
    Measure m = cantor_quarter_2d(3);
    OperatorMatrix r(riesz_kernel(1.0), m);
    EXPECT_NEAR(l2_norm(r).upper, svd_norm(r), 1e-8 * svd_norm(r));
}

TEST(Norms, LpBoundsAreConsistent) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        Measure m = uniform_1d(5);
        OperatorMatrix t(table_kernel(m, seed + 10), m);
        for (double p : {1.25, 1.5, 3.0, 4.0}) {
            NormEstimate e = lp_norm_estimate(t, p, seed);
            EXPECT_TRUE(e.consistent()) << p << " " << e.lower << " " << e.upper;
            EXPECT_GT(e.lower, 0);
        }
    }
    Measure m = uniform_1d(4);
    OperatorMatrix t(constant_kernel(1), m);
    EXPECT_THROW(lp_norm_estimate(t, 1.0), std::invalid_argument);
}

TEST(Norms, EndpointNormsAgreeWithBruteForce) {
    Measure m = cantor_third(4);
    OperatorMatrix t(sign_power_kernel(0.5), m);
    double best1 = 0, bestinf = 0;
    for (std::size_t a = 0; a < m.size(); ++a) {
        double c = 0, r = 0;
        for (std::size_t b = 0; b < m.size(); ++b) {
            c += std::fabs(t.at(b, a)) * m.weight(b).to_double();
            r += std::fabs(t.at(a, b)) * m.weight(b).to_double();
        }
        best1 = std::max(best1, c);
        bestinf = std::max(bestinf, r);
    }
    EXPECT_DOUBLE_EQ(l1_norm(t), best1);
    EXPECT_DOUBLE_EQ(linf_norm(t), bestinf);
}

TEST(Pairing, ExactMatchesRationalOracle) {
    Measure m = cantor_third(5);
    OperatorMatrix t(sign_power_kernel(0.63), m);
    ExactPairing ex(t);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        std::vector<int> a, b;
        for (std::size_t x = 0; x < m.size(); ++x) {
            if (rng() % 3 == 0) a.push_back(static_cast<int>(x));
            if (rng() % 3 == 0) b.push_back(static_cast<int>(x));
        }
        Rational oracle = 0;
        for (int x : b)
            for (int y : a)
                oracle += Rational(t.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) *
                          m.weight(static_cast<std::size_t>(x)).to_rational() * m.weight(static_cast<std::size_t>(y)).to_rational();
        EXPECT_EQ(ex.value<Rational>(ex.sets(a, b)), oracle);
    }
}

TEST(Pairing, RangeRectanglesMatchSets) {
    Measure m = uniform_1d(5);
    OperatorMatrix t(sign_power_kernel(1.0), m);
    ExactPairing ex(t);
    DyadicGrid g1 = DyadicGrid::sample(m, 1, 1, resolving_level(m), covering_level(m));
    DyadicGrid g2 = DyadicGrid::sample(m, 1, 2, resolving_level(m), covering_level(m));
    GridTree t1(m, g1), t2(m, g2);
    RangePairing rp(ex, t2.order(), t1.order());
    for (const GridNode& q : t2.nodes())
        for (const GridNode& p : t1.nodes()) {
            std::vector<int> qa(t2.order().begin() + q.begin, t2.order().begin() + q.end);
            std::vector<int> pa(t1.order().begin() + p.begin, t1.order().begin() + p.end);
            ASSERT_TRUE(rp.rect(q.begin, q.end, p.begin, p.end) == ex.sets(pa, qa));
        }
}

TEST(Testing, ConstantsOnSimpleKernels) {
    Measure m = uniform_1d(4);
    CubeFamily fam = testing_family(m, 2, 1);
    TestingReport z = testing_constants(OperatorMatrix(zero_kernel(), m), fam, 2, 2);
    EXPECT_EQ(z.c_testing, 0.0);
    EXPECT_EQ(z.c_wbp, 0.0);
    TestingReport a = testing_constants(OperatorMatrix(sign_power_kernel(1.0), m), fam, 2, 2);
    EXPECT_LT(a.c_wbp, 1e-9);
    EXPECT_GT(a.c_testing, 0);
    EXPECT_NEAR(a.c_testing, a.c_testing_adj, 1e-9 * a.c_testing);
    EXPECT_GT(a.cubes, 0u);
}

TEST(Bmo, ConstantAndIndicator) {
    Measure m = uniform_1d(5);
    CubeFamily fam = testing_family(m, 2, 3);
    std::vector<double> c(m.size(), 2.0);
    EXPECT_NEAR(bmo_norm(m, c, Dyadic(2), 2, fam).norm, 0.0, 1e-15);
    std::vector<double> ind(m.size());
    for (std::size_t i = 0; i < m.size() / 2; ++i) ind[i] = 1;
    BmoReport r = bmo_norm(m, ind, Dyadic(2), 2, fam);
    EXPECT_GT(r.norm, 0);
    EXPECT_LE(r.worst_bound_ratio, 1 + 1e-12);
    EXPECT_THROW(bmo_norm(m, ind, Dyadic(1, -1), 2, fam), std::invalid_argument);
}

TEST(Geometry, DistanceToDifference) {
    Cube q{1, -3, {Dyadic(3, -3)}}, p{1, -1, {Dyadic(0)}}, r{1, 0, {Dyadic(0)}};
    EXPECT_DOUBLE_EQ(dist_to_difference(q, p, r), 0.0);
    Cube q2{1, -3, {Dyadic(1, -3)}};
    EXPECT_DOUBLE_EQ(dist_to_difference(q2, p, r), 0.25);
    EXPECT_TRUE(std::isinf(dist_to_difference(q2, p, p)));
}

TEST(OffDiagonal, SignPowerHoldsAndExcessiveSmoothnessFails) {
    Measure m = cantor_third(6);
    double s = std::log(2.0) / std::log(3.0);
    DominatingFunction l = calibrate_dominating(m, s, default_radii(m));
    DyadicGrid g = DyadicGrid::sample(m, 4, 1, resolving_level(m), covering_level(m));
    GridTree t(m, g);
    Kernel k = sign_power_kernel(s);
    OffDiagonalReport ok = off_diagonal_check(k, t, l, 1.0, 100, 7);
    EXPECT_EQ(ok.triples, 100u);
    EXPECT_EQ(ok.violations, 0u);
    OffDiagonalReport bad = off_diagonal_check(k, t, l, 3.0, 100, 7);
    EXPECT_GT(bad.violations, 0u);
}

TEST(Containment, GoodPairsNestInAncestors) {
    Measure m = cantor_third(6);
    GoodnessParams gp = GoodnessParams::derived(10, rational_ceil(std::log(2.0) / std::log(3.0)), 1);
    ContainmentReport rep = containment_check(m, sign_power_kernel(0.63), gp, 60, 5);
    EXPECT_EQ(rep.pairs, 60u);
    EXPECT_EQ(rep.failures, 0u);
}

#include <gtest/gtest.h>

#include <random>

#include "czlab/decomposition.hpp"

using namespace czlab;

namespace {

struct Bench {
    Measure m;
    Kernel k;
    OperatorMatrix t;
    Bench(Measure mm, Kernel kk) : m(std::move(mm)), k(std::move(kk)), t(k, m) {}
};

DecompositionConfig config(int r, const Rational& d) {
    DecompositionConfig cfg;
    cfg.goodness = GoodnessParams::derived(r, d, 1);
    return cfg;
}

Rational cantor_d() { return rational_ceil(std::log(2.0) / std::log(3.0)); }

template <class S>
S direct_oracle(const Bench& b, const std::vector<S>& f1, const std::vector<S>& f2) {
    S acc{};
    for (std::size_t x = 0; x < b.m.size(); ++x)
        for (std::size_t y = 0; y < b.m.size(); ++y)
            acc += scalar_from_double<S>(b.t.at(x, y)) * scalar_from_dyadic<S>(b.m.weight(y)) * f1[y] *
                   scalar_from_dyadic<S>(b.m.weight(x)) * f2[x];
    return acc;
}

}  // namespace

TEST(Classify, ThreeExamplesAndExclusivity) {
    Cube p{1, 0, {Dyadic(0)}};
    PairMembership in = classify_pair(p, Cube{1, -4, {Dyadic(3, -3)}}, 2);
    EXPECT_TRUE(in.inside);
    EXPECT_EQ(in.count(), 1);
    PairMembership sep = classify_pair(p, Cube{1, -2, {Dyadic(3, -1)}}, 2);
    EXPECT_TRUE(sep.separated);
    EXPECT_EQ(sep.count(), 1);
    PairMembership near = classify_pair(p, Cube{1, -1, {Dyadic(1, -1)}}, 2);
    EXPECT_TRUE(near.nearby);
    EXPECT_EQ(near.count(), 1);
    EXPECT_THROW(classify_pair(Cube{1, -1, {Dyadic(0)}}, p, 2), std::invalid_argument);
}

TEST(Classify, GoodPairsFallInExactlyOneClass) {
    Measure m = cantor_third(6);
    for (int r : {2, 4, 10}) {
        GoodnessParams gp = GoodnessParams::derived(r, cantor_d(), 1);
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            DyadicGrid g1 = DyadicGrid::sample(m, seed, 1, resolving_level(m), covering_level(m));
            DyadicGrid g2 = DyadicGrid::sample(m, seed, 2, resolving_level(m), covering_level(m));
            GridTree t1(m, g1), t2(m, g2);
            GoodnessMap good2 = classify_tree(t2, g1, g2, gp);
            for (std::size_t q = 0; q < t2.size(); ++q)
                for (const GridNode& p : t1.nodes()) {
                    const Cube& qc = t2.node(static_cast<int>(q)).cube;
                    if (qc.level > p.cube.level) continue;
                    PairMembership mem = classify_pair(p.cube, qc, r);
                    EXPECT_LE(mem.count(), 1);
                    if (good2[static_cast<int>(q)]) {
                        EXPECT_EQ(mem.count(), 1) << qc.str() << " " << p.cube.str();
                    }
                }
        }
    }
}

TEST(Surgery, LayerOffset) {
    EXPECT_EQ(layer_offset(Dyadic(1, -2)), -8);
    EXPECT_EQ(layer_offset(Dyadic(3, -3)), -7);
    EXPECT_EQ(layer_offset(Dyadic(1, -1)), -7);
    EXPECT_THROW(layer_offset(Dyadic(1)), std::invalid_argument);
    EXPECT_THROW(layer_offset(Dyadic()), std::invalid_argument);
}

TEST(Surgery, CollarGrowsWithWidth) {
    Measure m = uniform_2d(4);
    Cube c{1, -2, {Dyadic(1, -2), Dyadic(1, -1)}};
    std::size_t prev = 0;
    for (int e = -5; e <= -1; ++e) {
        std::size_t count = 0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            bool wide = in_collar(m.position(i), c, Dyadic::pow2(e));
            if (e > -5 && in_collar(m.position(i), c, Dyadic::pow2(e - 1))) {
                EXPECT_TRUE(wide);
            }
            count += wide;
        }
        EXPECT_GE(count, prev);
        prev = count;
    }
    EXPECT_GT(prev, 0u);
    Point centre = c.center();
    EXPECT_TRUE(in_closed_dilate(centre, c, Dyadic(1, -4)));
    EXPECT_FALSE(in_collar(centre, c, Dyadic(1, -1)));
}

TEST(Perturb, AllGoodIsIdentityAllBadIsMean) {
    Measure m = uniform_1d(5);
    DyadicGrid g = DyadicGrid::sample(m, 1, 1, resolving_level(m), covering_level(m));
    GridTree t(m, g);
    auto f = random_test_function<Rational>(m.size(), 3);
    GoodnessMap all_good{std::vector<char>(t.size(), 1), std::vector<char>(t.size(), 0)};
    GoodnessMap all_bad{std::vector<char>(t.size(), 0), std::vector<char>(t.size(), 0)};
    auto a = perturb(t, all_good, f);
    EXPECT_EQ(a.f, f);
    EXPECT_EQ(a.bad_cubes, 0u);
    auto b = perturb(t, all_bad, f);
    Rational mean = integral(m, f) / m.total_mass().to_rational();
    for (const auto& v : b.f) EXPECT_EQ(v, mean);
    EXPECT_EQ(b.bad_cubes, t.size());
}

TEST(Perturb, ProjectionAndDifferencesHold) {
    Measure m = cantor_third(6);
    GoodnessParams gp = GoodnessParams::derived(10, cantor_d(), 1);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        DyadicGrid g1 = DyadicGrid::sample(m, seed, 1, resolving_level(m), covering_level(m) + 4);
        DyadicGrid g2 = DyadicGrid::sample(m, seed, 2, resolving_level(m), covering_level(m) + 4);
        GridTree t(m, g1);
        GoodnessMap good = classify_tree(t, g1, g2, gp);
        auto p = perturb(t, good, random_test_function<Rational>(m.size(), seed));
        EXPECT_TRUE(p.projection_ok);
        EXPECT_TRUE(p.deltas_ok);
        auto pf = perturb(t, good, random_test_function<double>(m.size(), seed));
        EXPECT_TRUE(pf.projection_ok);
        EXPECT_TRUE(pf.deltas_ok);
    }
}

TEST(Form, TwoAtomToy) {
    Bench b(Measure(1, {{Dyadic()}, {Dyadic(1, -1)}}, {Dyadic(1, -1), Dyadic(1, -1)}), sign_power_kernel(1.0));
    std::vector<Rational> f1{1, 3}, f2{-2, 5};
    auto run = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, 1, config(1, 1));
    EXPECT_EQ(run.ledger.direct, direct_oracle(b, run.pert1.f, run.pert2.f));
    EXPECT_TRUE(run.ledger.reconstructs());
    EXPECT_TRUE(run.ledger.failures().empty());
}

TEST(Form, ZeroKernelGivesZeros) {
    Bench b(uniform_1d(5), zero_kernel());
    auto [f1, f2] = seeded_functions<Rational>(b.m.size(), 2);
    auto run = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, 2, config(2, 1));
    const auto& L = run.ledger;
    EXPECT_EQ(L.direct, 0);
    EXPECT_EQ(L.e_top, 0);
    EXPECT_EQ(L.e_mixed, 0);
    EXPECT_EQ(L.main.total(), 0);
    EXPECT_EQ(L.mirror.total(), 0);
    EXPECT_TRUE(L.failures().empty());
}

TEST(Form, UniformNearbySurgeryIdentities) {
    Bench b(uniform_1d(6), sign_power_kernel(1.0));
    std::size_t surgeries = 0, nearby = 0;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        auto [f1, f2] = seeded_functions<Rational>(b.m.size(), seed);
        auto run = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, seed, config(2, 1));
        const auto& L = run.ledger;
        EXPECT_EQ(L.direct, direct_oracle(b, run.pert1.f, run.pert2.f));
        EXPECT_TRUE(L.failures().empty()) << L.failures().front();
        for (const auto* tr : {&L.main, &L.mirror}) {
            surgeries += tr->surgery.surgeries;
            nearby += tr->n_nearby;
            EXPECT_EQ(tr->unclassified, 0u);
            EXPECT_EQ(tr->multiclassified, 0u);
        }
    }
    EXPECT_GT(nearby, 0u);
    EXPECT_GT(surgeries, 0u);
}

TEST(Form, CantorDeepInstanceExercisesInsideTerms) {
    Bench b(cantor_third(7), sign_power_kernel(std::log(2.0) / std::log(3.0)));
    DecompositionConfig cfg = config(10, Rational(631, 1000));
    std::size_t inside = 0, coefficients = 0, regroup_terms = 0;
    for (std::uint64_t seed : {2, 3}) {
        auto [f1, f2] = seeded_functions<Rational>(b.m.size(), seed);
        auto run = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, seed, cfg);
        const auto& L = run.ledger;
        EXPECT_TRUE(L.reconstructs());
        EXPECT_TRUE(L.failures().empty()) << L.failures().front();
        for (const auto* tr : {&L.main, &L.mirror}) {
            inside += tr->n_inside;
            coefficients += tr->eps.coefficients;
            regroup_terms += tr->regroup.terms_not_sub + tr->regroup.terms_sub;
            EXPECT_LE(tr->eps.max_abs, 8.0);
        }
    }
    EXPECT_GT(inside, 0u);
    EXPECT_GT(coefficients, 0u);
    EXPECT_GT(regroup_terms, 0u);
}

TEST(Form, FloatAgreesWithRational) {
    Bench b(cantor_third(6), sign_power_kernel(std::log(2.0) / std::log(3.0)));
    DecompositionConfig cfg = config(3, cantor_d());
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto [q1, q2] = seeded_functions<Rational>(b.m.size(), seed);
        auto [d1, d2] = seeded_functions<double>(b.m.size(), seed);
        auto rq = run_decomposition<Rational>(b.m, b.k, b.t, q1, q2, seed, cfg);
        auto rd = run_decomposition<double>(b.m, b.k, b.t, d1, d2, seed, cfg);
        double scale = rq.ledger.scale;
        EXPECT_NEAR(rd.ledger.direct, rq.ledger.direct.get_d(), 1e-12 * scale);
        EXPECT_NEAR(rd.ledger.main.total(), rq.ledger.main.total().get_d(), 1e-12 * scale);
        EXPECT_NEAR(rd.ledger.mirror.total(), rq.ledger.mirror.total().get_d(), 1e-12 * scale);
        EXPECT_LE(rd.ledger.residual(), 1e-12);
        EXPECT_TRUE(rd.ledger.failures().empty());
    }
}

TEST(Form, DeterministicPerSeed) {
    Bench b(uniform_1d(5), sign_power_kernel(1.0));
    auto [f1, f2] = seeded_functions<Rational>(b.m.size(), 4);
    auto a = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, 4, config(2, 1));
    auto c = run_decomposition<Rational>(b.m, b.k, b.t, f1, f2, 4, config(2, 1));
    EXPECT_EQ(a.ledger.main.total(), c.ledger.main.total());
    EXPECT_EQ(a.ledger.mirror.n_nearby, c.ledger.mirror.n_nearby);
}

TEST(Decay, DiagnosticsFinite) {
    Bench b(cantor_third(7), sign_power_kernel(std::log(2.0) / std::log(3.0)));
    DecompositionConfig cfg = config(10, Rational(631, 1000));
    auto [f1, f2] = seeded_functions<double>(b.m.size(), 2);
    auto run = run_decomposition<double>(b.m, b.k, b.t, f1, f2, 2, cfg);
    DecayTable tab = decay_diagnostics(run.ledger, cfg.goodness);
    EXPECT_TRUE(tab.finite);
    for (const auto& row : tab.rows) {
        EXPECT_TRUE(std::isfinite(row.value));
        EXPECT_GT(row.envelope, 0);
    }
}

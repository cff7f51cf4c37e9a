#include <gtest/gtest.h>

#include "ri/potential.hpp"

using namespace ri;

namespace {

WeightedGraph z3(int w, int zext) {
    return WeightedGraph(std::make_shared<const BaseGraph>(BaseGraph::lattice(2, w)), -zext, zext);
}
WeightedGraph gasket_z(int level, int zext) {
    return WeightedGraph(std::make_shared<const BaseGraph>(BaseGraph::gasket(level)), -zext, zext);
}
SiteId origin(const WeightedGraph& g) { return g.site(*g.base().vertex_at({0, 0}), 0); }
SiteId lat(const WeightedGraph& g, int a, int b, int z) { return g.site(*g.base().vertex_at({a, b}), z); }

// g(0,0) for simple random walk on Z^3 (Watson's integral 1.516386...) divided by rho = 6
constexpr double kG0 = 1.5163860591519780 / 6.0;

SiteSet random_subset(const SiteSet& s, std::size_t k, Philox& rng) {
    SiteSet out = s;
    for (std::size_t i = 0; i < k; ++i) std::swap(out[i], out[i + rng.below(out.size() - i)]);
    out.resize(k);
    normalize(out);
    return out;
}

}  // namespace

TEST(Potential, SingleSiteDomain) {
    auto g = z3(4, 4);
    KilledGreen G(g, {origin(g)});
    EXPECT_NEAR(G(origin(g), origin(g)), 1.0 / 6, 1e-15);
}

TEST(Potential, SymmetryNonnegativityMonotonicity) {
    auto g = z3(8, 8);
    Philox rng(3, 0);
    auto big = ball(g, origin(g), 5, g.default_params());
    for (int rep = 0; rep < 5; ++rep) {
        auto U = random_subset(big, 200, rng);
        KilledGreen G(g, U);
        EXPECT_LE(G.stats().symmetry_error, 1e-10);
        auto B = G.block(U, U);
        EXPECT_GE(B.minCoeff(), 0.0);
        EXPECT_LE((B - B.transpose()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ(G(U[0], origin(g) + 1000000), 0.0);
        auto U2 = set_union(U, random_subset(big, 150, rng));
        KilledGreen G2(g, U2);
        auto B2 = G2.block(U, U);
        EXPECT_GE((B2 - B).minCoeff(), -1e-13);
    }
}

TEST(Potential, BackendsAgree) {
    for (auto g : {z3(10, 10), gasket_z(4, 12)}) {
        SiteId c = g.base().kind() == BaseGraph::Kind::Lattice ? origin(g) : g.site(*g.base().gasket_vertex(4, 2), 0);
        auto U = ball(g, c, 4, g.default_params());
        ASSERT_LE(U.size(), 4000u);
        KilledGreen dense(g, U);
        SolverOptions fo;
        fo.dense_cap = 0;
        KilledGreen fac(g, U, fo);
        fo.allow_factored = false;
        KilledGreen cg(g, U, fo);
        ASSERT_EQ(dense.mode(), KilledGreen::Mode::Dense);
        ASSERT_EQ(fac.mode(), KilledGreen::Mode::Factored);
        ASSERT_EQ(cg.mode(), KilledGreen::Mode::Iterative);
        std::vector<SiteId> X{U[0], U[U.size() / 3], c, U.back()}, T{c, U[U.size() / 2], U[7]};
        auto D = dense.block(X, T), F = fac.block(X, T), C = cg.block(X, T);
        EXPECT_LE((D - F).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((D - C).cwiseAbs().maxCoeff(), 1e-10);
        auto pd = dense.potential(T, {1.0, 0.5, 2.0}), pf = fac.potential(T, {1.0, 0.5, 2.0});
        for (std::size_t i = 0; i < pd.size(); ++i) ASSERT_NEAR(pd[i], pf[i], 1e-12);
    }
}

TEST(Potential, GreenAtOriginZ3) {
    auto g = z3(44, 44);
    auto est = green_estimate(g, origin(g), origin(g), {20, 40}, g.default_params());
    EXPECT_NEAR(est.value, kG0, 2e-4);
    EXPECT_LE(est.bracket.lo, kG0);
    EXPECT_GE(est.bracket.hi, kG0);
    EXPECT_GE(est.value, 1.0 / 6);
    EXPECT_LE(est.error, est.value);
    EXPECT_THROW(green_estimate(g, origin(g), origin(g), {20}, g.default_params()), std::invalid_argument);
}

TEST(Potential, CapacityRoutesAgree) {
    auto g = z3(24, 24);
    auto p = g.default_params();
    auto U = ball(g, origin(g), 20, p);
    KilledGreen G(g, U);
    SiteId x = origin(g), y = lat(g, 2, 1, 3);
    auto single = hitting_field(g, U, {x});
    EXPECT_NEAR(single.eq.capacity * G(x, x), 1.0, 1e-8);
    SiteSet pair{x, y};
    normalize(pair);
    auto two = hitting_field(g, U, pair);
    double formula = pair_capacity(G(x, x), G(y, y), G(x, y));
    EXPECT_NEAR(two.eq.capacity / formula, 1.0, 1e-8);
    EXPECT_NEAR(equilibrium_green(G, pair).capacity / formula, 1.0, 1e-8);
    EXPECT_DOUBLE_EQ(pair_capacity(0.25, 0.5, 0.0), 4.0 + 2.0);
}

TEST(Potential, EquilibriumMeasureBracket) {
    auto g = z3(44, 44);
    auto p = g.default_params();
    auto s = equilibrium_measure(g, {origin(g)}, origin(g), 40, p);
    EXPECT_NEAR(s.extrapolated, 1.0 / kG0, 5e-3);
    EXPECT_LE(s.error_bracket.lo, 1.0 / kG0);
    EXPECT_GE(s.error_bracket.hi, 1.0 / kG0);
    auto s2 = equilibrium_measure(g, {origin(g)}, origin(g), 20, p);
    EXPECT_GT(s2.capacity, s.capacity);  // escape probabilities decrease with the domain
    EXPECT_LT(s.error_bracket.hi - s.error_bracket.lo, s2.error_bracket.hi - s2.error_bracket.lo);
    EXPECT_EQ(equilibrium_measure(g, {}, origin(g), 10, p).capacity, 0.0);
    EXPECT_THROW(equilibrium_measure(g, ball(g, origin(g), 10, p), origin(g), 10, p), GeometryError);
}

TEST(Potential, HittingProbabilities) {
    auto g = z3(16, 16);
    auto p = g.default_params();
    SiteId x = origin(g), y = lat(g, 3, 0, 2);
    EXPECT_EQ(hitting_prob(g, x, {x}, x, 12, p).direct, 1.0);
    auto h = hitting_prob(g, y, {x}, x, 12, p);
    EXPECT_NEAR(h.direct, h.via_identity, 1e-10);
    KilledGreen G(g, ball(g, x, 12, p));
    EXPECT_NEAR(h.direct, G(y, x) / G(x, x), 1e-10);
    EXPECT_LT(h.direct, 1.0);
    EXPECT_LE(h.bracket.lo, h.bracket.hi);

    // sandwich bounds on a dense killed domain
    auto U = ball(g, x, 5, p);
    KilledGreen D(g, U);
    Philox rng(17, 0);
    auto inner = ball(g, x, 3, p);
    for (int t = 0; t < 100; ++t) {
        auto K = random_subset(inner, 1 + rng.below(6), rng);
        SiteId s = inner[rng.below(inner.size())];
        auto f = hitting_field(g, U, K);
        double hs = f.h[f.dom->local(s)];
        auto GK = D.block(K, K);
        double lo = INFINITY, hi = 0, num = D.block({s}, K).sum();
        for (Eigen::Index i = 0; i < GK.rows(); ++i) {
            lo = std::min(lo, GK.row(i).sum());
            hi = std::max(hi, GK.row(i).sum());
        }
        EXPECT_LE(num / hi, hs + 1e-10);
        EXPECT_GE(num / lo, hs - 1e-10);
    }
}

TEST(Potential, CapacityPropertiesOnKilledDomains) {
    auto g = z3(10, 10);
    auto p = g.default_params();
    auto U = ball(g, origin(g), 6, p);
    KilledGreen G(g, U);
    auto inner = ball(g, origin(g), 4, p);
    Philox rng(23, 0);
    double cstar = 0;
    for (SiteId s : inner) cstar = std::max(cstar, 1.0 / G(s, s));
    for (int t = 0; t < 200; ++t) {
        auto A = random_subset(inner, 1 + rng.below(5), rng), B = random_subset(inner, 1 + rng.below(5), rng);
        double ca = equilibrium_green(G, A).capacity, cb = equilibrium_green(G, B).capacity;
        double cab = equilibrium_green(G, set_union(A, B)).capacity;
        EXPECT_LE(cab, ca + cb + 1e-10);
        SiteSet Ax = set_union(A, {inner[rng.below(inner.size())]});
        double cax = equilibrium_green(G, Ax).capacity;
        EXPECT_GE(cax, ca - 1e-10);
        EXPECT_LE(cax, ca + cstar + 1e-10);
    }
}

TEST(Potential, SweepingIdentity) {
    auto g = z3(10, 10);
    auto p = g.default_params();
    SiteId c = origin(g);
    auto V = ball(g, c, 6, p), U = ball(g, c, 3, p), W = ball(g, c, 1, p);
    auto eU = killed_equilibrium(g, V, U), eW = killed_equilibrium(g, V, W);
    auto table = entrance_table(g, V, W);
    std::vector<double> swept(W.size(), 0.0);
    for (std::size_t i = 0; i < U.size(); ++i) {
        if (eU.e[i] == 0) continue;
        auto law = table.at(U[i], W);
        for (std::size_t j = 0; j < W.size(); ++j) swept[j] += eU.e[i] * law[j];
    }
    for (std::size_t j = 0; j < W.size(); ++j) EXPECT_NEAR(swept[j], eW.e[j], 1e-10);
}

TEST(Potential, CapacityBallProbe) {
    auto g = z3(40, 40);
    auto pr = capacity_ball_probe(g, origin(g), {2, 4, 8}, g.default_params(), 3);
    EXPECT_NEAR(pr.fit.slope, 1.0, 0.15);
    EXPECT_THROW(capacity_ball_probe(g, origin(g), {2}, g.default_params()), std::invalid_argument);
}

TEST(Potential, HarnackRatios) {
    auto g = z3(40, 40);
    auto p = g.default_params();
    BoundaryData one;
    auto r = harnack_ratio(g, origin(g), 2, 4, one, p);
    EXPECT_NEAR(r.ratio, 1.0, 1e-9);
    std::vector<double> ratios;
    for (double L : {2.0, 4.0, 8.0}) {
        auto U = ball(g, origin(g), 4 * L, p);
        auto outer = boundary(g, U, BoundaryKind::Outer);
        BoundaryData ind{BoundaryData::Kind::Indicator, 0, outer.front(), {}};
        auto h = harnack_ratio(g, origin(g), L, 4, ind, p);
        EXPECT_LE(h.residual, 1e-9);
        ratios.push_back(h.ratio);
    }
    for (double v : ratios) EXPECT_LT(v, 2 * ratios.front());
    BoundaryData bad{BoundaryData::Kind::Indicator, 0, origin(g), {}};
    EXPECT_THROW(harnack_ratio(g, origin(g), 2, 4, bad, p), std::invalid_argument);
}

TEST(Potential, EntranceLawSpreadBounded) {
    auto g = z3(20, 20);
    auto p = g.default_params();
    SiteId c = origin(g);
    auto V = ball(g, c, 12, p), W = ball(g, c, 1, p);
    auto shell = ball_interior_boundary(g, c, 6, p);
    std::vector<SiteId> starts{shell.front(), shell[shell.size() / 2], shell.back()};
    auto s = entrance_law_spread(g, V, W, starts);
    EXPECT_GE(s.spread, 1.0);
    EXPECT_TRUE(std::isfinite(s.spread));
}

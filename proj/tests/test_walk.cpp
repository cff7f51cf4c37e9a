#include <gtest/gtest.h>

#include "ri/walk.hpp"

using namespace ri;

namespace {

WeightedGraph z3(int w, int zext) {
    return WeightedGraph(std::make_shared<const BaseGraph>(BaseGraph::lattice(2, w)), -zext, zext);
}

void expect_freq(std::size_t k, std::size_t n, double p) {
    double sd = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(static_cast<double>(k) / n, p, 3 * sd) << "expected " << p;
}

}  // namespace

TEST(Walk, UniformOnZ3) {
    auto g = z3(3, 3);
    SiteId x = g.site(*g.base().vertex_at({0, 0}), 0);
    Philox rng(1, 0);
    std::map<SiteId, std::size_t> count;
    const std::size_t n = 60000;
    for (std::size_t i = 0; i < n; ++i) ++count[walk_step(g, x, rng)];
    EXPECT_EQ(count.size(), 6u);
    for (auto [s, k] : count) {
        EXPECT_TRUE(g.adjacent(x, s));
        expect_freq(k, n, 1.0 / 6);
    }
}

TEST(Walk, TwoVertexAndWeightedCycle) {
    auto two = WeightedGraph::flat(std::make_shared<const BaseGraph>(BaseGraph::explicit_graph(2, {{0, 1, 1.0}})));
    Philox rng(2, 0);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(walk_step(two, 0, rng), 1);

    auto tri = WeightedGraph::flat(
        std::make_shared<const BaseGraph>(BaseGraph::explicit_graph(3, {{0, 1, 1.0}, {0, 2, 2.0}, {1, 2, 1.0}})));
    std::size_t to1 = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) to1 += walk_step(tri, 0, rng) == 1;
    expect_freq(to1, n, 1.0 / 3);
}

TEST(Walk, StoppingConventions) {
    auto g = z3(4, 4);
    SiteId x = g.site(*g.base().vertex_at({0, 0}), 0);
    Philox rng(3, 0);
    StopSpec s{StopSpec::Mode::Entrance, {x}, 1000};
    auto t = run_walk(g, x, s, rng);
    EXPECT_EQ(t.sites.size(), 1u);
    EXPECT_EQ(t.stop_reason, StopReason::HitTarget);
    s.mode = StopSpec::Mode::Hitting;
    s.target = ball(g, x, 1, g.default_params());
    t = run_walk(g, x, s, rng);
    EXPECT_GE(t.sites.size(), 2u);
    for (std::size_t i = 1; i < t.sites.size(); ++i) EXPECT_TRUE(g.adjacent(t.sites[i - 1], t.sites[i]));
    StopSpec bad{StopSpec::Mode::Exit, {}, 10};
    EXPECT_THROW(run_walk(g, x, bad, rng), std::invalid_argument);
}

TEST(Walk, Reproducible) {
    auto g = z3(20, 20);
    SiteId x = g.site(*g.base().vertex_at({0, 0}), 0);
    StopSpec s{StopSpec::Mode::Exit, ball(g, x, 5, g.default_params()), 100000};
    Philox a(9, 4), b(9, 4);
    EXPECT_EQ(run_walk(g, x, s, a).sites, run_walk(g, x, s, b).sites);
}

TEST(Walk, ExitTimeMatchesGamblersRuin) {
    WeightedGraph g(std::make_shared<const BaseGraph>(BaseGraph::lattice(0, 0)), -20, 20);
    SiteSet U;
    for (int z = -5; z <= 5; ++z) U.push_back(g.site(0, z));
    auto P = transition_operator(g, U);
    // survival P[T > n] = (P_U^n 1)(0)
    Eigen::VectorXd v = Eigen::VectorXd::Ones(P.rows());
    std::vector<double> surv{1.0};
    for (int n = 1; n <= 200; ++n) {
        v = P * v;
        surv.push_back(v(5));
    }
    Philox rng(5, 0);
    const std::size_t trials = 20000;
    std::vector<std::size_t> exceed(201, 0);
    double mean = 0;
    StopSpec s{StopSpec::Mode::Exit, U, 100000};
    for (std::size_t i = 0; i < trials; ++i) {
        auto t = run_walk(g, g.site(0, 0), s, rng);
        ASSERT_EQ(t.stop_reason, StopReason::ExitedDomain);
        std::size_t T = t.sites.size() - 1;
        mean += static_cast<double>(T) / trials;
        for (std::size_t n = 0; n < std::min<std::size_t>(T, 201); ++n) ++exceed[n];
    }
    for (int n : {10, 20, 36, 60, 100}) expect_freq(exceed[n], trials, surv[n]);
    EXPECT_NEAR(mean, 36.0, 3 * std::sqrt(36.0 * 36.0 / trials) * 1.5);
}

TEST(Walk, TransitionOperatorProperties) {
    auto g = z3(6, 6);
    SiteId x = g.site(*g.base().vertex_at({0, 0}), 0);
    auto U = ball(g, x, 3, g.default_params());
    auto P = transition_operator(g, U);
    auto inner = ball(g, x, 2, g.default_params());
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        if (contains(inner, U[i])) {
            EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-12);
        }
        EXPECT_LE(P.row(i).sum(), 1.0 + 1e-12);
    }
    Eigen::VectorXd rho(P.rows());
    for (Eigen::Index i = 0; i < P.rows(); ++i) rho(i) = g.rho(U[i]);
    Eigen::MatrixXd Pn = P;
    for (int n = 1; n <= 6; ++n) {
        Eigen::MatrixXd S = rho.asDiagonal() * Pn;
        EXPECT_LE((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-10) << "n = " << n;
        Pn = Pn * P;
    }
    EXPECT_THROW(transition_operator(g, U, 10), std::length_error);

    // two-step law against Monte Carlo
    Eigen::MatrixXd P2 = P * P;
    auto i0 = index_of(U, x);
    Philox rng(8, 0);
    std::map<SiteId, std::size_t> count;
    const std::size_t n = 50000;
    for (std::size_t t = 0; t < n; ++t) ++count[walk_step(g, walk_step(g, x, rng), rng)];
    for (auto [s, k] : count) expect_freq(k, n, P2(i0, index_of(U, s)));
}

TEST(Walk, Excursions) {
    SiteSet W{5}, U{4, 5, 6};
    Trajectory none{{1, 2, 3}, StopReason::StepCap, {}};
    EXPECT_EQ(excursions(none, W, U).complete, 0u);
    Trajectory two{{1, 5, 6, 7, 6, 5, 4, 3, 5}, StopReason::StepCap, {}};
    auto e = excursions(two, W, U);
    EXPECT_EQ(e.returns, (std::vector<std::size_t>{1, 5, 8}));
    EXPECT_EQ(e.departures, (std::vector<std::size_t>{3, 7}));
    EXPECT_EQ(e.complete, 2u);
    EXPECT_TRUE(e.last_incomplete);
    EXPECT_THROW(excursions(two, SiteSet{9}, U), std::invalid_argument);
}

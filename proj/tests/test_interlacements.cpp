#include <gtest/gtest.h>

#include "ri/interlacements.hpp"

using namespace ri;

namespace {

WeightedGraph z3(int w, int zext) {
    return WeightedGraph(std::make_shared<const BaseGraph>(BaseGraph::lattice(2, w)), -zext, zext);
}
SiteId lat(const WeightedGraph& g, int a, int b, int z) { return g.site(*g.base().vertex_at({a, b}), z); }

void expect_within(double est, double truth, double sd, const char* what) {
    EXPECT_NEAR(est, truth, 3 * sd) << what;
}

}  // namespace

TEST(Interlacements, EmptyAtZeroLevel) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 1, p), o, 8, p);
    auto s = sample_interlacement(A, 0.0, 1);
    EXPECT_TRUE(s.trajectories.empty());
    auto occ = occupancy(s, 0.0, A->K);
    EXPECT_EQ(std::count(occ.occupied.begin(), occ.occupied.end(), 1), 0);
    EXPECT_THROW(occupancy(s, 0.5, A->K), std::invalid_argument);
    EXPECT_THROW(occupancy(s, 0.0, {lat(g, 5, 0, 0)}), std::invalid_argument);
    EXPECT_THROW(sample_interlacement(A, -1.0, 1), std::invalid_argument);
}

TEST(Interlacements, TrajectoriesStartOnChargedSitesAndStayInDomain) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 2, p), o, 8, p);
    auto s = sample_interlacement(A, 3.0, 7);
    ASSERT_FALSE(s.trajectories.empty());
    double last = 0;
    for (const auto& t : s.trajectories) {
        auto i = index_of(A->K, t.sites.front());
        ASSERT_GE(i, 0);
        EXPECT_GT(A->e[i], 0);
        EXPECT_GT(*t.label, last);
        EXPECT_LE(*t.label, 3.0);
        last = *t.label;
        EXPECT_EQ(t.stop_reason, StopReason::ExitedDomain);
        for (std::size_t k = 1; k < t.sites.size(); ++k) ASSERT_TRUE(g.adjacent(t.sites[k - 1], t.sites[k]));
        for (SiteId x : t.sites) ASSERT_LT(metric_d(g, o, x, p), 8.0 + 1e-9);
        // ends within one step of its last visit to K'
        std::size_t lastK = 0;
        for (std::size_t k = 0; k < t.sites.size(); ++k)
            if (contains(A->K, t.sites[k])) lastK = k;
        EXPECT_GE(lastK + 2, t.sites.size());
    }
}

TEST(Interlacements, PoissonCountAndPairVacancy) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId x = lat(g, 0, 0, 0), y = lat(g, 2, 0, 1);
    SiteSet K{x, y};
    normalize(K);
    auto A = make_anchor(g, K, x, 8, p);
    KilledGreen G(g, A->dom->sites());
    double cap = pair_capacity(G(x, x), G(y, y), G(x, y));
    EXPECT_NEAR(A->cap / cap, 1.0, 1e-8);
    const double u = 0.5;
    const std::size_t n = 10000;
    Moments N;
    std::size_t vacant = 0;
    for (std::size_t t = 0; t < n; ++t) {
        auto s = sample_interlacement(A, u, 11, t);
        N.add(static_cast<double>(s.trajectories.size()));
        vacant += s.trajectories.empty();
    }
    expect_within(N.mean, u * cap, std::sqrt(u * cap / n), "mean count");
    double pv = std::exp(-u * cap);
    expect_within(static_cast<double>(vacant) / n, pv, std::sqrt(pv * (1 - pv) / n), "pair vacancy");
}

TEST(Interlacements, OneSiteVacancyAndMinLabels) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 1, p), o, 8, p);
    KilledGreen G(g, A->dom->sites());
    const double g0 = G(o, o);
    const std::vector<double> levels{0.25, 0.5, 1.0};
    std::vector<std::size_t> vac(levels.size(), 0);
    const std::size_t n = 20000;
    std::vector<double> minlab;
    const auto io = index_of(A->K, o);
    for (std::size_t t = 0; t < n; ++t) {
        Philox rng(5, t);
        sample_min_labels(*A, levels.back(), rng, minlab);
        for (std::size_t k = 0; k < levels.size(); ++k) vac[k] += minlab[io] > levels[k];
    }
    for (std::size_t k = 0; k < levels.size(); ++k) {
        double pv = std::exp(-levels[k] / g0);
        expect_within(static_cast<double>(vac[k]) / n, pv, std::sqrt(pv * (1 - pv) / n), "site vacancy");
    }
}

TEST(Interlacements, MinLabelsMatchFullTrajectories) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 2, p), o, 8, p);
    for (std::uint64_t t = 0; t < 50; ++t) {
        auto s = sample_interlacement(A, 1.5, 3, t);
        Philox rng(3, t);
        std::vector<double> minlab;
        auto count = sample_min_labels(*A, 1.5, rng, minlab);
        EXPECT_EQ(count, s.trajectories.size());
        EXPECT_EQ(minlab, first_visit_labels(s, A->K));
    }
}

TEST(Interlacements, MonotoneCoupling) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 2, p), o, 8, p);
    for (std::uint64_t t = 0; t < 200; ++t) {
        auto s = sample_interlacement(A, 2.0, 9, t);
        auto lo = occupancy(s, 0.7, A->K), hi = occupancy(s, 2.0, A->K);
        for (std::size_t i = 0; i < lo.occupied.size(); ++i) ASSERT_LE(lo.occupied[i], hi.occupied[i]);
    }
}

TEST(Interlacements, SweepRestriction) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 2, p), o, 8, p);
    SiteSet K = ball(g, o, 1, p);
    auto capK = equilibrium_green(KilledGreen(g, A->dom->sites()), K).capacity;
    const double u = 0.4;
    const std::size_t n = 5000;
    Moments N;
    for (std::size_t t = 0; t < n; ++t) {
        auto s = sample_interlacement(A, u, 21, t);
        auto r = sweep_restrict(s, K);
        N.add(static_cast<double>(r.trajectories.size()));
        for (const auto& tr : r.trajectories) ASSERT_TRUE(contains(K, tr.sites.front()));
        ASSERT_EQ(occupancy(s, u, K).occupied, occupancy(r, u, K).occupied);
    }
    double m = u * capK;
    expect_within(N.mean, m, std::sqrt(m / n), "kept mean");
    expect_within(N.var(), m, std::sqrt((m + 2 * m * m) / n), "kept variance");
    auto s = sample_interlacement(A, u, 1);
    auto same = sweep_restrict(s, A->K);
    ASSERT_EQ(same.trajectories.size(), s.trajectories.size());
    for (std::size_t i = 0; i < s.trajectories.size(); ++i) EXPECT_EQ(same.trajectories[i].sites, s.trajectories[i].sites);
    EXPECT_THROW(sweep_restrict(s, {lat(g, 6, 0, 0)}), std::invalid_argument);
}

TEST(Interlacements, CovarianceFormulaLimits) {
    // independent sites: covariance vanishes
    EXPECT_NEAR(vacancy_covariance(1.0, 0.25, 0.25, 0.0), 0.0, 1e-15);
    double gx = 0.25, gxy = 0.02, u = 0.7;
    double direct = std::exp(-u * pair_capacity(gx, gx, gxy)) - std::exp(-2 * u / gx);
    EXPECT_NEAR(vacancy_covariance(u, gx, gx, gxy), direct, 1e-15);
    EXPECT_GT(vacancy_covariance(u, gx, gx, gxy), 0);
}

TEST(Interlacements, CorrDecaySmall) {
    auto g = z3(12, 12);
    SiteId o = lat(g, 0, 0, 0);
    std::vector<SiteId> pts{lat(g, 0, 0, 1), lat(g, 0, 0, 3)};
    auto r = corr_decay(g, 0.3, o, pts, 8, 20000, 4);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_NEAR(r.cov[i], r.formula[i], 3 * r.cov_se[i]);
        EXPECT_GT(r.formula[i], 0);
    }
    EXPECT_THROW(corr_decay(g, 0.3, o, pts, 8, 1, 4), std::invalid_argument);
}

TEST(Interlacements, RefusesWideBracket) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    SamplerOptions opt;
    opt.max_bracket_width = 0.05;
    EXPECT_THROW(make_anchor(g, ball(g, o, 2, p), o, 4, p, opt), GeometryError);
}

TEST(Interlacements, LayeringExchangeability) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0);
    auto A = make_anchor(g, ball(g, o, 2, p), o, 8, p);
    const std::size_t n = 3000;
    std::vector<double> layered, direct;
    for (std::size_t t = 0; t < n; ++t) {
        auto s = sample_interlacement(A, 2.0, 31, t);
        auto f = occupancy(s, 0.6, A->K);
        layered.push_back(static_cast<double>(std::count(f.occupied.begin(), f.occupied.end(), 1)));
        auto d = sample_interlacement(A, 0.6, 32, t);
        auto h = occupancy(d, 0.6, A->K);
        direct.push_back(static_cast<double>(std::count(h.occupied.begin(), h.occupied.end(), 1)));
    }
    EXPECT_GT(ks_two_sample(layered, direct).p_value, 0.01);
}

TEST(Interlacements, PositiveAssociation) {
    auto g = z3(12, 12);
    auto p = g.default_params();
    SiteId o = lat(g, 0, 0, 0), x = lat(g, 1, 0, 1);
    SiteSet K{o, x};
    normalize(K);
    auto A = make_anchor(g, K, o, 8, p);
    const double u = 0.5;
    const std::size_t n = 20000;
    std::vector<double> minlab;
    auto io = index_of(A->K, o), ix = index_of(A->K, x);
    double so = 0, sx = 0, sox = 0;
    for (std::size_t t = 0; t < n; ++t) {
        Philox rng(41, t);
        sample_min_labels(*A, u, rng, minlab);
        double a = minlab[io] <= u, b = minlab[ix] <= u;
        so += a, sx += b, sox += a * b;
    }
    double pa = so / n, pb = sx / n, cov = sox / n - pa * pb;
    EXPECT_GE(cov, -3 * std::sqrt(pa * (1 - pa) * pb * (1 - pb) / n));
}

TEST(Interlacements, VerticalTranslationInvariance) {
    auto g = z3(12, 16);
    auto p = g.default_params();
    const int dz = 5;
    auto occupied_counts = [&](int shift, std::uint64_t seed) {
        SiteId c = lat(g, 0, 0, shift);
        SiteSet K{c, lat(g, 1, 0, shift), lat(g, 0, 0, shift + 1)};
        normalize(K);
        auto A = make_anchor(g, K, c, 8, p);
        std::vector<double> out;
        std::vector<double> minlab;
        for (std::size_t t = 0; t < 4000; ++t) {
            Philox rng(seed, t);
            sample_min_labels(*A, 0.7, rng, minlab);
            out.push_back(static_cast<double>(std::count_if(minlab.begin(), minlab.end(), [](double l) { return l <= 0.7; })));
        }
        return std::make_pair(A->cap, out);
    };
    auto [c0, a] = occupied_counts(0, 51);
    auto [c1, b] = occupied_counts(dz, 52);
    EXPECT_NEAR(c0, c1, 1e-10 * c0);
    EXPECT_GT(ks_two_sample(a, b).p_value, 0.01);
}

TEST(Interlacements, FunctionalCovarianceConstantBounded) {
    auto g = z3(20, 20);
    SiteId o = lat(g, 0, 0, 0);
    std::vector<SiteId> pts{lat(g, 0, 0, 2), lat(g, 0, 0, 4), lat(g, 0, 0, 8)};
    auto r = corr_decay(g, 0.2, o, pts, 16, 40000, 8);
    double lo = *std::min_element(r.decay_constant.begin(), r.decay_constant.end());
    double hi = *std::max_element(r.decay_constant.begin(), r.decay_constant.end());
    EXPECT_GT(lo, 0);
    EXPECT_LT(hi / lo, 4);
}

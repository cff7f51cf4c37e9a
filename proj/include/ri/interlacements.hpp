#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "ri/parallel.hpp"
#include "ri/potential.hpp"
#include "ri/rng.hpp"
#include "ri/walk.hpp"

namespace ri {

struct SamplerOptions {
    SolverOptions solver;
    double max_bracket_width = 0.75;  // relative width of the capacity bracket
    std::int64_t step_cap = 100'000'000;
    bool with_bracket = true;
};

// Killed potential data for sampling interlacements anchored at K' inside U = B(center, R).
//
// The sampler realizes the exact killed model: trajectories start from
// e^U_{K'} / cap_U(K'), and each one is followed until its last visit to K'.
// After the walk steps from K' to y outside K', a coin with probability
// h(y) = P_y[H_{K'} < T_U] decides whether it ever returns. If it does, the
// walk continues as the Doob h-transform p(y,z) h(z) / h(y) until it re-enters K'.
// Occupancy inside K' then has law P[I^u cap K = empty] = exp(-u cap_U(K)).
struct SamplerAnchor {
    const WeightedGraph* g = nullptr;
    SiteSet K;
    SiteId center = 0;
    double R = 0;
    MetricParams params;
    std::shared_ptr<const LocalDomain> dom;  // U
    std::vector<double> h;                   // over U, 1 on K'
    std::vector<std::int32_t> kpos;          // U-local -> K' index or -1
    std::vector<std::int32_t> klocal;        // K' index -> U-local
    std::vector<double> e, cum;              // equilibrium masses on K' and their partial sums
    double cap = 0;
    double companion_radius = 0, companion_cap = 0;
    Interval cap_bracket;
    double bias = 0;  // relative capacity bias bound 1 - lower/upper
    std::int64_t step_cap = 0;
    SolverStats stats;

    std::int32_t sample_start(Philox& rng) const {
        double t = rng.uniform() * cum.back();
        auto it = std::upper_bound(cum.begin(), cum.end(), t);
        auto i = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cum.begin(), cum.size() - 1));
        while (e[i] <= 0) i = (i + 1) % e.size();
        return klocal[i];
    }
};

inline std::shared_ptr<const SamplerAnchor> make_anchor(const WeightedGraph& g, SiteSet K, SiteId center, double R,
                                                        const MetricParams& p, const SamplerOptions& opt = {}) {
    if (K.empty()) throw std::invalid_argument("anchor set must be nonempty");
    normalize(K);
    auto a = std::make_shared<SamplerAnchor>();
    a->g = &g;
    a->center = center;
    a->R = R;
    a->params = p;
    a->step_cap = opt.step_cap;
    double rK = max_distance(g, center, K, p);
    if (rK > R - 1) throw GeometryError("anchor set touches the truncation shell");
    auto U = ball(g, center, R, p);
    if (K.size() <= 400) {
        KilledGreen G(g, U, opt.solver);
        if (G.mode() != KilledGreen::Mode::Iterative) {
            auto eq = equilibrium_green(G, K);
            a->h = G.potential(K, eq.e);
            a->e = eq.e;
            a->cap = eq.capacity;
            a->stats = eq.stats;
            a->dom = std::make_shared<LocalDomain>(g, U);
        }
    }
    if (!a->dom) {
        auto f = hitting_field(g, U, K, opt.solver);
        a->dom = f.dom;
        a->h = std::move(f.h);
        a->e = f.eq.e;
        a->cap = f.eq.capacity;
        a->stats = f.eq.stats;
    }
    a->K = std::move(K);
    const auto& D = *a->dom;
    a->kpos.assign(D.size(), -1);
    for (std::size_t i = 0; i < a->K.size(); ++i) {
        auto l = static_cast<std::int32_t>(D.local(a->K[i]));
        a->kpos[l] = static_cast<std::int32_t>(i);
        a->klocal.push_back(l);
    }
    for (std::size_t i = 0; i < D.size(); ++i) a->h[i] = a->kpos[i] >= 0 ? 1.0 : std::clamp(a->h[i], 0.0, 1.0);
    double s = 0;
    for (double v : a->e) a->cum.push_back(s += v);
    if (!(a->cap > 0)) throw NumericalError("anchor capacity is not positive");
    a->cap_bracket = {a->cap, a->cap};
    if (opt.with_bracket) {
        double r1 = std::max(R / 2, rK + 1);
        if (r1 < R) {
            auto coarse = killed_equilibrium(g, ball(g, center, r1, p), a->K, opt.solver);
            double corr = richardson(1 / a->cap, 1 / coarse.capacity, R / r1, p.nu());
            a->companion_radius = r1;
            a->companion_cap = coarse.capacity;
            a->cap_bracket = {1 / (1 / a->cap + 2 * corr), a->cap};
        } else {
            a->cap_bracket = {0, a->cap};
        }
        a->bias = 1 - a->cap_bracket.lo / a->cap_bracket.hi;
        if (a->bias > opt.max_bracket_width)
            throw GeometryError("capacity bracket too wide (relative width " + std::to_string(a->bias) +
                                "); use a larger truncation radius");
    }
    return a;
}

// Runs one trajectory from a U-local start; visit(local) is called for every
// visited site in order. Returns the stop reason.
template <class Visit>
StopReason run_anchor_trajectory(const SamplerAnchor& A, std::int32_t start, Philox& rng, Visit&& visit) {
    const LocalDomain& D = *A.dom;
    std::int32_t cur = start;
    visit(cur);
    bool returning = A.kpos[cur] < 0;
    if (returning && !(rng.uniform() < A.h[cur])) return StopReason::ExitedDomain;
    for (std::int64_t n = 0; n < A.step_cap; ++n) {
        const std::size_t b = D.row_begin(cur), e = D.row_end(cur);
        std::int32_t next = -1;
        if (!returning) {
            if (D.unit_weights()) {
                next = D.nbr(b + static_cast<std::size_t>(rng.below(e - b)));
            } else {
                double u = rng.uniform() * D.rho(cur), acc = 0;
                for (std::size_t k = b; k < e; ++k) {
                    next = D.nbr(k);
                    if (u < (acc += D.weight(k))) break;
                }
            }
            if (next < 0) return StopReason::ExitedDomain;  // only if K' touches the shell
            visit(next);
            cur = next;
            if (A.kpos[cur] < 0) {
                if (!(rng.uniform() < A.h[cur])) return StopReason::ExitedDomain;
                returning = true;
            }
        } else {
            double tot = 0;
            for (std::size_t k = b; k < e; ++k)
                if (D.nbr(k) >= 0) tot += D.weight(k) * A.h[D.nbr(k)];
            double u = rng.uniform() * tot, acc = 0;
            for (std::size_t k = b; k < e; ++k) {
                if (D.nbr(k) < 0) continue;
                double w = D.weight(k) * A.h[D.nbr(k)];
                if (w <= 0) continue;
                next = D.nbr(k);
                if (u < (acc += w)) break;
            }
            visit(next);
            cur = next;
            if (A.kpos[cur] >= 0) returning = false;
        }
    }
    return StopReason::StepCap;
}

struct InterlacementSample {
    std::shared_ptr<const SamplerAnchor> anchor;  // null after sweep_restrict
    SiteSet anchor_set;
    double u_max = 0;
    double truncation_radius = 0;
    std::uint64_t seed = 0, task = 0;
    std::vector<Trajectory> trajectories;  // labels ascending
};

// Labels arrive in increasing order as a rate-cap Poisson process on (0, u_max].
inline InterlacementSample sample_interlacement(std::shared_ptr<const SamplerAnchor> A, double u_max, std::uint64_t seed,
                                                std::uint64_t task = 0) {
    if (!(u_max >= 0) || !std::isfinite(u_max)) throw std::invalid_argument("u_max must be a finite nonnegative level");
    InterlacementSample s;
    s.anchor = A;
    s.anchor_set = A->K;
    s.u_max = u_max;
    s.truncation_radius = A->R;
    s.seed = seed;
    s.task = task;
    Philox rng(seed, task);
    const auto& sites = A->dom->sites();
    for (double t = rng.exponential(A->cap); t <= u_max; t += rng.exponential(A->cap)) {
        Trajectory tr;
        tr.label = t;
        tr.stop_reason = run_anchor_trajectory(*A, A->sample_start(rng), rng,
                                               [&](std::int32_t l) { tr.sites.push_back(sites[l]); });
        s.trajectories.push_back(std::move(tr));
    }
    return s;
}

// First-visit labels over K' (index as in A.K); +inf when unvisited. Labels are
// generated in increasing order, so the first write per site is its minimum.
// on_level(k) runs once all trajectories with label <= levels[k] are applied;
// returning false stops the sample early. Returns the trajectory count.
template <class OnLevel>
std::size_t sample_levels(const SamplerAnchor& A, const std::vector<double>& levels, Philox& rng, std::vector<double>& minlab,
                          OnLevel&& on_level) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    minlab.assign(A.K.size(), inf);
    std::size_t count = 0, next_level = 0;
    const double u_max = levels.empty() ? 0.0 : levels.back();
    for (double t = rng.exponential(A.cap);; t += rng.exponential(A.cap)) {
        while (next_level < levels.size() && levels[next_level] < t) {
            if (!on_level(next_level++)) return count;
        }
        if (t > u_max) break;
        ++count;
        run_anchor_trajectory(A, A.sample_start(rng), rng, [&](std::int32_t l) {
            auto k = A.kpos[l];
            if (k >= 0 && minlab[k] == inf) minlab[k] = t;
        });
    }
    return count;
}

inline std::size_t sample_min_labels(const SamplerAnchor& A, double u_max, Philox& rng, std::vector<double>& minlab) {
    return sample_levels(A, {u_max}, rng, minlab, [](std::size_t) { return true; });
}

struct OccupancyField {
    SiteSet window;
    std::vector<char> occupied;
    double u = 0;
    std::uint64_t seed = 0, task = 0;
};

inline OccupancyField occupancy(const InterlacementSample& s, double u, const SiteSet& window) {
    if (u > s.u_max) throw std::invalid_argument("level exceeds the sample's u_max");
    if (!is_subset(window, s.anchor_set)) throw std::invalid_argument("occupancy window must lie inside the anchor set");
    OccupancyField f{window, std::vector<char>(window.size(), 0), u, s.seed, s.task};
    for (const auto& t : s.trajectories) {
        if (*t.label > u) break;
        for (SiteId x : t.sites) {
            auto i = index_of(window, x);
            if (i >= 0) f.occupied[i] = 1;
        }
    }
    return f;
}

inline std::vector<double> first_visit_labels(const InterlacementSample& s, const SiteSet& window) {
    if (!is_subset(window, s.anchor_set)) throw std::invalid_argument("window must lie inside the anchor set");
    std::vector<double> out(window.size(), std::numeric_limits<double>::infinity());
    for (const auto& t : s.trajectories)
        for (SiteId x : t.sites) {
            auto i = index_of(window, x);
            if (i >= 0) out[i] = std::min(out[i], *t.label);
        }
    return out;
}

// Keeps the trajectories that hit K, shifted to start at H_K.
inline InterlacementSample sweep_restrict(const InterlacementSample& s, const SiteSet& K) {
    if (!is_subset(K, s.anchor_set)) throw std::invalid_argument("sweep target must lie inside the anchor set");
    InterlacementSample r;
    r.anchor_set = K;
    r.u_max = s.u_max;
    r.truncation_radius = s.truncation_radius;
    r.seed = s.seed;
    r.task = s.task;
    for (const auto& t : s.trajectories) {
        auto it = std::find_if(t.sites.begin(), t.sites.end(), [&](SiteId x) { return contains(K, x); });
        if (it == t.sites.end()) continue;
        r.trajectories.push_back({std::vector<SiteId>(it, t.sites.end()), t.stop_reason, t.label});
    }
    return r;
}

// exp(-u (1/g_x + 1/g_y)) (exp(u [(g_x + g_y)/(g_x g_y) - cap({x,y})]) - 1)
inline double vacancy_covariance(double u, double gx, double gy, double gxy) {
    double bracket = (gx + gy) / (gx * gy) - pair_capacity(gx, gy, gxy);
    return std::exp(-u * (1 / gx + 1 / gy)) * std::expm1(u * bracket);
}

struct CorrDecay {
    std::vector<double> distance, cov, cov_se, formula, p_center, p_point;
    std::vector<double> decay_constant;  // |cov| d^nu / (u cap(x) cap(x'))
    LinearFit fit;
    std::size_t trials = 0;
    double bias = 0;
};

// Covariance of vacancy indicators at (center, x_i) from one anchor K' = {center} u points.
// The exact killed-model covariance is reported beside each estimate.
inline CorrDecay corr_decay(const WeightedGraph& g, double u, SiteId center, const std::vector<SiteId>& points, double R,
                            std::size_t trials, std::uint64_t seed, double fit_from = 3, const SamplerOptions& opt = {},
                            unsigned workers = default_workers()) {
    if (trials < 2) throw std::invalid_argument("insufficient trials");
    auto p = g.default_params();
    SiteSet K = points;
    K.push_back(center);
    normalize(K);
    auto A = make_anchor(g, K, center, R, p, opt);
    KilledGreen G(g, A->dom->sites(), opt.solver);
    std::vector<SiteId> all{center};
    all.insert(all.end(), points.begin(), points.end());
    auto B = G.block(all, all);
    const auto ic = index_of(A->K, center);
    std::vector<std::ptrdiff_t> ip;
    for (SiteId x : points) ip.push_back(index_of(A->K, x));
    const std::size_t n = points.size();
    // per chunk counts n00 n01 n10 n11 by (center vacant, point vacant)
    const std::size_t chunks = std::min<std::size_t>(trials, 256);
    std::vector<std::vector<std::array<double, 4>>> part(chunks, std::vector<std::array<double, 4>>(n, {0, 0, 0, 0}));
    parallel_for(chunks, workers, [&](std::size_t c) {
        std::vector<double> minlab;
        for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
            Philox rng(seed, t);
            sample_min_labels(*A, u, rng, minlab);
            int a = minlab[ic] > u;
            for (std::size_t i = 0; i < n; ++i) part[c][i][2 * a + (minlab[ip[i]] > u)] += 1;
        }
    });
    std::vector<std::array<double, 4>> counts(n, {0, 0, 0, 0});
    for (const auto& pc : part)
        for (std::size_t i = 0; i < n; ++i)
            for (int k = 0; k < 4; ++k) counts[i][k] += pc[i][k];
    CorrDecay r;
    r.trials = trials;
    r.bias = A->bias;
    const double N = static_cast<double>(trials);
    std::vector<double> fx, fy;
    for (std::size_t i = 0; i < n; ++i) {
        double pa = (counts[i][2] + counts[i][3]) / N, pb = (counts[i][1] + counts[i][3]) / N, pab = counts[i][3] / N;
        double c = pab - pa * pb;
        // influence function of the covariance: (X - pa)(Y - pb) - c
        double v = 0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                double d = (a - pa) * (b - pb) - c;
                v += counts[i][2 * a + b] / N * d * d;
            }
        r.distance.push_back(metric_d(g, center, points[i], p));
        r.cov.push_back(c);
        r.cov_se.push_back(std::sqrt(v / N));
        r.formula.push_back(vacancy_covariance(u, B(0, 0), B(i + 1, i + 1), B(0, i + 1)));
        r.p_center.push_back(pa);
        r.p_point.push_back(pb);
        r.decay_constant.push_back(std::abs(c) * std::pow(r.distance.back(), p.nu()) * B(0, 0) * B(i + 1, i + 1) / u);
        if (r.distance.back() >= fit_from && c > 0) {
            fx.push_back(r.distance.back());
            fy.push_back(c);
        }
    }
    if (fx.size() >= 2) r.fit = loglog_fit(fx, fy);
    return r;
}

}  // namespace ri

#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ri/percolation.hpp"

namespace ri {

struct ScanCell {
    double estimate = 0;
    Interval ci;
    std::size_t trials = 0, hits = 0, invalid = 0;
    double bias = 0;
    bool skipped = false;
    std::string skip_reason;
};

// Per-u diagnostics across L and per-L diagnostics across u.
struct ScanDiagnostics {
    std::vector<char> nonincreasing_in_L;     // point estimates, per u
    std::vector<char> nonincreasing_in_L_ci;  // no later cell lies strictly above an earlier one, per u
    std::vector<char> monotone_in_u_ci;       // column consistent with the family's direction in u, per L
};

struct ScanTable {
    Family family = Family::A;
    SiteId x = 0;
    std::optional<HalfPlane> plane;
    std::vector<double> u;
    std::vector<std::int64_t> L;
    std::vector<std::vector<ScanCell>> cells;  // cells[iL][iu]
    std::uint64_t seed = 0;
    double truncation_factor = 0;
    ScanDiagnostics diag;

    const ScanCell& at(std::size_t iL, std::size_t iu) const { return cells.at(iL).at(iu); }
    bool complete() const {
        for (const auto& row : cells)
            for (const auto& c : row)
                if (c.skipped) return false;
        return true;
    }
};

namespace detail {
inline bool ci_above(const Interval& a, const Interval& b) { return a.lo > b.hi; }
}  // namespace detail

// Vacant crossings (A, S) decrease in u; occupied crossings (B) increase.
inline ScanDiagnostics scan_diagnostics(const ScanTable& t) {
    ScanDiagnostics d;
    const bool decreasing_in_u = t.family != Family::B;
    for (std::size_t iu = 0; iu < t.u.size(); ++iu) {
        bool pt = true, ci = true;
        for (std::size_t i = 0; i + 1 < t.L.size(); ++i) {
            const auto &a = t.cells[i][iu], &b = t.cells[i + 1][iu];
            if (a.skipped || b.skipped) continue;
            pt = pt && b.estimate <= a.estimate;
            for (std::size_t j = 0; j <= i; ++j)
                if (!t.cells[j][iu].skipped && detail::ci_above(b.ci, t.cells[j][iu].ci)) ci = false;
        }
        d.nonincreasing_in_L.push_back(pt);
        d.nonincreasing_in_L_ci.push_back(ci);
    }
    for (std::size_t iL = 0; iL < t.L.size(); ++iL) {
        bool ok = true;
        for (std::size_t i = 0; i < t.u.size(); ++i)
            for (std::size_t j = i + 1; j < t.u.size(); ++j) {
                const auto &a = t.cells[iL][i], &b = t.cells[iL][j];
                if (a.skipped || b.skipped) continue;
                if (decreasing_in_u ? detail::ci_above(b.ci, a.ci) : detail::ci_above(a.ci, b.ci)) ok = false;
            }
        d.monotone_in_u_ci.push_back(ok);
    }
    return d;
}

struct ScanOptions {
    EventOptions event;
    bool skip_infeasible = false;  // otherwise a geometry that does not fit throws GeometryError
};

// One sampler per L serves the whole u grid; trial t at scale L uses stream (mix_task(seed, L), t).
inline ScanTable crossing_scan(const WeightedGraph& g, Family family, SiteId x, std::optional<HalfPlane> plane,
                               std::vector<double> u_grid, std::vector<std::int64_t> L_grid, std::size_t trials,
                               std::uint64_t seed, const ScanOptions& opt = {}) {
    if (u_grid.empty() || L_grid.empty()) throw std::invalid_argument("empty scan grid");
    if (!std::is_sorted(u_grid.begin(), u_grid.end()) || u_grid.front() < 0)
        throw std::invalid_argument("u grid must be ascending and nonnegative");
    if (std::adjacent_find(u_grid.begin(), u_grid.end()) != u_grid.end()) throw std::invalid_argument("u grid has repeats");
    if (!std::is_sorted(L_grid.begin(), L_grid.end()) || L_grid.front() < 1)
        throw std::invalid_argument("L grid must be ascending positive integers");
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (family == Family::B && !plane) throw std::invalid_argument("family B scans need a half-plane");
    ScanTable t;
    t.family = family;
    t.x = x;
    t.plane = plane;
    t.u = u_grid;
    t.L = L_grid;
    t.seed = seed;
    t.truncation_factor = opt.event.truncation_factor;
    for (std::int64_t L : L_grid) {
        std::vector<ScanCell> row(u_grid.size());
        EventSpec spec{family, x, static_cast<int>(L), plane};
        std::optional<EventGeometry> geo;
        std::shared_ptr<const SamplerAnchor> A;
        try {
            geo.emplace(g, spec);
            if (!geo->empty_event()) A = event_anchor(*geo, opt.event);
        } catch (const GeometryError& e) {
            if (!opt.skip_infeasible)
                throw GeometryError("scan grid does not fit the window at L = " + std::to_string(L) + ": " + e.what());
            for (auto& c : row) c.skipped = true, c.skip_reason = e.what();
            t.cells.push_back(std::move(row));
            continue;
        }
        if (geo->empty_event()) {
            for (auto& c : row) c.trials = trials, c.ci = {0, 0};
        } else {
            auto cnt = event_level_counts(*geo, *A, u_grid, trials, mix_task(seed, static_cast<std::uint64_t>(L)),
                                          opt.event.workers);
            const bool empty_value = (*geo)(std::vector<char>(geo->support().size(), 0));
            for (std::size_t k = 0; k < u_grid.size(); ++k) {
                auto& c = row[k];
                c.trials = trials;
                c.bias = cnt.bias;
                if (u_grid[k] == 0) {
                    // I^0 is empty
                    c.hits = empty_value ? trials : 0;
                    c.estimate = empty_value;
                    c.ci = {c.estimate, c.estimate};
                    c.bias = 0;
                } else {
                    c.hits = cnt.hits[k];
                    c.estimate = cnt.estimate(k);
                    c.ci = cnt.ci(k);
                }
            }
        }
        t.cells.push_back(std::move(row));
    }
    t.diag = scan_diagnostics(t);
    return t;
}

enum class CriticalKind { UStarStarProxy, UTildeProxy };
inline const char* to_string(CriticalKind k) { return k == CriticalKind::UStarStarProxy ? "u_star_star_proxy" : "u_tilde_proxy"; }

struct ProxyRule {
    double theta = 0.05;
    std::size_t min_scales = 3;
};

struct CriticalEstimate {
    CriticalKind kind = CriticalKind::UStarStarProxy;
    double lo = 0, hi = 0;  // adjacent grid points; hi = +inf when the rule never holds
    std::size_t index = 0;  // selected grid index; u.size() when open
    bool open_below = false, open_above = false;
    std::string rule;
};

// Family A: first u whose L-sequence is nonincreasing within CI and ends below theta.
// Family B: first u whose L-sequence is nondecreasing within CI and ends above theta.
// A step breaks monotonicity only when the two Wilson intervals are disjoint in the wrong direction.
inline CriticalEstimate critical_proxy(const ScanTable& t, const ProxyRule& rule = {}) {
    if (!t.complete()) throw std::invalid_argument("critical_proxy needs a complete table");
    if (t.L.size() < rule.min_scales) throw std::invalid_argument("critical_proxy needs at least min_scales scales");
    if (t.family == Family::S) throw std::invalid_argument("no critical proxy is defined for family S");
    CriticalEstimate r;
    const bool star = t.family == Family::A;
    r.kind = star ? CriticalKind::UStarStarProxy : CriticalKind::UTildeProxy;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s in L within CI over %zu scales and final estimate %s %g", star ? "nonincreasing" : "nondecreasing",
                  t.L.size(), star ? "<" : ">", rule.theta);
    r.rule = buf;
    for (std::size_t k = 0; k < t.u.size(); ++k) {
        bool mono = true;
        for (std::size_t i = 0; i + 1 < t.L.size(); ++i) {
            const auto &a = t.cells[i][k], &b = t.cells[i + 1][k];
            mono = mono && (star ? b.estimate <= a.estimate || b.ci.lo <= a.ci.hi : b.estimate >= a.estimate || b.ci.hi >= a.ci.lo);
        }
        double last = t.cells.back()[k].estimate;
        if (mono && (star ? last < rule.theta : last > rule.theta)) {
            r.index = k;
            r.hi = t.u[k];
            r.lo = k > 0 ? t.u[k - 1] : t.u[k];
            r.open_below = k == 0;
            return r;
        }
    }
    r.index = t.u.size();
    r.lo = t.u.back();
    r.hi = std::numeric_limits<double>::infinity();
    r.open_above = true;
    return r;
}

enum class FitModel { StretchedExponential, PowerLaw };
inline const char* to_string(FitModel m) { return m == FitModel::StretchedExponential ? "stretched-exponential" : "power-law"; }

struct FitResult {
    FitModel model = FitModel::StretchedExponential;
    double exponent = 0, prefactor = 0, residual = 0;
    Interval ci;  // 95% on the exponent
    double window_lo = 0, window_hi = 0;
    std::size_t points = 0;
};

// Model p = exp(-c L^kappa): least squares of log(-log p) on log L. With trial counts, points are
// weighted by the delta-method variance p(1-p)/n / (p log p)^2.
inline FitResult stretch_fit(const std::vector<double>& L, const std::vector<double>& p,
                             const std::vector<std::size_t>& trials = {}) {
    if (L.size() != p.size() || (!trials.empty() && trials.size() != p.size()))
        throw std::invalid_argument("stretch_fit: mismatched inputs");
    if (L.size() < 4) throw std::invalid_argument("stretch_fit needs at least 4 points");
    std::vector<double> x, y, w;
    for (std::size_t i = 0; i < L.size(); ++i) {
        if (!(p[i] > 0 && p[i] < 1)) throw std::invalid_argument("stretch_fit: degenerate column (estimates at 0 or 1)");
        if (!(L[i] > 0)) throw std::invalid_argument("stretch_fit: scales must be positive");
        x.push_back(std::log(L[i]));
        y.push_back(std::log(-std::log(p[i])));
        if (!trials.empty()) {
            double lp = p[i] * std::log(p[i]);
            w.push_back(lp * lp * trials[i] / (p[i] * (1 - p[i])));
        }
    }
    auto f = trials.empty() ? linear_fit(x, y) : weighted_fit(x, y, w);
    FitResult r;
    r.exponent = f.slope;
    r.prefactor = std::exp(f.intercept);
    r.residual = f.rss;
    r.ci = {f.slope - 1.959963984540054 * f.slope_se, f.slope + 1.959963984540054 * f.slope_se};
    r.window_lo = *std::min_element(L.begin(), L.end());
    r.window_hi = *std::max_element(L.begin(), L.end());
    r.points = L.size();
    if (!std::isfinite(r.exponent)) throw std::invalid_argument("stretch_fit: non-finite exponent");
    return r;
}

// Model y = c d^gamma, least squares on log-log.
inline FitResult power_fit(const std::vector<double>& d, const std::vector<double>& y) {
    auto f = loglog_fit(d, y);
    FitResult r;
    r.model = FitModel::PowerLaw;
    r.exponent = f.slope;
    r.prefactor = std::exp(f.intercept);
    r.residual = f.rss;
    r.ci = {f.slope - 1.959963984540054 * f.slope_se, f.slope + 1.959963984540054 * f.slope_se};
    r.window_lo = *std::min_element(d.begin(), d.end());
    r.window_hi = *std::max_element(d.begin(), d.end());
    r.points = d.size();
    return r;
}

struct ConnectivityDecay {
    double u = 0;
    SiteId x = 0;
    std::vector<int> distances;
    std::vector<SiteId> targets;
    std::vector<EventEstimate> connect;  // P[x <-> x'_d] in V^u within the window
    std::vector<EventEstimate> exit;     // P[x <-> bd_int B(x, d-1)] on the same samples
    bool nonincreasing_ci = true;
    bool inclusion_holds = true;  // per trial, so it holds deterministically
    std::optional<FitResult> fit;
    std::string fit_error;
    double window_radius = 0;
};

namespace detail {
// Smallest-id site at d-distance exactly d from x in the same z layer.
inline SiteId target_at(const WeightedGraph& g, SiteId x, int d, const MetricParams& p) {
    const auto& B = g.base();
    auto dist = B.bfs_from(g.base_of(x));
    const bool sup = p.kind == MetricKind::SupNorm;
    for (int y = 0; y < B.size(); ++y) {
        int dy = sup ? B.dist_sup(g.base_of(x), y) : (*dist)[y];
        if (dy == d) return g.site(y, g.z_of(x));
    }
    throw GeometryError("no base vertex at distance " + std::to_string(d));
}
}  // namespace detail

// Vacant component of x inside W = B(x, window_factor * d_max), graph adjacency.
inline ConnectivityDecay connectivity_decay(const WeightedGraph& g, double u, SiteId x, std::vector<int> distances,
                                            std::size_t trials, std::uint64_t seed, const EventOptions& opt = {},
                                            double window_factor = 2.0) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (!(u >= 0)) throw std::invalid_argument("level must be nonnegative");
    if (distances.empty() || !std::is_sorted(distances.begin(), distances.end()) || distances.front() < 1)
        throw std::invalid_argument("distance grid must be ascending positive integers");
    auto p = g.default_params();
    ConnectivityDecay r;
    r.u = u;
    r.x = x;
    r.distances = distances;
    r.window_radius = std::max<double>(window_factor * distances.back(), distances.back() + 1);
    SiteSet W = ball(g, x, r.window_radius, p);
    for (int d : distances) r.targets.push_back(detail::target_at(g, x, d, p));
    const std::size_t D = distances.size();
    std::vector<std::int32_t> tgt(D);
    std::vector<std::vector<std::int32_t>> shell(D);
    for (std::size_t i = 0; i < D; ++i) {
        tgt[i] = static_cast<std::int32_t>(index_of(W, r.targets[i]));
        for (SiteId s : ball_interior_boundary(g, x, distances[i] - 1, p))
            shell[i].push_back(static_cast<std::int32_t>(index_of(W, s)));
    }
    const auto xi = static_cast<std::int32_t>(index_of(W, x));
    Region reg = Region::induced(g, W, Adjacency::Graph, nullptr);
    // one trial: reached[] marks the vacant component of x
    auto run = [&](const std::vector<char>& vacant, std::vector<char>& reached, std::vector<std::size_t>& con,
                   std::vector<std::size_t>& ex) {
        std::fill(reached.begin(), reached.end(), 0);
        if (vacant[xi]) {
            std::vector<std::int32_t> stack{xi};
            reached[xi] = 1;
            while (!stack.empty()) {
                auto v = stack.back();
                stack.pop_back();
                for (auto j = reg.off[v]; j < reg.off[v + 1]; ++j) {
                    auto w = reg.nbr[j];
                    if (vacant[w] && !reached[w]) reached[w] = 1, stack.push_back(w);
                }
            }
        }
        for (std::size_t i = 0; i < D; ++i) {
            bool c = reached[tgt[i]];
            bool e = false;
            for (auto s : shell[i]) e = e || reached[s];
            con[i] += c;
            ex[i] += e;
        }
    };
    std::vector<std::size_t> con(D, 0), ex(D, 0);
    double bias = 0;
    if (u == 0) {
        std::vector<char> vac(W.size(), 1), reached(W.size());
        std::vector<std::size_t> c1(D, 0), e1(D, 0);
        run(vac, reached, c1, e1);
        for (std::size_t i = 0; i < D; ++i) con[i] = c1[i] * trials, ex[i] = e1[i] * trials;
    } else {
        auto A = make_anchor(g, W, x, std::max(opt.truncation_factor * r.window_radius, r.window_radius + 2), p, opt.sampler);
        bias = A->bias;
        const std::size_t chunks = std::min<std::size_t>(trials, 256);
        std::vector<std::vector<std::size_t>> pc(chunks, std::vector<std::size_t>(D, 0)), pe = pc;
        parallel_for(chunks, opt.workers, [&](std::size_t c) {
            std::vector<double> minlab;
            std::vector<char> vac(W.size()), reached(W.size());
            for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
                Philox rng(seed, t);
                sample_min_labels(*A, u, rng, minlab);
                for (std::size_t i = 0; i < W.size(); ++i) vac[i] = !(minlab[i] <= u);
                run(vac, reached, pc[c], pe[c]);
            }
        });
        for (std::size_t c = 0; c < chunks; ++c)
            for (std::size_t i = 0; i < D; ++i) con[i] += pc[c][i], ex[i] += pe[c][i];
    }
    for (std::size_t i = 0; i < D; ++i) {
        auto mk = [&](std::size_t h) {
            EventEstimate e;
            e.trials = trials;
            e.hits = h;
            e.estimate = static_cast<double>(h) / trials;
            e.ci = u == 0 ? Interval{e.estimate, e.estimate} : wilson(h, trials);
            e.bias = bias;
            return e;
        };
        r.connect.push_back(mk(con[i]));
        r.exit.push_back(mk(ex[i]));
        r.inclusion_holds = r.inclusion_holds && con[i] <= ex[i];
        for (std::size_t j = 0; j < i; ++j)
            if (detail::ci_above(r.connect[i].ci, r.connect[j].ci)) r.nonincreasing_ci = false;
    }
    try {
        std::vector<double> dd, pp;
        std::vector<std::size_t> nn;
        for (std::size_t i = 0; i < D; ++i) {
            dd.push_back(distances[i]);
            pp.push_back(r.connect[i].estimate);
            nn.push_back(trials);
        }
        r.fit = stretch_fit(dd, pp, nn);
    } catch (const std::invalid_argument& e) {
        r.fit_error = e.what();
    }
    return r;
}

struct ScaleCandidate {
    int ell0 = 0;
    std::int64_t L0 = 0;
    bool feasible = true;
    EventEstimate p0, p1;  // at L0 and ell0 * L0
    bool accepted = false;
};

struct SeedScaleResult {
    bool found = false;
    int ell0 = 0;
    std::int64_t L0 = 0;
    std::vector<ScaleCandidate> tried;  // in search order
    bool replicated = false;            // acceptance repeated on an independent seed stream
    ScaleCandidate replication;
};

// Accepts the smallest (ell0, then L0) whose upper 95% bounds satisfy p_n <= 2^{-2^n} at n = 0 and n = 1.
inline SeedScaleResult seed_scale_search(const WeightedGraph& g, Family family, SiteId x, std::optional<HalfPlane> plane,
                                         double u_bar, std::vector<std::pair<int, std::int64_t>> grid, std::size_t trials,
                                         std::uint64_t seed, const EventOptions& opt = {}) {
    if (grid.empty()) throw std::invalid_argument("empty candidate grid");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    auto evaluate = [&](int ell0, std::int64_t L0, std::uint64_t s) {
        ScaleCandidate c;
        c.ell0 = ell0;
        c.L0 = L0;
        try {
            EventSpec s0{family, x, static_cast<int>(L0), plane}, s1{family, x, static_cast<int>(L0 * ell0), plane};
            c.p0 = crossing_prob(g, s0, u_bar, trials, mix_task(s, static_cast<std::uint64_t>(L0)), opt);
            c.p1 = crossing_prob(g, s1, u_bar, trials, mix_task(s, static_cast<std::uint64_t>(L0 * ell0)), opt);
        } catch (const GeometryError&) {
            c.feasible = false;
            return c;
        }
        c.accepted = c.p0.ci.hi <= 0.5 && c.p1.ci.hi <= 0.25;
        return c;
    };
    SeedScaleResult r;
    for (auto [ell0, L0] : grid) {
        if (ell0 < 2 || L0 < 1) throw std::invalid_argument("candidates need ell0 >= 2 and L0 >= 1");
        auto c = evaluate(ell0, L0, seed);
        r.tried.push_back(c);
        if (c.accepted) {
            r.found = true;
            r.ell0 = ell0;
            r.L0 = L0;
            r.replication = evaluate(ell0, L0, mix_task(seed, 0x9e3779b97f4a7c15ULL));
            r.replicated = r.replication.accepted;
            break;
        }
    }
    return r;
}

}  // namespace ri

#pragma once
#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

#include "ri/graphs.hpp"
#include "ri/interlacements.hpp"
#include "ri/parallel.hpp"
#include "ri/stats.hpp"

namespace ri {

// sigma = 1 marks occupied sites
struct Configuration {
    SiteSet window;
    std::vector<char> sigma;

    static Configuration constant(SiteSet w, char v) {
        normalize(w);
        std::vector<char> s(w.size(), v);
        return {std::move(w), std::move(s)};
    }
    char at(SiteId x) const {
        auto i = index_of(window, x);
        if (i < 0) throw std::out_of_range("site outside the configuration window");
        return sigma[i];
    }
};

inline Configuration configuration_from(const OccupancyField& f) {
    return {f.window, std::vector<char>(f.occupied.begin(), f.occupied.end())};
}

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t a) {
        while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
        return a;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a), b = find(b);
        if (a == b) return false;
        if (size_[a] < size_[b]) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

private:
    std::vector<std::size_t> parent_, size_;
};

enum class Adjacency { Graph, Star };

// induced subgraph on a sorted site set, neighbours as local indices
struct Region {
    SiteSet sites;
    std::vector<std::uint32_t> off{0};
    std::vector<std::int32_t> nbr;

    static Region induced(const WeightedGraph& g, SiteSet s, Adjacency mode, const HalfPlane* plane) {
        if (mode == Adjacency::Star && !plane) throw std::invalid_argument("star adjacency needs a half-plane");
        normalize(s);
        Region r;
        r.sites = std::move(s);
        for (SiteId x : r.sites) {
            auto add = [&](SiteId v) {
                auto j = index_of(r.sites, v);
                if (j >= 0) r.nbr.push_back(static_cast<std::int32_t>(j));
            };
            if (mode == Adjacency::Graph) {
                g.for_each_neighbor(x, [&](SiteId v, double) { add(v); });
            } else {
                if (!plane->contains(g, x)) throw std::invalid_argument("star adjacency on a site outside the half-plane");
                for (SiteId v : star_neighbors(g, x, *plane)) add(v);
            }
            r.off.push_back(static_cast<std::uint32_t>(r.nbr.size()));
        }
        return r;
    }
    std::size_t size() const { return sites.size(); }
    std::vector<char> mask(const SiteSet& sub) const {
        std::vector<char> m(size(), 0);
        for (SiteId x : sub) {
            auto i = index_of(sites, x);
            if (i >= 0) m[i] = 1;
        }
        return m;
    }
    // components of {i : keep[i]}; -1 elsewhere
    std::vector<std::int32_t> components(const std::vector<char>& keep, std::size_t* count = nullptr) const {
        std::vector<std::int32_t> lab(size(), -1);
        std::int32_t next = 0;
        std::vector<std::int32_t> stack;
        for (std::size_t s = 0; s < size(); ++s) {
            if (!keep[s] || lab[s] >= 0) continue;
            lab[s] = next;
            stack.assign(1, static_cast<std::int32_t>(s));
            while (!stack.empty()) {
                auto v = stack.back();
                stack.pop_back();
                for (auto k = off[v]; k < off[v + 1]; ++k) {
                    auto w = nbr[k];
                    if (keep[w] && lab[w] < 0) {
                        lab[w] = next;
                        stack.push_back(w);
                    }
                }
            }
            ++next;
        }
        if (count) *count = static_cast<std::size_t>(next);
        return lab;
    }
    // is some allowed target reachable from some allowed source through allowed sites
    bool connects(const std::vector<char>& allowed, const std::vector<char>& source, const std::vector<char>& target) const {
        std::vector<char> seen(size(), 0);
        std::vector<std::int32_t> stack;
        for (std::size_t s = 0; s < size(); ++s)
            if (source[s] && allowed[s]) {
                if (target[s]) return true;
                seen[s] = 1;
                stack.push_back(static_cast<std::int32_t>(s));
            }
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            for (auto k = off[v]; k < off[v + 1]; ++k) {
                auto w = nbr[k];
                if (!allowed[w] || seen[w]) continue;
                if (target[w]) return true;
                seen[w] = 1;
                stack.push_back(w);
            }
        }
        return false;
    }
};

struct ClusterLabeling {
    SiteSet sites;
    std::vector<std::int32_t> label;  // -1 where sigma differs from the selected value
    std::size_t count = 0;
    Adjacency mode = Adjacency::Graph;
};

// components of {x in sites : sigma(x) = value}
inline ClusterLabeling clusters(const WeightedGraph& g, const Configuration& c, SiteSet sites, char value, Adjacency mode,
                                const HalfPlane* plane = nullptr) {
    if (mode == Adjacency::Star && !plane) throw std::invalid_argument("star adjacency needs a half-plane");
    normalize(sites);
    ClusterLabeling out;
    out.mode = mode;
    if (sites.empty()) return out;
    auto r = Region::induced(g, sites, mode, plane);
    std::vector<char> keep(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) keep[i] = c.at(r.sites[i]) == value;
    out.label = r.components(keep, &out.count);
    out.sites = std::move(r.sites);
    return out;
}

struct DiameterCheck {
    bool at_least = false;
    bool exact = true;  // false when the negative answer rests on a lower bound
};

// whether the d-diameter of a site set reaches the threshold
inline DiameterCheck diameter_at_least(const WeightedGraph& g, const std::vector<SiteId>& s, double threshold,
                                       const MetricParams& p, std::size_t exact_limit = 400) {
    if (s.empty()) return {threshold <= 0, true};
    if (threshold <= 0) return {true, true};
    int zmin = g.z_of(s[0]), zmax = zmin;
    for (SiteId x : s) zmin = std::min(zmin, g.z_of(x)), zmax = std::max(zmax, g.z_of(x));
    if (p.zpart(zmax - zmin) >= threshold) return {true, true};
    const BaseGraph& b = g.base();
    std::vector<int> ys;
    for (SiteId x : s) ys.push_back(g.base_of(x));
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    if (b.kind() == BaseGraph::Kind::Lattice) {
        const int D = b.dim();
        double best = 0;
        if (p.kind == MetricKind::SupNorm) {
            for (int i = 0; i < D; ++i) {
                int lo = INT32_MAX, hi = INT32_MIN;
                for (int y : ys) lo = std::min(lo, b.coord(y, i)), hi = std::max(hi, b.coord(y, i));
                best = std::max(best, static_cast<double>(hi - lo));
            }
        } else {
            // l1 diameter via sign patterns with the first sign fixed
            for (int mask = 0; mask < (D > 0 ? 1 << (D - 1) : 1); ++mask) {
                long lo = INT64_MAX, hi = INT64_MIN;
                for (int y : ys) {
                    long v = 0;
                    for (int i = 0; i < D; ++i) v += ((i > 0 && (mask >> (i - 1)) & 1) ? -1 : 1) * b.coord(y, i);
                    lo = std::min(lo, v), hi = std::max(hi, v);
                }
                best = std::max(best, static_cast<double>(hi - lo));
            }
        }
        return {best >= threshold, true};
    }
    if (ys.size() <= exact_limit) {
        for (std::size_t i = 0; i < ys.size(); ++i) {
            auto d = b.bfs_from(ys[i]);
            for (std::size_t j = i + 1; j < ys.size(); ++j)
                if ((*d)[ys[j]] >= threshold) return {true, true};
        }
        return {false, true};
    }
    // double sweep lower bound
    int far = ys[0];
    double lb = 0;
    for (int sweep = 0; sweep < 2; ++sweep) {
        auto d = b.bfs_from(far);
        int arg = far;
        for (int y : ys)
            if ((*d)[y] > (*d)[arg]) arg = y;
        lb = std::max(lb, static_cast<double>((*d)[arg]));
        far = arg;
    }
    return {lb >= threshold, false};
}

enum class Family { A, B, S };

inline const char* to_string(Family f) { return f == Family::A ? "A" : f == Family::B ? "B" : "S"; }

struct EventSpec {
    Family family = Family::A;
    SiteId x = 0;
    int L = 1;
    std::optional<HalfPlane> plane;
};

struct SeparationWitness {
    std::vector<SiteId> A1, A2;  // connected vacant pieces of closure(B(x,3L)) in distinct components
    bool exact = true;
};

// Precomputed geometry of one event; evaluation reads sigma on support() only.
class EventGeometry {
public:
    EventGeometry(const WeightedGraph& g, EventSpec spec) : g_(&g), spec_(std::move(spec)) {
        if (spec_.L < 1) throw std::invalid_argument("event scale L must be a positive integer");
        params_ = g.default_params();
        const double L = spec_.L;
        switch (spec_.family) {
        case Family::A: {
            auto outer = ball(g, spec_.x, 2 * L, params_);
            require_complete(outer);
            region_ = Region::induced(g, outer, Adjacency::Graph, nullptr);
            source_ = region_.mask(ball(g, spec_.x, L, params_));
            target_ = region_.mask(ball_interior_boundary(g, spec_.x, 2 * L, params_));
            break;
        }
        case Family::B: {
            if (!spec_.plane) throw std::invalid_argument("family B needs a half-plane");
            const HalfPlane& P = *spec_.plane;
            if (!P.contains(g, spec_.x)) {
                empty_ = true;
                return;
            }
            auto [n0, z0] = *P.coords(g, spec_.x);
            auto k = params_.dz_max(2 * L);
            if (n0 + 2 * spec_.L >= P.length() || z0 - k <= P.zlo || z0 + k >= P.zhi)
                throw GeometryError("B(x, 2L) leaves the half-plane window");
            auto outer = plane_sites(g, ball(g, spec_.x, 2 * L, params_), P);
            region_ = Region::induced(g, outer, Adjacency::Star, &P);
            source_ = region_.mask(ball(g, spec_.x, L, params_));
            target_ = region_.mask(ball_interior_boundary(g, spec_.x, 2 * L, params_));
            break;
        }
        case Family::S: {
            auto outer = ball(g, spec_.x, 5 * L, params_);
            require_complete(outer);
            region_ = Region::induced(g, outer, Adjacency::Graph, nullptr);
            source_ = region_.mask(boundary(g, ball(g, spec_.x, 3 * L, params_), BoundaryKind::Closure));
            break;
        }
        }
    }

    const WeightedGraph& graph() const { return *g_; }
    const EventSpec& spec() const { return spec_; }
    const SiteSet& support() const { return region_.sites; }
    bool increasing() const { return spec_.family != Family::A; }
    // the S witness can be destroyed by occupying a site of a piece
    bool monotone() const { return spec_.family != Family::S; }
    bool empty_event() const { return empty_; }
    const MetricParams& params() const { return params_; }

    // sigma indexed like support()
    bool operator()(const std::vector<char>& sigma) const {
        if (empty_) return false;
        if (sigma.size() != region_.size()) throw std::invalid_argument("configuration does not match the event support");
        switch (spec_.family) {
        case Family::A: {
            std::vector<char> allowed(sigma.size());
            for (std::size_t i = 0; i < sigma.size(); ++i) allowed[i] = !sigma[i];
            return region_.connects(allowed, source_, target_);
        }
        case Family::B:
            return region_.connects(sigma, source_, target_);
        case Family::S:
            return witness(sigma).has_value();
        }
        return false;
    }
    bool operator()(const Configuration& c) const { return (*this)(restrict(c)); }

    std::vector<char> restrict(const Configuration& c) const {
        std::vector<char> s(region_.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = c.at(region_.sites[i]);
        return s;
    }

    std::optional<SeparationWitness> witness(const std::vector<char>& sigma) const {
        if (spec_.family != Family::S) throw std::invalid_argument("witness is defined for family S");
        const std::size_t n = region_.size();
        std::vector<char> vac(n), inner(n);
        for (std::size_t i = 0; i < n; ++i) {
            vac[i] = !sigma[i];
            inner[i] = vac[i] && source_[i];
        }
        auto comp = region_.components(vac);
        std::size_t npieces = 0;
        auto piece = region_.components(inner, &npieces);
        std::vector<std::vector<SiteId>> members(npieces);
        for (std::size_t i = 0; i < n; ++i)
            if (piece[i] >= 0) members[piece[i]].push_back(region_.sites[i]);
        std::vector<std::int32_t> owner(npieces);
        for (std::size_t i = 0; i < n; ++i)
            if (piece[i] >= 0) owner[piece[i]] = comp[i];
        std::optional<std::size_t> first;
        bool exact = true;
        for (std::size_t k = 0; k < npieces; ++k) {
            if (first && owner[k] == owner[*first]) continue;
            auto d = diameter_at_least(*g_, members[k], spec_.L, params_);
            exact = exact && d.exact;
            if (!d.at_least) continue;
            if (!first) {
                first = k;
                continue;
            }
            return SeparationWitness{members[*first], members[k], exact};
        }
        return std::nullopt;
    }

private:
    void require_complete(const SiteSet& s) const {
        for (SiteId x : s)
            if (!g_->complete(x)) throw GeometryError("event support reaches the window margin");
    }

    const WeightedGraph* g_;
    EventSpec spec_;
    MetricParams params_;
    Region region_;
    std::vector<char> source_, target_;
    bool empty_ = false;
};

inline bool event_A(const WeightedGraph& g, const Configuration& c, SiteId x, int L) {
    return EventGeometry(g, {Family::A, x, L, {}})(c);
}
inline bool event_B(const WeightedGraph& g, const Configuration& c, SiteId x, int L, const HalfPlane& P) {
    return EventGeometry(g, {Family::B, x, L, P})(c);
}
inline bool event_S(const WeightedGraph& g, const Configuration& c, SiteId x, int L) {
    return EventGeometry(g, {Family::S, x, L, {}})(c);
}

struct EventOptions {
    SamplerOptions sampler;
    double truncation_factor = 2.0;  // R = factor * radius of the event support
    unsigned workers = default_workers();
};

// Sampler anchored on the event support; one anchor serves every level.
inline std::shared_ptr<const SamplerAnchor> event_anchor(const EventGeometry& geo, const EventOptions& opt = {}) {
    const auto& g = geo.graph();
    double r = max_distance(g, geo.spec().x, geo.support(), geo.params());
    return make_anchor(g, geo.support(), geo.spec().x, std::max(opt.truncation_factor * r, r + 2), geo.params(), opt.sampler);
}

struct LevelCounts {
    std::vector<double> levels;
    std::vector<std::size_t> hits;
    std::size_t trials = 0;
    double bias = 0;

    Interval ci(std::size_t k) const { return wilson(hits[k], trials); }
    double estimate(std::size_t k) const { return trials ? static_cast<double>(hits[k]) / trials : 0.0; }
};

// Counts, per level, the trials in which the event occurs under I^u.
// Levels must be ascending. For monotone events a trial stops once the remaining levels are settled.
inline LevelCounts event_level_counts(const EventGeometry& geo, const SamplerAnchor& A, std::vector<double> levels,
                                      std::size_t trials, std::uint64_t seed, unsigned workers = default_workers()) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (!std::is_sorted(levels.begin(), levels.end()) || levels.empty() || levels.front() < 0)
        throw std::invalid_argument("levels must be ascending and nonnegative");
    LevelCounts out{levels, std::vector<std::size_t>(levels.size(), 0), trials, A.bias};
    if (geo.empty_event()) return out;
    std::vector<std::int32_t> pos(geo.support().size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
        auto k = index_of(A.K, geo.support()[i]);
        if (k < 0) throw std::invalid_argument("event support must lie inside the anchor set");
        pos[i] = static_cast<std::int32_t>(k);
    }
    const std::size_t chunks = std::min<std::size_t>(trials, 256);
    std::vector<std::vector<std::size_t>> part(chunks, std::vector<std::size_t>(levels.size(), 0));
    const bool inc = geo.increasing(), settle = geo.monotone();
    parallel_for(chunks, workers, [&](std::size_t c) {
        std::vector<double> minlab;
        std::vector<char> sigma(pos.size());
        for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
            Philox rng(seed, t);
            sample_levels(A, levels, rng, minlab, [&](std::size_t k) {
                for (std::size_t i = 0; i < pos.size(); ++i) sigma[i] = minlab[pos[i]] <= levels[k];
                bool ev = geo(sigma);
                if (!settle) {
                    part[c][k] += ev;
                    return true;
                }
                if (ev == inc) {
                    // settled: increasing events stay true, decreasing ones stay false
                    if (inc)
                        for (std::size_t j = k; j < levels.size(); ++j) ++part[c][j];
                    return false;
                }
                if (!inc) ++part[c][k];
                return true;
            });
        }
    });
    for (const auto& p : part)
        for (std::size_t k = 0; k < levels.size(); ++k) out.hits[k] += p[k];
    return out;
}

struct EventEstimate {
    double estimate = 0;
    Interval ci;
    std::size_t trials = 0, hits = 0, invalid = 0;
    double bias = 0;
};

inline EventEstimate crossing_prob(const WeightedGraph& g, const EventSpec& spec, double u, std::size_t trials,
                                   std::uint64_t seed, const EventOptions& opt = {}) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (!(u >= 0)) throw std::invalid_argument("level must be nonnegative");
    EventGeometry geo(g, spec);
    if (geo.empty_event()) return {0, {0, 0}, trials, 0, 0, 0};
    if (u == 0) {
        bool v = geo(std::vector<char>(geo.support().size(), 0));
        return {v ? 1.0 : 0.0, {v ? 1.0 : 0.0, v ? 1.0 : 0.0}, trials, v ? trials : 0, 0, 0};
    }
    auto A = event_anchor(geo, opt);
    auto c = event_level_counts(geo, *A, {u}, trials, seed, opt.workers);
    return {c.estimate(0), c.ci(0), trials, c.hits[0], 0, c.bias};
}

// P[the component of x in V^u inside W = B(x,2L) cap P is finite and meets bd_int B(x,L)].
// Trials whose component touches the plane boundary of W are invalid and excluded.
inline EventEstimate cluster_tail(const WeightedGraph& g, double u, const HalfPlane& P, SiteId x, int L, std::size_t trials,
                                  std::uint64_t seed, const EventOptions& opt = {}) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (!P.contains(g, x)) throw GeometryError("cluster_tail needs x in the half-plane");
    auto p = g.default_params();
    EventGeometry probe(g, {Family::B, x, L, P});  // validates the plane window for B(x,2L)
    const SiteSet W = probe.support();
    auto r = Region::induced(g, W, Adjacency::Graph, nullptr);
    auto edge = r.mask(plane_interior_boundary(g, W, P));
    // the plane has no sites at n < 0, so the ray origin is not an edge
    auto shell = r.mask(ball_interior_boundary(g, x, L, p));
    const auto ix = index_of(W, x);
    auto evaluate = [&](const std::vector<char>& occ, bool& valid) {
        valid = true;
        if (occ[ix]) return false;
        std::vector<char> seen(r.size(), 0);
        std::vector<std::int32_t> stack{static_cast<std::int32_t>(ix)};
        seen[ix] = 1;
        bool meets = false;
        while (!stack.empty()) {
            auto v = stack.back();
            stack.pop_back();
            if (edge[v]) valid = false;
            if (shell[v]) meets = true;
            for (auto k = r.off[v]; k < r.off[v + 1]; ++k) {
                auto w = r.nbr[k];
                if (!occ[w] && !seen[w]) seen[w] = 1, stack.push_back(w);
            }
        }
        return meets;
    };
    EventEstimate out;
    out.trials = trials;
    if (u == 0) {
        bool valid;
        evaluate(std::vector<char>(W.size(), 0), valid);
        out.invalid = valid ? 0 : trials;
        return out;
    }
    double R = std::max(opt.truncation_factor * 2 * L, 2.0 * L + 2);
    auto A = make_anchor(g, W, x, R, p, opt.sampler);
    out.bias = A->bias;
    const std::size_t chunks = std::min<std::size_t>(trials, 256);
    std::vector<std::array<std::size_t, 2>> part(chunks, {0, 0});
    parallel_for(chunks, opt.workers, [&](std::size_t c) {
        std::vector<double> minlab;
        std::vector<char> occ(W.size());
        for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
            Philox rng(seed, t);
            sample_min_labels(*A, u, rng, minlab);
            for (std::size_t i = 0; i < W.size(); ++i) occ[i] = minlab[i] <= u;
            bool valid;
            bool ev = evaluate(occ, valid);
            if (!valid)
                ++part[c][1];
            else if (ev)
                ++part[c][0];
        }
    });
    for (auto& pc : part) out.hits += pc[0], out.invalid += pc[1];
    std::size_t n = trials - out.invalid;
    out.estimate = n ? static_cast<double>(out.hits) / n : 0.0;
    out.ci = wilson(out.hits, n);
    return out;
}

inline bool on_interior_shell(const WeightedGraph& g, SiteId x, SiteId s, double r, const MetricParams& p) {
    if (metric_d(g, x, s, p) > r) return false;
    bool out = false;
    g.for_each_neighbor(s, [&](SiteId v, double) { out = out || metric_d(g, x, v, p) > r; });
    return out;
}

// P[the union of M independent walk ranges realizes the event]; walks stop on leaving B(x, exit_radius).
inline EventEstimate walk_union_event_prob(const WeightedGraph& g, std::size_t M, const std::vector<SiteId>& starts,
                                           const EventSpec& spec, std::size_t trials, std::uint64_t seed,
                                           double exit_radius = 0, unsigned workers = default_workers()) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (starts.size() != M) throw std::invalid_argument("need exactly M start sites");
    auto p = g.default_params();
    const double L = spec.L;
    for (SiteId s : starts)
        if (!on_interior_shell(g, spec.x, s, 20 * L, p)) throw GeometryError("walk starts must lie on bd_int B(x, 20L)");
    EventGeometry geo(g, spec);
    const double rev = geo.spec().family == Family::S ? 5 * L : 2 * L;
    if (exit_radius <= 0) exit_radius = 40 * L;
    if (exit_radius <= 20 * L) throw std::invalid_argument("exit radius must exceed the start shell");
    if (!ball_fits(g, spec.x, exit_radius + 1, p)) throw GeometryError("exit ball leaves the window");
    EventEstimate out;
    out.trials = trials;
    if (geo.empty_event() || M == 0) {
        bool v = !geo.empty_event() && geo(std::vector<char>(geo.support().size(), 0));
        out.hits = v ? trials : 0;
        out.estimate = v;
        out.ci = wilson(out.hits, trials);
        return out;
    }
    const auto& sup = geo.support();
    const std::size_t chunks = std::min<std::size_t>(trials, 256);
    std::vector<std::size_t> part(chunks, 0);
    parallel_for(chunks, workers, [&](std::size_t c) {
        std::vector<char> sigma(sup.size());
        for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
            Philox rng(seed, t);
            std::fill(sigma.begin(), sigma.end(), 0);
            for (SiteId s : starts) {
                SiteId cur = s;
                for (std::int64_t n = 0; n < 1'000'000'000; ++n) {
                    double d = metric_d(g, spec.x, cur, p);
                    if (d > exit_radius) break;
                    if (d <= rev) {
                        auto i = index_of(sup, cur);
                        if (i >= 0) sigma[i] = 1;
                    }
                    cur = walk_step(g, cur, rng);
                }
            }
            part[c] += geo(sigma);
        }
    });
    out.hits = std::accumulate(part.begin(), part.end(), std::size_t{0});
    out.estimate = static_cast<double>(out.hits) / trials;
    out.ci = wilson(out.hits, trials);
    return out;
}

// rectangle D = W x J in a half-plane: ray indices [n0, n0 + width), heights [z0, z0 + height)
struct PlaneRectangle {
    int n0 = 0, width = 1, z0 = 0, height = 1;
    bool contains(int n, int z) const { return n >= n0 && n < n0 + width && z >= z0 && z < z0 + height; }
};

struct SegmentHits {
    std::vector<SiteId> starts;
    std::vector<std::vector<double>> vertical;    // [start][ybar - n0] P_x[H_{J_ybar} < inf]
    std::vector<std::vector<double>> horizontal;  // [start][zbar - z0] P_x[H_{W_zbar} < inf]
    std::vector<double> vert_count, hor_count;    // E_x of the number of segments hit
    std::vector<double> vert_se, hor_se;
    double n_vert = 0, n_hor = 0;  // max over starts
    std::size_t trials = 0;
    double exit_radius = 0;
};

// Walks stop on leaving B(center of D, exit_radius); returns from beyond are neglected.
inline SegmentHits segment_hit_probs(const WeightedGraph& g, const HalfPlane& P, const PlaneRectangle& D,
                                     const std::vector<SiteId>& starts, std::size_t trials, std::uint64_t seed,
                                     double exit_radius, unsigned workers = default_workers()) {
    if (trials == 0) throw std::invalid_argument("trials must be positive");
    if (D.width < 1 || D.height < 1 || D.n0 < 0 || D.n0 + D.width - 1 > P.length() || D.z0 < P.zlo ||
        D.z0 + D.height - 1 > P.zhi)
        throw std::invalid_argument("malformed rectangle");
    auto p = g.default_params();
    SiteId center = P.site(g, D.n0 + D.width / 2, D.z0 + D.height / 2);
    if (!ball_fits(g, center, exit_radius + 1, p)) throw GeometryError("exit ball leaves the window");
    for (SiteId s : starts) {
        auto c = P.coords(g, s);
        if (!c || !D.contains(c->first, c->second)) throw std::invalid_argument("starts must lie in the rectangle");
    }
    SegmentHits out;
    out.starts = starts;
    out.trials = trials;
    out.exit_radius = exit_radius;
    for (std::size_t si = 0; si < starts.size(); ++si) {
        const std::size_t chunks = std::min<std::size_t>(trials, 128);
        std::vector<std::vector<std::size_t>> vh(chunks, std::vector<std::size_t>(D.width, 0)),
            hh(chunks, std::vector<std::size_t>(D.height, 0));
        std::vector<double> vc(trials), hc(trials);
        parallel_for(chunks, workers, [&](std::size_t c) {
            std::vector<char> sv(D.width), sh(D.height);
            for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
                Philox rng(mix_task(seed, si), t);
                std::fill(sv.begin(), sv.end(), 0);
                std::fill(sh.begin(), sh.end(), 0);
                SiteId cur = starts[si];
                while (metric_d(g, center, cur, p) <= exit_radius) {
                    if (auto q = P.coords(g, cur); q && D.contains(q->first, q->second)) {
                        sv[q->first - D.n0] = 1;
                        sh[q->second - D.z0] = 1;
                    }
                    cur = walk_step(g, cur, rng);
                }
                for (int k = 0; k < D.width; ++k) vh[c][k] += sv[k];
                for (int k = 0; k < D.height; ++k) hh[c][k] += sh[k];
                vc[t] = std::accumulate(sv.begin(), sv.end(), 0.0);
                hc[t] = std::accumulate(sh.begin(), sh.end(), 0.0);
            }
        });
        std::vector<std::size_t> vt(D.width, 0), ht(D.height, 0);
        for (std::size_t c = 0; c < chunks; ++c) {
            for (int k = 0; k < D.width; ++k) vt[k] += vh[c][k];
            for (int k = 0; k < D.height; ++k) ht[k] += hh[c][k];
        }
        std::vector<double> v(D.width), h(D.height);
        for (int k = 0; k < D.width; ++k) v[k] = static_cast<double>(vt[k]) / trials;
        for (int k = 0; k < D.height; ++k) h[k] = static_cast<double>(ht[k]) / trials;
        Moments V, Hm;
        for (std::size_t t = 0; t < trials; ++t) V.add(vc[t]), Hm.add(hc[t]);
        out.vertical.push_back(std::move(v));
        out.horizontal.push_back(std::move(h));
        out.vert_count.push_back(V.mean);
        out.hor_count.push_back(Hm.mean);
        out.vert_se.push_back(V.sem());
        out.hor_se.push_back(Hm.sem());
        out.n_vert = std::max(out.n_vert, V.mean);
        out.n_hor = std::max(out.n_hor, Hm.mean);
    }
    return out;
}

// bound shapes with unit constants
inline double n_vert_shape(double L, double H, const MetricParams& p) {
    double h = std::pow(H, 2 / p.beta);
    bool eq = std::abs(p.alpha - p.beta) < 1e-12;
    return h * (1 + std::log(L / h)) / (1 + (eq ? std::log(L) : 0.0));
}
inline double n_hor_shape(double L, double H, const MetricParams& p) {
    return H * (1 + std::log(L / std::pow(H, 2 / p.beta))) / std::log(L);
}
// horizontal segment hitting shape for nu = 1
inline double hor_hit_shape(double L, double dz, const MetricParams& p) {
    return (1 + std::log(L / std::pow(std::max(dz, 1.0), 2 / p.beta))) / std::log(L);
}
// H = [(L / log L)^{beta/2}]
inline int rectangle_height(double L, const MetricParams& p) {
    return std::max(1, static_cast<int>(std::floor(std::pow(L / std::log(L), p.beta / 2))));
}

}  // namespace ri

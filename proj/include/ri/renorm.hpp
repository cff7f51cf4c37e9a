#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ri/percolation.hpp"

namespace ri {

enum class LadderMode { Relaxed, Strict };

struct ScaleLadder {
    std::int64_t L0 = 1;
    int ell0 = 100;
    LadderMode mode = LadderMode::Strict;

    static ScaleLadder make(std::int64_t L0, int ell0, LadderMode mode) {
        if (L0 < 1) throw std::invalid_argument("L0 must be a positive integer");
        if (mode == LadderMode::Strict && (ell0 < 100 || ell0 % 100 != 0))
            throw std::invalid_argument("strict ladders need ell0 a positive multiple of 100");
        if (mode == LadderMode::Relaxed && ell0 < 4) throw std::invalid_argument("relaxed ladders need ell0 >= 4");
        return {L0, ell0, mode};
    }
    std::int64_t L(int n) const {
        std::int64_t v = L0;
        for (int k = 0; k < n; ++k) {
            if (v > INT64_MAX / ell0) throw std::overflow_error("scale overflow");
            v *= ell0;
        }
        return v;
    }
};

// Dyadic tree nodes in heap order: root 0, children of i are 2i+1 (append 1) and 2i+2 (append 2).
struct TreeEmbedding {
    int depth = 0;
    std::vector<SiteId> x;

    static std::size_t node_count(int n) { return (std::size_t{1} << (n + 1)) - 1; }
    static int depth_of(std::size_t i) {
        int k = 0;
        while (i + 1 >= (std::size_t{2} << k)) ++k;
        return k;
    }
    std::vector<SiteId> leaves() const {
        std::size_t first = (std::size_t{1} << depth) - 1;
        return {x.begin() + first, x.end()};
    }
};

// Exact ball relations, using that d-balls are products of a G-ball and a Z-interval.
namespace detail {
inline bool base_ball_contains(const BaseGraph& b, int ym, std::int64_t R, int yc, std::int64_t r, bool sup) {
    if (r < 0) return true;
    int d = sup ? b.dist_sup(ym, yc) : b.dist(ym, yc);
    if (b.kind() == BaseGraph::Kind::Lattice) return d + r <= R;
    if (d + r <= R) return true;
    auto dm = b.bfs_from(ym);
    for (int y : b.ball(yc, static_cast<int>(r), sup))
        if ((*dm)[y] > R) return false;
    return true;
}
}  // namespace detail

inline bool ball_contains(const WeightedGraph& g, SiteId m, double R, SiteId c, double r, const MetricParams& p) {
    auto fl = [](double v) { return static_cast<std::int64_t>(std::floor(v + 1e-9)); };
    bool sup = p.kind == MetricKind::SupNorm;
    if (!detail::base_ball_contains(g.base(), g.base_of(m), fl(R), g.base_of(c), fl(r), sup)) return false;
    std::int64_t kz = p.dz_max(r), KZ = p.dz_max(R), dz = std::abs(static_cast<std::int64_t>(g.z_of(c)) - g.z_of(m));
    return dz + kz <= KZ;
}

inline bool balls_intersect(const WeightedGraph& g, SiteId a, double ra, SiteId b, double rb, const MetricParams& p) {
    auto fl = [](double v) { return static_cast<std::int64_t>(std::floor(v + 1e-9)); };
    const BaseGraph& G = g.base();
    bool sup = p.kind == MetricKind::SupNorm;
    int d = sup ? G.dist_sup(g.base_of(a), g.base_of(b)) : G.dist(g.base_of(a), g.base_of(b));
    // geodesic midpoints exist in G; the sup-norm lattice behaves the same way
    if (d > fl(ra) + fl(rb)) return false;
    std::int64_t dz = std::abs(static_cast<std::int64_t>(g.z_of(a)) - g.z_of(b));
    return dz <= p.dz_max(ra) + p.dz_max(rb);
}

struct EmbeddingReport {
    bool valid = true;
    std::vector<std::string> violations;
};

inline EmbeddingReport validate_embedding(const WeightedGraph& g, const TreeEmbedding& T, const ScaleLadder& ladder,
                                          const MetricParams& p) {
    EmbeddingReport r;
    if (T.x.size() != TreeEmbedding::node_count(T.depth)) {
        r.valid = false;
        r.violations.push_back("node count does not match depth");
        return r;
    }
    auto radius = [&](std::size_t i) { return 10.0 * ladder.L(T.depth - TreeEmbedding::depth_of(i)); };
    auto fail = [&](std::string s) {
        r.valid = false;
        r.violations.push_back(std::move(s));
    };
    for (std::size_t i = 0; i < T.x.size(); ++i) {
        int k = TreeEmbedding::depth_of(i);
        if (k == T.depth) break;
        double sep = ladder.L(T.depth - k) / 100.0;
        std::size_t c1 = 2 * i + 1, c2 = 2 * i + 2;
        for (auto c : {c1, c2})
            if (!ball_contains(g, T.x[i], radius(i), T.x[c], radius(c), p))
                fail("nesting fails at node " + std::to_string(c));
        if (metric_d(g, T.x[c1], T.x[c2], p) < sep) fail("siblings too close below node " + std::to_string(i));
    }
    for (int k = 1; k <= T.depth; ++k) {
        std::size_t lo = (std::size_t{1} << k) - 1, hi = (std::size_t{2} << k) - 1;
        for (std::size_t a = lo; a < hi; ++a)
            for (std::size_t b = a + 1; b < hi; ++b)
                if (balls_intersect(g, T.x[a], radius(a), T.x[b], radius(b), p))
                    fail("boxes " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
    }
    return r;
}

// Greedy maximal net: candidates in ascending SiteId order, kept when farther than `spacing` from every kept site.
inline std::vector<SiteId> greedy_net(const WeightedGraph& g, const std::vector<SiteId>& candidates, double spacing,
                                      const MetricParams& p) {
    std::unordered_map<int, std::set<int>> kept;
    const bool sup = p.kind == MetricKind::SupNorm;
    const int rg = static_cast<int>(std::floor(spacing + 1e-9));
    const std::int64_t kz = p.dz_max(spacing);
    std::vector<SiteId> out;
    for (SiteId c : candidates) {
        int yc = g.base_of(c), zc = g.z_of(c);
        bool clash = false;
        for (int y : g.base().ball(yc, rg, sup)) {
            auto it = kept.find(y);
            if (it == kept.end()) continue;
            auto lo = it->second.lower_bound(static_cast<int>(zc - kz));
            if (lo != it->second.end() && *lo <= zc + kz) {
                clash = true;
                break;
            }
        }
        if (clash) continue;
        kept[yc].insert(zc);
        out.push_back(c);
    }
    return out;
}

struct CoverSpec {
    Family family = Family::A;
    SiteId x = 0;
    int ell = 100;
    std::int64_t L = 1;
    double min_pair_distance = 0;  // (ell/100) L
    // A, B: pairs are net1 x net2. S: Lambda = lambda_g x lambda_z, pairs are unordered at distance >= min_pair_distance.
    std::vector<SiteId> net1, net2;
    std::vector<int> lambda_g, lambda_z;
    bool degenerate = false;  // B with x outside the plane

    double lambda_size() const {
        if (family == Family::S) return static_cast<double>(lambda_g.size()) * lambda_z.size();
        std::set<SiteId> u(net1.begin(), net1.end());
        u.insert(net2.begin(), net2.end());
        return static_cast<double>(u.size());
    }
    std::vector<SiteId> lambda(const WeightedGraph& g) const {
        if (family != Family::S) {
            SiteSet s(net1.begin(), net1.end());
            s.insert(s.end(), net2.begin(), net2.end());
            normalize(s);
            return s;
        }
        SiteSet s;
        s.reserve(lambda_g.size() * lambda_z.size());
        for (int y : lambda_g)
            for (int z : lambda_z) s.push_back(g.site(y, z));
        normalize(s);
        return s;
    }
};

inline CoverSpec blank_cover(Family f, SiteId x, int ell, std::int64_t L, double min_pair) {
    CoverSpec c;
    c.family = f;
    c.x = x;
    c.ell = ell;
    c.L = L;
    c.min_pair_distance = min_pair;
    return c;
}

inline void check_cover_scale(int ell, std::int64_t L, LadderMode mode) {
    if (L < 1) throw std::invalid_argument("L must be a positive integer");
    if (mode == LadderMode::Strict && (ell < 100 || ell % 100 != 0))
        throw std::invalid_argument("ell must be a positive multiple of 100");
    if (mode == LadderMode::Relaxed && ell < 4) throw std::invalid_argument("relaxed covers need ell >= 4");
}

inline CoverSpec cover_A(const WeightedGraph& g, SiteId x, int ell, std::int64_t L, LadderMode mode = LadderMode::Strict) {
    check_cover_scale(ell, L, mode);
    auto p = g.default_params();
    const double R = static_cast<double>(ell) * L;
    if (!ball_fits(g, x, 2 * R, p)) throw GeometryError("B(x, 2 ell L) leaves the window");
    auto c = blank_cover(Family::A, x, ell, L, R / 100);
    c.net1 = greedy_net(g, ball_interior_boundary(g, x, R, p), L, p);
    c.net2 = greedy_net(g, ball_interior_boundary(g, x, 1.5 * R, p), L, p);
    return c;
}

// plane part of the interior boundary of B(x, R): rectangle sides neighbouring P \ B(x, R)
inline SiteSet plane_shell(const WeightedGraph& g, SiteId x, double R, const HalfPlane& P, const MetricParams& p) {
    auto [n0, z0] = *P.coords(g, x);
    const int r = static_cast<int>(std::floor(R + 1e-9));
    const int k = static_cast<int>(p.dz_max(R));
    if (n0 + r >= P.length() || z0 - k <= P.zlo || z0 + k >= P.zhi) throw GeometryError("ball leaves the half-plane window");
    SiteSet out;
    for (int n = std::max(0, n0 - r); n <= n0 + r; ++n)
        for (int z = z0 - k; z <= z0 + k; ++z)
            if (n == n0 + r || (n == n0 - r && n > 0) || z == z0 - k || z == z0 + k) out.push_back(P.site(g, n, z));
    normalize(out);
    return out;
}

inline CoverSpec cover_B(const WeightedGraph& g, SiteId x, int ell, std::int64_t L, const HalfPlane& P,
                         LadderMode mode = LadderMode::Strict) {
    check_cover_scale(ell, L, mode);
    auto p = g.default_params();
    const double R = static_cast<double>(ell) * L;
    auto c = blank_cover(Family::B, x, ell, L, R / 100);
    if (!P.contains(g, x)) {
        c.degenerate = true;
        c.net1 = c.net2 = {x};
        return c;
    }
    plane_shell(g, x, 2 * R, P, p);  // window check
    c.net1 = greedy_net(g, plane_shell(g, x, R, P, p), L, p);
    c.net2 = greedy_net(g, plane_shell(g, x, 1.5 * R, P, p), L, p);
    return c;
}

inline CoverSpec cover_S(const WeightedGraph& g, SiteId x, int ell, std::int64_t L, LadderMode mode = LadderMode::Strict) {
    check_cover_scale(ell, L, mode);
    auto p = g.default_params();
    const double R5 = 5.0 * ell * L;
    if (!ball_fits(g, x, R5, p)) throw GeometryError("B(x, 5 ell L) leaves the window");
    auto c = blank_cover(Family::S, x, ell, L, static_cast<double>(ell) * L / 100);
    const bool sup = p.kind == MetricKind::SupNorm;
    const int ys = g.base_of(x), zs = g.z_of(x);
    auto base = g.base().ball(ys, static_cast<int>(std::floor(R5 + 1e-9)), sup);
    std::sort(base.begin(), base.end());
    if (L <= 4) {
        c.lambda_g = base;
    } else {
        // net in G with spacing L/4, realized on the z = zs slice
        std::vector<SiteId> cand;
        for (int y : base) cand.push_back(g.site(y, zs));
        MetricParams flat = p;
        for (SiteId s : greedy_net(g, cand, L / 4.0, flat)) c.lambda_g.push_back(g.base_of(s));
    }
    const std::int64_t a = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(std::pow(L / 4.0, p.beta / 2))));
    const double zmax = std::pow(R5, p.beta / 2);
    for (std::int64_t m = -static_cast<std::int64_t>(std::floor(zmax / a)); m * a <= zmax; ++m) c.lambda_z.push_back(zs + static_cast<int>(m * a));
    return c;
}

inline CoverSpec make_cover(const WeightedGraph& g, const EventSpec& s, int ell, std::int64_t L, LadderMode mode) {
    switch (s.family) {
    case Family::A: return cover_A(g, s.x, ell, L, mode);
    case Family::B: return cover_B(g, s.x, ell, L, *s.plane, mode);
    case Family::S: return cover_S(g, s.x, ell, L, mode);
    }
    throw std::invalid_argument("unknown family");
}

// Calls f(x', x'') for every admissible pair; stops when f returns false.
template <class F>
void for_each_pair(const WeightedGraph& g, const CoverSpec& c, F&& f) {
    if (c.family != Family::S) {
        for (SiteId a : c.net1)
            for (SiteId b : c.net2)
                if (!f(a, b)) return;
        return;
    }
    auto p = g.default_params();
    auto lam = c.lambda(g);
    for (std::size_t i = 0; i < lam.size(); ++i)
        for (std::size_t j = i + 1; j < lam.size(); ++j)
            if (metric_d(g, lam[i], lam[j], p) >= c.min_pair_distance && !f(lam[i], lam[j])) return;
}

inline double pair_count(const WeightedGraph& g, const CoverSpec& c) {
    if (c.family != Family::S) return static_cast<double>(c.net1.size()) * c.net2.size();
    // all unordered pairs minus those closer than the threshold, found by local ball search
    auto p = g.default_params();
    auto lam = c.lambda(g);
    double n = static_cast<double>(lam.size());
    double close = 0;
    for (SiteId s : lam)
        for (SiteId t : ball(g, s, c.min_pair_distance, p))
            if (t > s && metric_d(g, s, t, p) < c.min_pair_distance && contains(lam, t)) ++close;
    return n * (n - 1) / 2 - close;
}

// Child events on a lattice are translates of one template geometry; site ids shift by a constant.
class ChildEvents {
public:
    ChildEvents(const WeightedGraph& g, const EventSpec& proto, std::int64_t L, SiteId ref) : g_(&g), proto_(proto) {
        proto_.L = static_cast<int>(L);
        p_ = g.default_params();
        reach_ = (proto.family == Family::S ? 5.0 : 2.0) * L + 1;
        if (g.base().kind() == BaseGraph::Kind::Lattice && proto.family != Family::B && ball_fits(g, ref, reach_, p_)) {
            EventSpec s = proto_;
            s.x = ref;
            tmpl_ = std::make_unique<EventGeometry>(g, s);
            ref_ = ref;
            for (SiteId t : tmpl_->support()) off_.push_back(t - ref);
        }
    }
    bool operator()(SiteId x, const Configuration& c) {
        if (tmpl_ && ball_fits(*g_, x, reach_, p_)) {
            buf_.resize(off_.size());
            for (std::size_t i = 0; i < off_.size(); ++i) buf_[i] = c.at(x + off_[i]);
            return (*tmpl_)(buf_);
        }
        auto& e = cache_[x];
        if (!e) {
            EventSpec s = proto_;
            s.x = x;
            e = std::make_unique<EventGeometry>(*g_, s);
        }
        return (*e)(c);
    }

private:
    const WeightedGraph* g_;
    EventSpec proto_;
    MetricParams p_;
    double reach_ = 0;
    std::unique_ptr<EventGeometry> tmpl_;
    SiteId ref_ = 0;
    std::vector<SiteId> off_;
    std::vector<char> buf_;
    std::map<SiteId, std::unique_ptr<EventGeometry>> cache_;
};

struct InclusionResult {
    std::size_t configs = 0, top_events = 0, violations = 0;
    std::vector<std::size_t> violating;  // config indices
};

// Checks G_{x, ell L} => some admissible pair of child events, on given configurations.
inline InclusionResult check_inclusion(const WeightedGraph& g, const EventSpec& top, const CoverSpec& c,
                                       const std::vector<Configuration>& configs) {
    InclusionResult r;
    EventGeometry parent(g, top);
    ChildEvents fires(g, top, c.L, top.x);
    auto p = g.default_params();
    for (std::size_t k = 0; k < configs.size(); ++k) {
        const auto& cf = configs[k];
        ++r.configs;
        if (!parent(cf)) continue;
        ++r.top_events;
        bool ok = false;
        if (c.family != Family::S) {
            bool a = false, b = false;
            for (SiteId x : c.net1)
                if (fires(x, cf)) {
                    a = true;
                    break;
                }
            if (a)
                for (SiteId x : c.net2)
                    if (fires(x, cf)) {
                        b = true;
                        break;
                    }
            ok = a && b;
        } else {
            std::vector<SiteId> firing;
            for (SiteId x : c.lambda(g)) {
                if (!fires(x, cf)) continue;
                for (SiteId y : firing)
                    if (metric_d(g, x, y, p) >= c.min_pair_distance) ok = true;
                if (ok) break;
                firing.push_back(x);
            }
        }
        if (!ok) {
            ++r.violations;
            r.violating.push_back(k);
        }
    }
    return r;
}

// Streams embeddings built by recursive cover expansion; stops when visit returns false.
// Returns the number of embeddings visited.
inline std::size_t expand_tree(const WeightedGraph& g, const EventSpec& root, int n, const ScaleLadder& ladder,
                               const std::function<bool(const TreeEmbedding&)>& visit) {
    if (n < 0) throw std::invalid_argument("depth must be nonnegative");
    TreeEmbedding T{n, std::vector<SiteId>(TreeEmbedding::node_count(n), root.x)};
    std::map<std::pair<SiteId, int>, CoverSpec> covers;
    auto cover_at = [&](SiteId x, int k) -> const CoverSpec& {
        auto key = std::pair{x, k};
        auto it = covers.find(key);
        if (it == covers.end()) {
            EventSpec s = root;
            s.x = x;
            it = covers.emplace(key, make_cover(g, s, ladder.ell0, ladder.L(n - k - 1), ladder.mode)).first;
        }
        return it->second;
    };
    std::size_t count = 0;
    bool stop = false;
    // fill nodes level by level: frontier holds node indices still to expand, in heap order
    std::function<void(std::size_t)> fill = [&](std::size_t i) {
        if (stop) return;
        std::size_t total = TreeEmbedding::node_count(n);
        if (i == total || TreeEmbedding::depth_of(i) == n) {
            ++count;
            if (!visit(T)) stop = true;
            return;
        }
        const CoverSpec& c = cover_at(T.x[i], TreeEmbedding::depth_of(i));
        for_each_pair(g, c, [&](SiteId a, SiteId b) {
            T.x[2 * i + 1] = a;
            T.x[2 * i + 2] = b;
            // expand the next internal node in heap order
            std::size_t next = i + 1;
            fill(next);
            return !stop;
        });
    };
    fill(0);
    return count;
}

// Number of embeddings expand_tree would produce, by recursion over cover pairs.
inline double count_embeddings(const WeightedGraph& g, const EventSpec& root, int n, const ScaleLadder& ladder) {
    std::map<std::pair<SiteId, int>, double> memo;
    std::function<double(SiteId, int)> rec = [&](SiteId x, int k) -> double {
        if (k == n) return 1.0;
        auto key = std::pair{x, k};
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        EventSpec s = root;
        s.x = x;
        auto c = make_cover(g, s, ladder.ell0, ladder.L(n - k - 1), ladder.mode);
        double total = 0;
        for_each_pair(g, c, [&](SiteId a, SiteId b) {
            total += rec(a, k + 1) * rec(b, k + 1);
            return true;
        });
        return memo[key] = total;
    };
    return rec(root.x, 0);
}

struct LevelSchedule {
    double u0 = 1, K = 1, nu = 1, nu_prime = 0.5, c1 = 1;
    int ell0 = 100;
    std::vector<double> plus, minus;  // u_n^+ and u_n^- for n = 0..n_max
    double plus_inf = 0, minus_inf = 0;
    std::size_t terms = 0;  // explicit factors before the analytic tail

    double step(int k) const { return c1 * std::sqrt(K) / std::pow(k + 1.0, 1.5) * std::pow(ell0, -(nu - nu_prime) / 2); }
};

namespace detail {
// sum_{j > N} j^{-s} by Euler-Maclaurin
inline double zeta_tail(double s, double N) {
    double a = std::pow(N, 1 - s) / (s - 1) - 0.5 * std::pow(N, -s) + s / 12 * std::pow(N, -s - 1) -
               s * (s + 1) * (s + 2) / 720 * std::pow(N, -s - 3);
    return a;
}
}  // namespace detail

inline LevelSchedule level_schedule(double u0, double K, double nu, double nu_prime, int ell0, double c1 = 1,
                                    int n_max = 12) {
    if (!(u0 > 0) || !(K > 0) || !(c1 > 0)) throw std::invalid_argument("u0, K and c1 must be positive");
    if (!(nu_prime > 0 && nu_prime < nu)) throw std::invalid_argument("nu_prime must lie in (0, nu)");
    if (ell0 < 1 || n_max < 0) throw std::invalid_argument("bad ladder parameters");
    LevelSchedule s;
    s.u0 = u0, s.K = K, s.nu = nu, s.nu_prime = nu_prime, s.c1 = c1, s.ell0 = ell0;
    s.plus = {u0};
    s.minus = {u0};
    for (int k = 0; k < n_max; ++k) {
        s.plus.push_back(s.plus.back() * (1 + s.step(k)));
        s.minus.push_back(s.minus.back() / (1 + s.step(k)));
    }
    // explicit factors, then the log-series tail summed with Euler-Maclaurin
    double logsum = 0;
    const std::size_t N = 1'000'000;
    for (std::size_t k = 0; k < N; ++k) logsum += std::log1p(s.step(static_cast<int>(k)));
    const double a = s.step(0);
    for (int m = 1; m <= 4; ++m) logsum += (m % 2 ? 1 : -1) * std::pow(a, m) / m * detail::zeta_tail(1.5 * m, N);
    const std::size_t k = N;
    s.terms = k;
    s.plus_inf = u0 * std::exp(logsum);
    s.minus_inf = u0 * std::exp(-logsum);
    return s;
}

// 2 e^{-v'} / (1 - e^{-v'}) with v' = K v L0^nu ell0^nu'
inline double epsilon(double v, double K, double L0, double nu, double ell0, double nu_prime) {
    if (!(v > 0)) throw std::invalid_argument("epsilon needs v > 0");
    double e = K * v * std::pow(L0, nu) * std::pow(ell0, nu_prime);
    return 2 * std::exp(-e) / -std::expm1(-e);
}

enum class Verdict { Holds, ViolatedBeyondCi, Inconclusive };
inline const char* to_string(Verdict v) {
    return v == Verdict::Holds ? "holds" : v == Verdict::ViolatedBeyondCi ? "violated-beyond-ci" : "inconclusive";
}

struct DecoupleReport {
    Family family = Family::A;
    int n = 0;
    std::size_t trials = 0;
    double u0 = 0, u_n = 0, u_inf = 0, eps = 0, bias = 0;
    EventEstimate lhs, lhs_inf;          // P[intersection] at u_n and at u_inf
    std::vector<EventEstimate> marg_u0;  // per leaf at u0
    std::vector<EventEstimate> marg_inf;
    double rhs = 0;
    Interval rhs_ci;
    double fkg_product = 0, fkg_diff = 0, fkg_se = 0;  // P[cap at u_inf] - product of marginals at u_inf
    Verdict verdict = Verdict::Inconclusive;
    bool fkg_violated = false;
};

struct DecoupleOptions {
    EventOptions event;
    double z = 3;  // verdict threshold in standard errors
};

// Leaves share one interlacement; levels u0, u_n, u_inf per the schedule.
inline DecoupleReport decouple_verify(const WeightedGraph& g, const std::vector<EventSpec>& leaves, int n,
                                      const LevelSchedule& sched, std::size_t trials, std::uint64_t seed,
                                      SiteId center, const DecoupleOptions& opt = {}) {
    if (trials < 2) throw std::invalid_argument("decouple_verify needs at least 2 trials");
    if (leaves.size() != (std::size_t{1} << n)) throw std::invalid_argument("need 2^n leaf events");
    if (n > 5) throw std::invalid_argument("depth above 5 is not supported");
    const Family fam = leaves[0].family;
    for (const auto& l : leaves)
        if (l.family != fam) throw std::invalid_argument("leaves must share one family");
    const bool inc = fam != Family::A;
    DecoupleReport r;
    r.family = fam;
    r.n = n;
    r.trials = trials;
    r.u0 = sched.u0;
    r.u_n = inc ? sched.minus.at(n) : sched.plus.at(n);
    r.u_inf = inc ? sched.minus_inf : sched.plus_inf;
    double L0 = leaves[0].L;
    r.eps = epsilon(inc ? r.u_inf : r.u0, sched.K, L0, sched.nu, sched.ell0, sched.nu_prime);
    std::vector<EventGeometry> geo;
    SiteSet K;
    for (const auto& l : leaves) {
        geo.emplace_back(g, l);
        K = set_union(K, geo.back().support());
    }
    auto p = g.default_params();
    double rad = max_distance(g, center, K, p);
    auto A = make_anchor(g, K, center, std::max(opt.event.truncation_factor * rad, rad + 2), p, opt.event.sampler);
    r.bias = A->bias;
    std::vector<std::vector<std::int32_t>> pos(geo.size());
    for (std::size_t m = 0; m < geo.size(); ++m)
        for (SiteId s : geo[m].support()) pos[m].push_back(static_cast<std::int32_t>(index_of(A->K, s)));
    // ascending levels; idx maps {u0, u_n, u_inf} to positions
    std::vector<double> lv{r.u0, r.u_n, r.u_inf};
    std::sort(lv.begin(), lv.end());
    lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
    auto at = [&](double u) { return static_cast<std::size_t>(std::find(lv.begin(), lv.end(), u) - lv.begin()); };
    const std::size_t i0 = at(r.u0), in = at(r.u_n), ii = at(r.u_inf);
    const std::uint32_t all = (std::uint32_t{1} << geo.size()) - 1;
    std::vector<std::vector<std::uint32_t>> mask(lv.size(), std::vector<std::uint32_t>(trials, 0));
    const std::size_t chunks = std::min<std::size_t>(trials, 256);
    parallel_for(chunks, opt.event.workers, [&](std::size_t c) {
        std::vector<double> minlab;
        std::vector<char> sigma;
        for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
            Philox rng(seed, t);
            sample_levels(*A, lv, rng, minlab, [&](std::size_t k) {
                std::uint32_t m = 0;
                for (std::size_t e = 0; e < geo.size(); ++e) {
                    sigma.resize(pos[e].size());
                    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = minlab[pos[e][i]] <= lv[k];
                    if (geo[e](sigma)) m |= std::uint32_t{1} << e;
                }
                mask[k][t] = m;
                // all leaves settled in the monotone direction: later levels repeat the mask
                bool settled = inc ? m == all : m == 0;
                if (settled && fam != Family::S) {
                    for (std::size_t j = k + 1; j < lv.size(); ++j) mask[j][t] = m;
                    return false;
                }
                return true;
            });
        }
    });
    auto est = [&](std::size_t hits) {
        EventEstimate e;
        e.trials = trials;
        e.hits = hits;
        e.estimate = static_cast<double>(hits) / trials;
        e.ci = wilson(hits, trials);
        e.bias = r.bias;
        return e;
    };
    auto joint = [&](std::size_t k) {
        std::size_t h = 0;
        for (auto m : mask[k]) h += m == all;
        return est(h);
    };
    auto marg = [&](std::size_t k) {
        std::vector<EventEstimate> out;
        for (std::size_t e = 0; e < geo.size(); ++e) {
            std::size_t h = 0;
            for (auto m : mask[k]) h += (m >> e) & 1;
            out.push_back(est(h));
        }
        return out;
    };
    r.lhs = joint(in);
    r.lhs_inf = joint(ii);
    r.marg_u0 = marg(i0);
    r.marg_inf = marg(ii);
    r.rhs = 1;
    r.rhs_ci = {1, 1};
    double rhs_var = 0;
    for (const auto& m : r.marg_u0) {
        r.rhs *= m.estimate + r.eps;
        r.rhs_ci.lo *= m.ci.lo + r.eps;
        r.rhs_ci.hi *= m.ci.hi + r.eps;
    }
    // influence functions give the standard error of LHS - RHS from shared samples
    {
        Moments d;
        for (std::size_t t = 0; t < trials; ++t) {
            double v = (mask[in][t] == all) - r.lhs.estimate;
            for (std::size_t e = 0; e < geo.size(); ++e) {
                double others = r.rhs / (r.marg_u0[e].estimate + r.eps);
                v -= others * (((mask[i0][t] >> e) & 1) - r.marg_u0[e].estimate);
            }
            d.add(v);
        }
        rhs_var = d.var() / trials;
    }
    double diff = r.lhs.estimate - r.rhs, se = std::sqrt(rhs_var);
    if (n == 0 || diff <= 0)
        r.verdict = Verdict::Holds;
    else if (diff > opt.z * se)
        r.verdict = Verdict::ViolatedBeyondCi;
    else
        r.verdict = Verdict::Inconclusive;
    r.fkg_product = 1;
    for (const auto& m : r.marg_inf) r.fkg_product *= m.estimate;
    {
        Moments d;
        for (std::size_t t = 0; t < trials; ++t) {
            double v = (mask[ii][t] == all) - r.lhs_inf.estimate;
            for (std::size_t e = 0; e < geo.size(); ++e) {
                double others = 1;
                for (std::size_t j = 0; j < geo.size(); ++j)
                    if (j != e) others *= r.marg_inf[j].estimate;
                v -= others * (((mask[ii][t] >> e) & 1) - r.marg_inf[e].estimate);
            }
            d.add(v);
        }
        r.fkg_diff = r.lhs_inf.estimate - r.fkg_product;
        r.fkg_se = std::sqrt(d.var() / trials);
        r.fkg_violated = r.fkg_diff < -opt.z * std::max(r.fkg_se, 1.0 / trials);
    }
    return r;
}

struct CalibrationReport {
    double joint = 0, product = 0, z = 0;
    std::vector<double> marginals;
    bool consistent = false;
};

// Each leaf sampled from its own anchor and seed stream: the joint law is an exact product.
inline CalibrationReport decouple_calibration(const WeightedGraph& g, const std::vector<EventSpec>& leaves, double u,
                                              std::size_t trials, std::uint64_t seed, const EventOptions& opt = {}) {
    if (trials < 2) throw std::invalid_argument("calibration needs at least 2 trials");
    std::vector<std::vector<char>> hit(leaves.size(), std::vector<char>(trials));
    for (std::size_t m = 0; m < leaves.size(); ++m) {
        EventGeometry geo(g, leaves[m]);
        auto A = event_anchor(geo, opt);
        std::vector<std::int32_t> pos;
        for (SiteId s : geo.support()) pos.push_back(static_cast<std::int32_t>(index_of(A->K, s)));
        const std::size_t chunks = std::min<std::size_t>(trials, 256);
        parallel_for(chunks, opt.workers, [&](std::size_t c) {
            std::vector<double> minlab;
            std::vector<char> sigma(pos.size());
            for (std::size_t t = c * trials / chunks; t < (c + 1) * trials / chunks; ++t) {
                Philox rng(mix_task(seed, m), t);
                sample_min_labels(*A, u, rng, minlab);
                for (std::size_t i = 0; i < pos.size(); ++i) sigma[i] = minlab[pos[i]] <= u;
                hit[m][t] = geo(sigma);
            }
        });
    }
    CalibrationReport r;
    r.product = 1;
    for (auto& h : hit) {
        double p = std::accumulate(h.begin(), h.end(), 0.0) / trials;
        r.marginals.push_back(p);
        r.product *= p;
    }
    Moments d;
    std::size_t joint = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        bool all = true;
        for (auto& h : hit) all = all && h[t];
        joint += all;
    }
    r.joint = static_cast<double>(joint) / trials;
    for (std::size_t t = 0; t < trials; ++t) {
        bool all = true;
        for (auto& h : hit) all = all && h[t];
        double v = all - r.joint;
        for (std::size_t e = 0; e < hit.size(); ++e) {
            double others = 1;
            for (std::size_t j = 0; j < hit.size(); ++j)
                if (j != e) others *= r.marginals[j];
            v -= others * (hit[e][t] - r.marginals[e]);
        }
        d.add(v);
    }
    double se = std::sqrt(d.var() / trials);
    r.z = se > 0 ? (r.joint - r.product) / se : 0.0;
    r.consistent = std::abs(r.z) <= 3;
    return r;
}

struct ExcursionSpectrum {
    std::vector<std::size_t> counts;  // counts[l] = trajectories with exactly l complete excursions
    std::size_t hitting = 0;          // trajectories that reach W
    double ratio = 0, ratio_se = 0;   // geometric MLE of P[l + 1 | >= l]
    double cap_W = 0, radius_U = 0;
    double beta_proxy_constant = 0;   // ratio * radius_U^nu / cap_W
    bool too_few = false;
};

inline ExcursionSpectrum excursion_spectrum(const InterlacementSample& s, const SiteSet& W, const SiteSet& U) {
    const auto& A = *s.anchor;
    if (!is_subset(W, U)) throw std::invalid_argument("W must lie inside U");
    if (!is_subset(U, s.anchor_set)) throw std::invalid_argument("U must lie inside the sampler anchor set");
    const auto& g = *A.g;
    ExcursionSpectrum r;
    std::size_t sum = 0, sum_minus = 0;
    for (const auto& t : s.trajectories) {
        auto e = excursions(t, W, U);
        if (e.returns.empty()) continue;
        ++r.hitting;
        std::size_t l = e.complete;
        if (r.counts.size() <= l) r.counts.resize(l + 1, 0);
        ++r.counts[l];
        sum += l;
        sum_minus += l > 0 ? l - 1 : 0;
    }
    if (sum > 0) {
        r.ratio = static_cast<double>(sum_minus) / sum;
        r.ratio_se = std::sqrt(r.ratio * (1 - r.ratio) / sum);
    }
    r.too_few = sum_minus < 10;
    auto p = A.params;
    r.cap_W = killed_equilibrium(g, A.dom->sites(), W).capacity;
    r.radius_U = max_distance(g, A.center, U, p);
    r.beta_proxy_constant = r.cap_W > 0 ? r.ratio * std::pow(r.radius_U, p.nu()) / r.cap_W : 0.0;
    return r;
}

}  // namespace ri

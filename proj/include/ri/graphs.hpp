#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ri/stats.hpp"

namespace ri {

using SiteId = std::int64_t;
using SiteSet = std::vector<SiteId>;  // sorted, unique

struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void normalize(SiteSet& s) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
}
inline bool contains(const SiteSet& s, SiteId x) { return std::binary_search(s.begin(), s.end(), x); }
inline bool is_subset(const SiteSet& a, const SiteSet& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }
inline SiteSet set_union(const SiteSet& a, const SiteSet& b) {
    SiteSet r;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
    return r;
}
inline SiteSet set_difference(const SiteSet& a, const SiteSet& b) {
    SiteSet r;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
    return r;
}
inline SiteSet set_intersection(const SiteSet& a, const SiteSet& b) {
    SiteSet r;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
    return r;
}
inline std::ptrdiff_t index_of(const SiteSet& s, SiteId x) {
    auto it = std::lower_bound(s.begin(), s.end(), x);
    return (it != s.end() && *it == x) ? it - s.begin() : -1;
}

enum class MetricKind { Anisotropic, SupNorm };

struct MetricParams {
    double alpha = 2, beta = 2;
    MetricKind kind = MetricKind::Anisotropic;

    double nu() const { return alpha - beta / 2; }
    void validate() const {
        if (!(alpha > 1)) throw std::invalid_argument("alpha must exceed 1");
        if (!(beta >= 2 && beta <= alpha + 1))
            throw std::invalid_argument("beta must lie in [2, alpha + 1]");
        if (!(nu() > 0)) throw std::invalid_argument("nu = alpha - beta/2 must be positive");
    }
    // contribution of a vertical displacement to d
    double zpart(std::int64_t dz) const {
        dz = dz < 0 ? -dz : dz;
        if (kind == MetricKind::SupNorm) return static_cast<double>(dz);
        return dz == 0 ? 0.0 : std::pow(static_cast<double>(dz), 2.0 / beta);
    }
    // largest k with zpart(k) <= r
    std::int64_t dz_max(double r) const {
        if (r < 0) return -1;
        auto k = static_cast<std::int64_t>(std::floor(kind == MetricKind::SupNorm ? r : std::pow(r, beta / 2)));
        while (zpart(k + 1) <= r) ++k;
        while (k > 0 && zpart(k) > r) --k;
        return k;
    }
};

// Base graph G realized on a finite window. Lattice windows are implicit boxes
// [-w, w]^d; gasket and explicit graphs are stored in CSR form.
class BaseGraph {
public:
    enum class Kind { Lattice, Gasket, Explicit };

    static BaseGraph lattice(int d, int half_width) {
        if (d < 0 || half_width < 0) throw std::invalid_argument("lattice needs d >= 0 and half width >= 0");
        BaseGraph g;
        g.kind_ = Kind::Lattice;
        g.dim_ = d;
        g.half_ = half_width;
        g.side_ = 2 * half_width + 1;
        double n = std::pow(static_cast<double>(g.side_), d);
        if (n > 2e9) throw std::length_error("lattice window overflow");
        g.n_ = static_cast<int>(n);
        g.alpha_ = d;
        g.beta_ = 2;
        g.max_degree_ = 2 * d;
        return g;
    }

    // Level-K window of the infinite one-sided gasket with its corner at (0,0).
    // Vertices carry triangular coordinates (i, j) with i, j >= 0, i + j <= 2^K.
    static BaseGraph gasket(int level) {
        if (level < 0 || level > 12) throw std::invalid_argument("gasket level must lie in [0, 12]");
        std::vector<std::array<int, 2>> cells{{0, 0}};
        for (int k = 1; k <= level; ++k) {
            int s = 1 << (k - 1);
            std::vector<std::array<int, 2>> next;
            next.reserve(cells.size() * 3);
            for (auto off : {std::array<int, 2>{0, 0}, std::array<int, 2>{s, 0}, std::array<int, 2>{0, s}})
                for (auto c : cells) next.push_back({c[0] + off[0], c[1] + off[1]});
            cells.swap(next);
        }
        std::map<std::pair<int, int>, int> id;  // ordered by (j, i)
        for (auto c : cells)
            for (auto p : {std::pair{c[1], c[0]}, std::pair{c[1], c[0] + 1}, std::pair{c[1] + 1, c[0]}}) id.emplace(p, 0);
        BaseGraph g;
        g.kind_ = Kind::Gasket;
        g.level_ = level;
        g.n_ = static_cast<int>(id.size());
        g.pos_.resize(g.n_);
        int next_id = 0;
        for (auto& [p, v] : id) {
            v = next_id;
            g.pos_[next_id++] = {p.second, p.first};
        }
        std::vector<std::vector<int>> adj(g.n_);
        for (auto c : cells) {
            int a = id[{c[1], c[0]}], b = id[{c[1], c[0] + 1}], t = id[{c[1] + 1, c[0]}];
            for (auto [u, v] : {std::pair{a, b}, std::pair{b, t}, std::pair{t, a}}) {
                adj[u].push_back(v);
                adj[v].push_back(u);
            }
        }
        const int side = 1 << level;
        g.complete_.assign(g.n_, 1);
        g.rho_.assign(g.n_, 4.0);
        g.off_.assign(1, 0);
        for (int v = 0; v < g.n_; ++v) {
            std::sort(adj[v].begin(), adj[v].end());
            for (int u : adj[v]) {
                g.nbr_.push_back(u);
                g.wt_.push_back(1.0);
            }
            g.off_.push_back(static_cast<int>(g.nbr_.size()));
            auto [i, j] = g.pos_[v];
            if ((i == side && j == 0) || (i == 0 && j == side)) g.complete_[v] = 0;  // neighbours beyond the window
            if (i == 0 && j == 0) g.rho_[v] = 2.0;
        }
        g.alpha_ = std::log(3.0) / std::log(2.0);
        g.beta_ = std::log(5.0) / std::log(2.0);
        g.max_degree_ = 4;
        return g;
    }

    struct Edge {
        int u, v;
        double w;
    };
    // Finite weighted graph, every vertex complete. Exponents must be supplied
    // by the caller when a metric is needed.
    static BaseGraph explicit_graph(int n, const std::vector<Edge>& edges) {
        if (n <= 0) throw std::invalid_argument("explicit graph needs a vertex");
        std::vector<std::vector<std::pair<int, double>>> adj(n);
        for (auto e : edges) {
            if (e.u < 0 || e.v < 0 || e.u >= n || e.v >= n || e.u == e.v || !(e.w > 0))
                throw std::invalid_argument("bad explicit edge");
            adj[e.u].push_back({e.v, e.w});
            adj[e.v].push_back({e.u, e.w});
        }
        BaseGraph g;
        g.kind_ = Kind::Explicit;
        g.n_ = n;
        g.off_.assign(1, 0);
        g.rho_.assign(n, 0.0);
        for (int v = 0; v < n; ++v) {
            std::sort(adj[v].begin(), adj[v].end());
            for (auto [u, w] : adj[v]) {
                g.nbr_.push_back(u);
                g.wt_.push_back(w);
                g.rho_[v] += w;
            }
            g.off_.push_back(static_cast<int>(g.nbr_.size()));
            g.max_degree_ = std::max(g.max_degree_, static_cast<int>(adj[v].size()));
        }
        g.complete_.assign(n, 1);
        g.alpha_ = g.beta_ = std::nan("");
        return g;
    }

    Kind kind() const { return kind_; }
    int size() const { return n_; }
    int dim() const { return dim_; }
    int half_width() const { return half_; }
    int level() const { return level_; }
    int max_degree() const { return max_degree_; }
    double alpha() const { return alpha_; }
    double beta() const { return beta_; }

    bool complete(int y) const {
        if (kind_ != Kind::Lattice) return complete_[y] != 0;
        for (int i = 0; i < dim_; ++i) {
            int c = coord(y, i);
            if (c <= -half_ || c >= half_) return false;
        }
        return true;
    }
    // vertex measure of the infinite graph
    double rho(int y) const { return kind_ == Kind::Lattice ? 2.0 * dim_ : rho_[y]; }

    // in-window neighbours with weights
    template <class F>
    void for_each_neighbor(int y, F&& f) const {
        if (kind_ == Kind::Lattice) {
            long long stride = 1;
            for (int i = dim_ - 1; i >= 0; --i) {
                int c = static_cast<int>((y / stride) % side_) - half_;
                if (c > -half_) f(static_cast<int>(y - stride), 1.0);
                if (c < half_) f(static_cast<int>(y + stride), 1.0);
                stride *= side_;
            }
            return;
        }
        for (int k = off_[y]; k < off_[y + 1]; ++k) f(nbr_[k], wt_[k]);
    }

    // lattice coordinates
    int coord(int y, int i) const {
        long long stride = 1;
        for (int k = dim_ - 1; k > i; --k) stride *= side_;
        return static_cast<int>((y / stride) % side_) - half_;
    }
    std::vector<int> coords(int y) const {
        std::vector<int> c(dim_);
        for (int i = 0; i < dim_; ++i) c[i] = coord(y, i);
        return c;
    }
    std::optional<int> vertex_at(const std::vector<int>& c) const {
        if (kind_ != Kind::Lattice || static_cast<int>(c.size()) != dim_) return std::nullopt;
        long long id = 0;
        for (int i = 0; i < dim_; ++i) {
            if (c[i] < -half_ || c[i] > half_) return std::nullopt;
            id = id * side_ + (c[i] + half_);
        }
        return static_cast<int>(id);
    }
    // gasket triangular coordinates
    std::array<int, 2> tri(int y) const { return pos_[y]; }
    std::optional<int> gasket_vertex(int i, int j) const {
        if (kind_ != Kind::Gasket) return std::nullopt;
        auto it = std::lower_bound(pos_.begin(), pos_.end(), std::array<int, 2>{i, j},
                                   [](auto a, auto b) { return std::pair{a[1], a[0]} < std::pair{b[1], b[0]}; });
        if (it == pos_.end() || *it != std::array<int, 2>{i, j}) return std::nullopt;
        return static_cast<int>(it - pos_.begin());
    }

    // graph distance; exact on lattice boxes and on gasket windows (both are
    // geodesically convex in the infinite graph)
    int dist(int a, int b) const {
        if (a == b) return 0;
        if (kind_ == Kind::Lattice) {
            int s = 0;
            for (int i = 0; i < dim_; ++i) s += std::abs(coord(a, i) - coord(b, i));
            return s;
        }
        return (*bfs_from(a))[b];
    }
    int dist_sup(int a, int b) const {
        if (kind_ != Kind::Lattice) throw std::invalid_argument("sup-norm metric needs a lattice base");
        int s = 0;
        for (int i = 0; i < dim_; ++i) s = std::max(s, std::abs(coord(a, i) - coord(b, i)));
        return s;
    }

    // plain BFS distances from a source, uncached
    std::vector<int> bfs(int src) const {
        std::vector<int> d(n_, -1);
        std::vector<int> q{src};
        d[src] = 0;
        for (std::size_t h = 0; h < q.size(); ++h) {
            int v = q[h];
            for_each_neighbor(v, [&](int u, double) {
                if (d[u] < 0) {
                    d[u] = d[v] + 1;
                    q.push_back(u);
                }
            });
        }
        return d;
    }

    std::shared_ptr<const std::vector<int>> bfs_from(int src) const {
        std::lock_guard lk(cache_->mu);
        auto it = cache_->dist.find(src);
        if (it != cache_->dist.end()) return it->second;
        if (cache_->dist.size() >= 2048) cache_->dist.clear();
        auto p = std::make_shared<const std::vector<int>>(bfs(src));
        cache_->dist.emplace(src, p);
        return p;
    }

    // vertices within distance r, sorted
    std::vector<int> ball(int y, int r, bool sup = false) const {
        std::vector<int> out;
        if (r < 0) return out;
        if (kind_ == Kind::Lattice) {
            auto c0 = coords(y);
            std::vector<int> c(dim_);
            ball_rec(c0, c, 0, r, sup, out);
            std::sort(out.begin(), out.end());
            return out;
        }
        auto d = bfs_from(y);
        for (int v = 0; v < n_; ++v)
            if ((*d)[v] >= 0 && (*d)[v] <= r) out.push_back(v);
        return out;
    }

private:
    void ball_rec(const std::vector<int>& c0, std::vector<int>& c, int i, int budget, bool sup,
                  std::vector<int>& out) const {
        if (i == dim_) {
            auto v = vertex_at(c);
            if (!v) throw GeometryError("clipped ball: base ball leaves the lattice window");
            out.push_back(*v);
            return;
        }
        for (int k = -budget; k <= budget; ++k) {
            c[i] = c0[i] + k;
            ball_rec(c0, c, i + 1, sup ? budget : budget - std::abs(k), sup, out);
        }
    }

    struct Cache {
        std::mutex mu;
        std::unordered_map<int, std::shared_ptr<const std::vector<int>>> dist;
    };

    Kind kind_ = Kind::Lattice;
    int n_ = 0, dim_ = 0, half_ = 0, level_ = 0, max_degree_ = 0;
    long long side_ = 1;
    double alpha_ = 0, beta_ = 0;
    std::vector<int> off_, nbr_;
    std::vector<double> wt_, rho_;
    std::vector<char> complete_;
    std::vector<std::array<int, 2>> pos_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// E = G x Z on the window base x [zlo, zhi], or G alone when flat.
// Site id = base_vertex * nz + (z - zlo).
class WeightedGraph {
public:
    WeightedGraph() = default;
    WeightedGraph(std::shared_ptr<const BaseGraph> base, int zlo, int zhi)
        : base_(std::move(base)), vertical_(true), zlo_(zlo), zhi_(zhi), nz_(static_cast<std::int64_t>(zhi) - zlo + 1) {
        if (zhi < zlo) throw std::invalid_argument("empty z window");
    }
    static WeightedGraph flat(std::shared_ptr<const BaseGraph> base) {
        WeightedGraph g(std::move(base), 0, 0);
        g.vertical_ = false;
        return g;
    }

    const BaseGraph& base() const { return *base_; }
    std::shared_ptr<const BaseGraph> base_ptr() const { return base_; }
    bool vertical() const { return vertical_; }
    int zlo() const { return zlo_; }
    int zhi() const { return zhi_; }
    std::int64_t vertex_count() const { return static_cast<std::int64_t>(base_->size()) * nz_; }
    int max_degree() const { return base_->max_degree() + (vertical_ ? 2 : 0); }

    SiteId site(int y, int z) const { return static_cast<SiteId>(y) * nz_ + (z - zlo_); }
    int base_of(SiteId x) const { return static_cast<int>(x / nz_); }
    int z_of(SiteId x) const { return static_cast<int>(x % nz_) + zlo_; }
    bool in_window(int y, int z) const { return y >= 0 && y < base_->size() && z >= zlo_ && z <= zhi_; }
    bool valid(SiteId x) const { return x >= 0 && x < vertex_count(); }

    // all neighbours of the infinite graph lie in the window
    bool complete(SiteId x) const {
        int z = z_of(x);
        return base_->complete(base_of(x)) && (!vertical_ || (z > zlo_ && z < zhi_));
    }
    double rho(SiteId x) const { return base_->rho(base_of(x)) + (vertical_ ? 2.0 : 0.0); }

    // in-window neighbours: base neighbours first, then z-1, z+1
    template <class F>
    void for_each_neighbor(SiteId x, F&& f) const {
        int y = base_of(x), z = z_of(x);
        base_->for_each_neighbor(y, [&](int u, double w) { f(site(u, z), w); });
        if (vertical_) {
            if (z > zlo_) f(x - 1, 1.0);
            if (z < zhi_) f(x + 1, 1.0);
        }
    }
    std::vector<std::pair<SiteId, double>> neighbors(SiteId x) const {
        std::vector<std::pair<SiteId, double>> v;
        for_each_neighbor(x, [&](SiteId u, double w) { v.push_back({u, w}); });
        return v;
    }
    bool adjacent(SiteId a, SiteId b) const {
        bool hit = false;
        for_each_neighbor(a, [&](SiteId u, double) { hit |= (u == b); });
        return hit;
    }

    MetricParams default_params() const { return {base_->alpha(), base_->beta(), MetricKind::Anisotropic}; }

private:
    std::shared_ptr<const BaseGraph> base_;
    bool vertical_ = true;
    int zlo_ = 0, zhi_ = 0;
    std::int64_t nz_ = 1;
};

struct GraphModel {
    enum class Base { ZLattice, Gasket };
    Base base = Base::ZLattice;
    int d = 2;
    int level = 4;
    int half_width = 32;  // lattice window [-w, w]^d
    bool product = true;
    int zlo = -32, zhi = 32;
};

inline WeightedGraph build_graph(const GraphModel& m) {
    std::shared_ptr<const BaseGraph> b;
    if (m.base == GraphModel::Base::ZLattice)
        b = std::make_shared<const BaseGraph>(BaseGraph::lattice(m.d, m.half_width));
    else if (m.base == GraphModel::Base::Gasket)
        b = std::make_shared<const BaseGraph>(BaseGraph::gasket(m.level));
    else
        throw std::invalid_argument("unsupported model kind");
    if (!m.product) return WeightedGraph::flat(b);
    double n = static_cast<double>(b->size()) * (static_cast<double>(m.zhi) - m.zlo + 1);
    if (n > 4e18) throw std::length_error("extent overflow");
    return WeightedGraph(b, m.zlo, m.zhi);
}

inline int base_distance(const WeightedGraph& g, int a, int b, const MetricParams& p) {
    return p.kind == MetricKind::SupNorm ? g.base().dist_sup(a, b) : g.base().dist(a, b);
}

inline double metric_d(const WeightedGraph& g, SiteId x, SiteId x2, const MetricParams& p) {
    if (!g.valid(x) || !g.valid(x2)) throw std::invalid_argument("site not in graph");
    if (x == x2) return 0.0;
    double dg = base_distance(g, g.base_of(x), g.base_of(x2), p);
    return std::max(dg, p.zpart(static_cast<std::int64_t>(g.z_of(x)) - g.z_of(x2)));
}

// closed ball; every site must have its full neighbourhood in the window
inline SiteSet ball(const WeightedGraph& g, SiteId center, double r, const MetricParams& p) {
    if (!g.valid(center)) throw std::invalid_argument("center not in graph");
    if (r < 0) return {};
    int y = g.base_of(center), z = g.z_of(center);
    auto rb = static_cast<int>(std::floor(r + 1e-12));
    auto base = g.base().ball(y, rb, p.kind == MetricKind::SupNorm);
    std::int64_t k = g.vertical() ? p.dz_max(r) : 0;
    if (g.vertical() && (z - k <= g.zlo() || z + k >= g.zhi()))
        throw GeometryError("clipped ball: radius " + std::to_string(r) + " leaves the z window");
    SiteSet out;
    out.reserve(base.size() * (2 * k + 1));
    for (int v : base) {
        if (!g.base().complete(v)) throw GeometryError("clipped ball: radius " + std::to_string(r) + " reaches the window margin");
        for (std::int64_t dz = -k; dz <= k; ++dz) out.push_back(g.site(v, static_cast<int>(z + dz)));
    }
    return out;  // sorted: base ids ascending, z ascending
}

inline bool ball_fits(const WeightedGraph& g, SiteId center, double r, const MetricParams& p) {
    try {
        int y = g.base_of(center), z = g.z_of(center);
        std::int64_t k = g.vertical() ? p.dz_max(r) : 0;
        if (g.vertical() && (z - k <= g.zlo() || z + k >= g.zhi())) return false;
        for (int v : g.base().ball(y, static_cast<int>(std::floor(r + 1e-12)), p.kind == MetricKind::SupNorm))
            if (!g.base().complete(v)) return false;
        return true;
    } catch (const GeometryError&) {
        return false;
    }
}

enum class BoundaryKind { Outer, Interior, Closure };

inline SiteSet boundary(const WeightedGraph& g, const SiteSet& U, BoundaryKind kind) {
    if (U.empty()) throw std::invalid_argument("boundary of an empty set");
    SiteSet out;
    for (SiteId x : U) {
        if (!g.complete(x)) throw GeometryError("margin violation: set touches the window edge");
        bool edge = false;
        g.for_each_neighbor(x, [&](SiteId v, double) {
            if (!contains(U, v)) {
                edge = true;
                if (kind != BoundaryKind::Interior) out.push_back(v);
            }
        });
        if (edge && kind == BoundaryKind::Interior) out.push_back(x);
    }
    if (kind == BoundaryKind::Closure) out.insert(out.end(), U.begin(), U.end());
    normalize(out);
    return out;
}

// interior boundary of B(x, r) through the product structure:
// B_G(y,r) x {z +- k} together with bd_int B_G(y,r) x [z-k, z+k], k = dz_max(r)
inline SiteSet ball_interior_boundary(const WeightedGraph& g, SiteId center, double r, const MetricParams& p) {
    if (!g.vertical()) throw std::invalid_argument("product identity needs a product graph");
    int y = g.base_of(center), z = g.z_of(center);
    auto rb = static_cast<int>(std::floor(r + 1e-12));
    bool sup = p.kind == MetricKind::SupNorm;
    auto base = g.base().ball(y, rb, sup);
    std::int64_t k = p.dz_max(r);
    if (z - k <= g.zlo() || z + k >= g.zhi()) throw GeometryError("clipped ball: leaves the z window");
    SiteSet out;
    for (int v : base) {
        if (!g.base().complete(v)) throw GeometryError("clipped ball: reaches the window margin");
        bool edge = false;
        g.base().for_each_neighbor(v, [&](int u, double) {
            if (base_distance(g, y, u, p) > rb) edge = true;
        });
        if (edge) {
            for (std::int64_t dz = -k; dz <= k; ++dz) out.push_back(g.site(v, static_cast<int>(z + dz)));
        } else {
            out.push_back(g.site(v, static_cast<int>(z - k)));
            if (k > 0) out.push_back(g.site(v, static_cast<int>(z + k)));
        }
    }
    normalize(out);
    return out;
}

// rho(B(x, r)) without materializing the ball
inline double ball_volume(const WeightedGraph& g, SiteId center, double r, const MetricParams& p) {
    auto base = g.base().ball(g.base_of(center), static_cast<int>(std::floor(r + 1e-12)), p.kind == MetricKind::SupNorm);
    std::int64_t k = g.vertical() ? p.dz_max(r) : 0;
    double v = 0;
    for (int y : base) v += (g.base().rho(y) + (g.vertical() ? 2.0 : 0.0)) * static_cast<double>(2 * k + 1);
    return v;
}

inline LinearFit volume_exponent(const WeightedGraph& g, SiteId center, const std::vector<double>& radii,
                                 const MetricParams& p) {
    if (radii.size() < 2) throw std::invalid_argument("volume probe needs at least two radii");
    std::vector<double> v;
    for (double r : radii) {
        if (!ball_fits(g, center, r, p)) throw GeometryError("clipped ball in volume probe");
        v.push_back(ball_volume(g, center, r, p));
    }
    return loglog_fit(radii, v);
}

// log rho^G(B_G(y, R)) against log R
inline LinearFit ahlfors_probe(const BaseGraph& b, int y, const std::vector<int>& radii) {
    std::vector<double> x, v;
    for (int r : radii) {
        auto ball = b.ball(y, r);
        double s = 0;
        for (int u : ball) {
            if (!b.complete(u)) throw GeometryError("clipped base ball in Ahlfors probe");
            s += b.rho(u);
        }
        x.push_back(r);
        v.push_back(s);
    }
    return loglog_fit(x, v);
}

// {y(n)} x [zlo, zhi], with d_G(y(n), y(m)) = |n - m| on the listed indices
struct HalfPlane {
    std::vector<int> ray;
    int zlo = 0, zhi = 0;
    std::unordered_map<int, int> index;  // base vertex -> n

    int length() const { return static_cast<int>(ray.size()) - 1; }
    std::optional<std::pair<int, int>> coords(const WeightedGraph& g, SiteId x) const {
        auto it = index.find(g.base_of(x));
        int z = g.z_of(x);
        if (it == index.end() || z < zlo || z > zhi) return std::nullopt;
        return std::pair{it->second, z};
    }
    bool contains(const WeightedGraph& g, SiteId x) const { return coords(g, x).has_value(); }
    SiteId site(const WeightedGraph& g, int n, int z) const { return g.site(ray.at(n), z); }
};

inline HalfPlane half_plane(const WeightedGraph& g, int base_vertex, int length, int zlo, int zhi) {
    if (length < 0 || zhi < zlo) throw std::invalid_argument("bad half-plane extent");
    if (!g.vertical() || zlo < g.zlo() || zhi > g.zhi()) throw GeometryError("half-plane z window exceeds graph window");
    const BaseGraph& b = g.base();
    HalfPlane h;
    h.zlo = zlo;
    h.zhi = zhi;
    if (b.kind() == BaseGraph::Kind::Lattice) {
        if (b.dim() < 1) throw std::invalid_argument("axis ray needs d >= 1");
        auto c = b.coords(base_vertex);
        for (int n = 0; n <= length; ++n) {
            auto cc = c;
            cc[0] += n;
            auto v = b.vertex_at(cc);
            if (!v) throw GeometryError("ray leaves the lattice window");
            h.ray.push_back(*v);
        }
    } else if (b.kind() == BaseGraph::Kind::Gasket) {
        auto [i, j] = b.tri(base_vertex);
        if (j != 0) throw GeometryError("gasket ray must start on the bottom side");
        for (int n = 0; n <= length; ++n) {
            auto v = b.gasket_vertex(i + n, 0);
            if (!v) throw GeometryError("ray leaves the gasket window");
            h.ray.push_back(*v);
        }
    } else {
        throw std::invalid_argument("model has no canonical geodesic ray");
    }
    for (int n = 0; n <= length; ++n) {
        auto d = b.kind() == BaseGraph::Kind::Lattice ? std::vector<int>{} : b.bfs(h.ray[n]);
        for (int m = 0; m <= length; ++m) {
            int dd = d.empty() ? b.dist(h.ray[n], h.ray[m]) : d[h.ray[m]];
            if (dd != std::abs(n - m)) throw GeometryError("ray fails geodesic verification");
        }
        h.index.emplace(h.ray[n], n);
    }
    return h;
}

inline std::vector<SiteId> star_neighbors(const WeightedGraph& g, SiteId x, const HalfPlane& P) {
    auto c = P.coords(g, x);
    if (!c) throw std::invalid_argument("site not in half-plane");
    auto [n, z] = *c;
    std::vector<SiteId> out;
    for (int dn = -1; dn <= 1; ++dn)
        for (int dz = -1; dz <= 1; ++dz) {
            if (dn == 0 && dz == 0) continue;
            int nn = n + dn, zz = z + dz;
            if (nn < 0 || nn > P.length() || zz < P.zlo || zz > P.zhi) continue;
            out.push_back(P.site(g, nn, zz));
        }
    return out;
}

// sites of S that have a plane neighbour (nearest-neighbour in P) outside S
inline SiteSet plane_interior_boundary(const WeightedGraph& g, const SiteSet& S, const HalfPlane& P) {
    SiteSet out;
    for (SiteId x : S) {
        auto c = P.coords(g, x);
        if (!c) continue;
        auto [n, z] = *c;
        const int dn[4] = {-1, 1, 0, 0}, dz[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            int nn = n + dn[k], zz = z + dz[k];
            if (nn < 0 || nn > P.length() || zz < P.zlo || zz > P.zhi) {
                // the plane continues beyond its window except at n < 0
                if (nn >= 0) throw GeometryError("plane set touches the half-plane window edge");
                continue;
            }
            if (!contains(S, P.site(g, nn, zz))) {
                out.push_back(x);
                break;
            }
        }
    }
    return out;
}

inline SiteSet plane_sites(const WeightedGraph& g, const SiteSet& S, const HalfPlane& P) {
    SiteSet out;
    for (SiteId x : S)
        if (P.contains(g, x)) out.push_back(x);
    return out;
}

}  // namespace ri

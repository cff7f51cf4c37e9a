#pragma once
// Coordinate-based reference implementations for Z^2 x Z windows.

#include <array>
#include <map>
#include <random>
#include <set>

#include "ri/percolation.hpp"

namespace ri::oracle {

inline WeightedGraph z3(int w, int zext) {
    return WeightedGraph(std::make_shared<const BaseGraph>(BaseGraph::lattice(2, w)), -zext, zext);
}
inline SiteId lat(const WeightedGraph& g, int a, int b, int z) { return g.site(*g.base().vertex_at({a, b}), z); }

using C3 = std::array<int, 3>;
inline int dist0(const C3& c) { return std::max(std::abs(c[0]) + std::abs(c[1]), std::abs(c[2])); }
inline int dist(const C3& a, const C3& b) { return dist0({a[0] - b[0], a[1] - b[1], a[2] - b[2]}); }
inline const int N6[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};

inline std::vector<C3> ball3(int r) {
    std::vector<C3> out;
    for (int a = -r; a <= r; ++a)
        for (int b = -r; b <= r; ++b)
            for (int z = -r; z <= r; ++z)
                if (dist0({a, b, z}) <= r) out.push_back({a, b, z});
    return out;
}

// A at the origin by coordinate search
inline bool oracle_A(const WeightedGraph& g, const Configuration& c, int L) {
    std::map<C3, int> seen;
    std::vector<C3> stack;
    for (const auto& p : ball3(L))
        if (!c.at(lat(g, p[0], p[1], p[2]))) seen[p] = 1, stack.push_back(p);
    while (!stack.empty()) {
        C3 p = stack.back();
        stack.pop_back();
        for (auto& d : N6) {
            C3 q{p[0] + d[0], p[1] + d[1], p[2] + d[2]};
            if (dist0(q) > 2 * L) return true;  // p lies on the interior shell
        }
        for (auto& d : N6) {
            C3 q{p[0] + d[0], p[1] + d[1], p[2] + d[2]};
            if (seen.count(q) || c.at(lat(g, q[0], q[1], q[2]))) continue;
            seen[q] = 1;
            stack.push_back(q);
        }
    }
    return false;
}

// B for x at plane coordinates (n0, 0) by star-path search on the square patch
inline bool oracle_B(const WeightedGraph& g, const HalfPlane& P, const Configuration& c, int n0, int L) {
    auto occ = [&](int n, int z) { return c.at(P.site(g, n, z)) == 1; };
    std::set<std::pair<int, int>> seen;
    std::vector<std::pair<int, int>> stack;
    for (int dn = -L; dn <= L; ++dn)
        for (int z = -L; z <= L; ++z)
            if (occ(n0 + dn, z)) seen.insert({n0 + dn, z}), stack.push_back({n0 + dn, z});
    while (!stack.empty()) {
        auto [n, z] = stack.back();
        stack.pop_back();
        if (std::abs(n - n0) == 2 * L || std::abs(z) == 2 * L) return true;
        for (int dn = -1; dn <= 1; ++dn)
            for (int dz = -1; dz <= 1; ++dz) {
                int m = n + dn, w = z + dz;
                if (std::max(std::abs(m - n0), std::abs(w)) > 2 * L || seen.count({m, w}) || !occ(m, w)) continue;
                seen.insert({m, w});
                stack.push_back({m, w});
            }
    }
    return false;
}

// S at the origin straight from the witness definition
inline bool oracle_S(const WeightedGraph& g, const Configuration& c, int L) {
    auto vac = [&](const C3& p) { return dist0(p) <= 5 * L && !c.at(lat(g, p[0], p[1], p[2])); };
    auto in_closure = [&](const C3& p) {
        if (dist0(p) <= 3 * L) return true;
        for (auto& d : N6)
            if (dist0({p[0] + d[0], p[1] + d[1], p[2] + d[2]}) <= 3 * L) return true;
        return false;
    };
    auto flood = [&](const C3& s, auto keep) {
        std::map<C3, int> seen{{s, 1}};
        std::vector<C3> stack{s}, out;
        while (!stack.empty()) {
            C3 p = stack.back();
            stack.pop_back();
            out.push_back(p);
            for (auto& d : N6) {
                C3 q{p[0] + d[0], p[1] + d[1], p[2] + d[2]};
                if (!seen.count(q) && keep(q)) seen[q] = 1, stack.push_back(q);
            }
        }
        return out;
    };
    std::map<C3, int> parent;
    int next = 0;
    for (const auto& p : ball3(5 * L))
        if (vac(p) && !parent.count(p)) {
            for (const auto& q : flood(p, vac)) parent[q] = next;
            ++next;
        }
    std::set<int> good;
    std::set<C3> done;
    for (const auto& p : ball3(5 * L)) {
        if (!vac(p) || !in_closure(p) || done.count(p)) continue;
        auto piece = flood(p, [&](const C3& q) { return vac(q) && in_closure(q); });
        int diam = 0;
        for (const auto& a : piece) {
            done.insert(a);
            for (const auto& b : piece) diam = std::max(diam, dist(a, b));
        }
        if (diam >= L) good.insert(parent[p]);
    }
    return good.size() >= 2;
}

inline Configuration random_config(const SiteSet& w, double p, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(p);
    Configuration c = Configuration::constant(w, 0);
    for (auto& s : c.sigma) s = coin(rng);
    return c;
}

}  // namespace ri::oracle

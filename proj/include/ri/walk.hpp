#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ri/graphs.hpp"
#include "ri/rng.hpp"

namespace ri {

enum class StopReason { ExitedDomain, HitTarget, StepCap };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::ExitedDomain: return "exited-domain";
        case StopReason::HitTarget: return "hit-target";
        default: return "step-cap";
    }
}

struct Trajectory {
    std::vector<SiteId> sites;
    StopReason stop_reason = StopReason::StepCap;
    std::optional<double> label;
};

struct StopSpec {
    enum class Mode { Entrance, Hitting, Exit, StepCap };
    Mode mode = Mode::StepCap;
    SiteSet target;
    std::int64_t step_cap = 10'000'000;
};

inline SiteId walk_step(const WeightedGraph& g, SiteId x, Philox& rng) {
    if (!g.complete(x)) throw GeometryError("walk reached the window margin");
    double u = rng.uniform() * g.rho(x), acc = 0;
    SiteId pick = -1, last = -1;
    g.for_each_neighbor(x, [&](SiteId v, double w) {
        last = v;
        acc += w;
        if (pick < 0 && u < acc) pick = v;
    });
    return pick < 0 ? last : pick;  // guards u == rho(x) rounding
}

// Generic driver: stops at the first n >= first_index with stop(X_n) true.
template <class Pred>
Trajectory run_walk_until(const WeightedGraph& g, SiteId start, Pred&& stop, int first_index, StopReason on_stop,
                          std::int64_t step_cap, Philox& rng) {
    Trajectory t;
    t.sites.push_back(start);
    if (first_index == 0 && stop(start)) {
        t.stop_reason = on_stop;
        return t;
    }
    SiteId x = start;
    for (std::int64_t n = 1; n <= step_cap; ++n) {
        x = walk_step(g, x, rng);
        t.sites.push_back(x);
        if (stop(x)) {
            t.stop_reason = on_stop;
            return t;
        }
    }
    t.stop_reason = StopReason::StepCap;
    return t;
}

inline Trajectory run_walk(const WeightedGraph& g, SiteId start, const StopSpec& s, Philox& rng) {
    using M = StopSpec::Mode;
    if (s.mode != M::StepCap && s.target.empty()) throw std::invalid_argument("stop spec needs a nonempty target");
    auto in = [&](SiteId x) { return contains(s.target, x); };
    switch (s.mode) {
        case M::Entrance: return run_walk_until(g, start, in, 0, StopReason::HitTarget, s.step_cap, rng);
        case M::Hitting: return run_walk_until(g, start, in, 1, StopReason::HitTarget, s.step_cap, rng);
        case M::Exit:
            return run_walk_until(g, start, [&](SiteId x) { return !in(x); }, 0, StopReason::ExitedDomain, s.step_cap, rng);
        default: return run_walk_until(g, start, [](SiteId) { return false; }, 1, StopReason::StepCap, s.step_cap, rng);
    }
}

// restriction of p to the domain, rows indexed by the sorted domain
inline Eigen::MatrixXd transition_operator(const WeightedGraph& g, const SiteSet& domain, std::size_t cap = 4000) {
    if (domain.size() > cap) throw std::length_error("domain too large for the dense oracle");
    const auto n = static_cast<Eigen::Index>(domain.size());
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        SiteId x = domain[i];
        if (!g.complete(x)) throw GeometryError("oracle domain touches the window margin");
        double r = g.rho(x);
        g.for_each_neighbor(x, [&](SiteId v, double w) {
            auto j = index_of(domain, v);
            if (j >= 0) P(i, j) += w / r;
        });
    }
    return P;
}

struct ExcursionDecomposition {
    std::vector<std::size_t> returns, departures;  // R_k, D_k as trajectory indices
    std::size_t complete = 0;                     // number of k with D_k recorded
    bool last_incomplete = false;                 // an R_k without its D_k
};

template <class InW, class InU>
ExcursionDecomposition excursions_by(const std::vector<SiteId>& sites, InW&& inW, InU&& inU) {
    ExcursionDecomposition e;
    std::size_t i = 0;
    const std::size_t n = sites.size();
    while (true) {
        while (i < n && !inW(sites[i])) ++i;
        if (i >= n) break;
        e.returns.push_back(i);
        while (i < n && inU(sites[i])) ++i;
        if (i >= n) {
            e.last_incomplete = true;
            break;
        }
        e.departures.push_back(i);
        ++e.complete;
    }
    return e;
}

inline ExcursionDecomposition excursions(const Trajectory& t, const SiteSet& W, const SiteSet& U) {
    if (!is_subset(W, U)) throw std::invalid_argument("excursions need W inside U");
    return excursions_by(t.sites, [&](SiteId x) { return contains(W, x); }, [&](SiteId x) { return contains(U, x); });
}

}  // namespace ri

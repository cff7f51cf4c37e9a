#pragma once
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ri/graphs.hpp"
#include "ri/walk.hpp"

namespace ri {

struct SolverOptions {
    std::size_t dense_cap = 4000;
    double tol = 1e-12;  // relative residual
    long max_iter = 200000;
    bool allow_factored = true;
};

struct SolverStats {
    std::string method;
    long iterations = 0;
    double residual = 0;
    double symmetry_error = 0;
    double seconds = 0;
};

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace detail

// U with a local CSR copy of the graph; nbr = -1 marks a neighbour outside U.
class LocalDomain {
public:
    LocalDomain() = default;
    LocalDomain(const WeightedGraph& g, SiteSet U) : g_(&g), sites_(std::move(U)) {
        const auto n = sites_.size();
        off_.reserve(n + 1);
        off_.push_back(0);
        rho_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            SiteId x = sites_[i];
            if (!g.complete(x)) throw GeometryError("domain touches the window margin");
            rho_[i] = g.rho(x);
            g.for_each_neighbor(x, [&](SiteId v, double w) {
                std::int64_t j;
                if (v == x + 1 && i + 1 < n && sites_[i + 1] == v)
                    j = static_cast<std::int64_t>(i + 1);
                else if (v == x - 1 && i > 0 && sites_[i - 1] == v)
                    j = static_cast<std::int64_t>(i - 1);
                else
                    j = index_of(sites_, v);
                nbr_.push_back(static_cast<std::int32_t>(j));
                if (w != 1.0) unit_ = false;
                w_.push_back(w);
            });
            off_.push_back(nbr_.size());
        }
        if (n > 0x7fffffff) throw std::length_error("domain too large");
        if (unit_) w_.clear();
    }

    const WeightedGraph& graph() const { return *g_; }
    const SiteSet& sites() const { return sites_; }
    std::size_t size() const { return sites_.size(); }
    std::int64_t local(SiteId x) const { return index_of(sites_, x); }
    std::size_t row_begin(std::size_t i) const { return off_[i]; }
    std::size_t row_end(std::size_t i) const { return off_[i + 1]; }
    std::int32_t nbr(std::size_t k) const { return nbr_[k]; }
    double weight(std::size_t k) const { return unit_ ? 1.0 : w_[k]; }
    double rho(std::size_t i) const { return rho_[i]; }
    bool unit_weights() const { return unit_; }

    // y = (D - A)_U x restricted to free nodes; fixed entries of x must be 0
    void apply(const std::vector<double>& x, std::vector<double>& y, const std::vector<char>* fixed) const {
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) {
            if (fixed && (*fixed)[i]) {
                y[i] = 0;
                continue;
            }
            double s = rho_[i] * x[i];
            if (unit_) {
                for (std::size_t k = off_[i]; k < off_[i + 1]; ++k)
                    if (nbr_[k] >= 0) s -= x[nbr_[k]];
            } else {
                for (std::size_t k = off_[i]; k < off_[i + 1]; ++k)
                    if (nbr_[k] >= 0) s -= w_[k] * x[nbr_[k]];
            }
            y[i] = s;
        }
    }

private:
    const WeightedGraph* g_ = nullptr;
    SiteSet sites_;
    std::vector<std::size_t> off_;
    std::vector<std::int32_t> nbr_;
    std::vector<double> w_, rho_;
    bool unit_ = true;
};

struct CgReport {
    long iterations = 0;
    double rel_residual = 0;
};

// Jacobi-preconditioned CG for (D - A)_U x = b on the free nodes. Fixed nodes
// carry x = 0; their data must already be folded into b.
inline CgReport cg_solve(const LocalDomain& D, const std::vector<char>* fixed, const std::vector<double>& b,
                         std::vector<double>& x, double tol, long max_iter) {
    const std::size_t n = D.size();
    x.resize(n, 0.0);
    std::vector<double> r(n), z(n), p(n), Ap(n);
    double bnorm = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool f = fixed && (*fixed)[i];
        if (f) x[i] = 0;
        bnorm += f ? 0 : b[i] * b[i];
    }
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0) {
        std::fill(x.begin(), x.end(), 0.0);
        return {};
    }
    D.apply(x, Ap, fixed);
    double rz = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool f = fixed && (*fixed)[i];
        r[i] = f ? 0 : b[i] - Ap[i];
        z[i] = r[i] / D.rho(i);
        p[i] = z[i];
        rz += r[i] * z[i];
    }
    CgReport rep;
    for (long it = 1; it <= max_iter; ++it) {
        D.apply(p, Ap, fixed);
        double pAp = 0;
        for (std::size_t i = 0; i < n; ++i) pAp += p[i] * Ap[i];
        if (!(pAp > 0)) throw NumericalError("CG breakdown: operator not positive definite");
        double a = rz / pAp, rr = 0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += a * p[i];
            r[i] -= a * Ap[i];
            rr += r[i] * r[i];
        }
        rep.iterations = it;
        rep.rel_residual = std::sqrt(rr) / bnorm;
        if (rep.rel_residual <= tol) return rep;
        double rz2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = r[i] / D.rho(i);
            rz2 += r[i] * z[i];
        }
        double beta = rz2 / rz;
        rz = rz2;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw NumericalError("CG did not converge: relative residual " + std::to_string(rep.rel_residual));
}

// U = A x [z1, z2] with A a set of base vertices
struct ProductBox {
    std::vector<int> base;
    int z1 = 0, z2 = 0;
    int m() const { return z2 - z1 + 1; }
};

inline std::optional<ProductBox> product_box(const WeightedGraph& g, const SiteSet& U) {
    if (U.empty() || !g.vertical()) return std::nullopt;
    ProductBox b;
    b.z1 = g.z_of(U.front());
    std::size_t i = 0;
    int m = -1;
    while (i < U.size()) {
        int y = g.base_of(U[i]);
        std::size_t j = i;
        while (j < U.size() && g.base_of(U[j]) == y) ++j;
        int len = static_cast<int>(j - i);
        if (g.z_of(U[i]) != b.z1 || (m >= 0 && len != m) || g.z_of(U[j - 1]) - b.z1 + 1 != len) return std::nullopt;
        m = len;
        b.base.push_back(y);
        i = j;
    }
    b.z2 = b.z1 + m - 1;
    return b;
}

// Exact killed Green function on a product box. With D = D_G + 2 the operator
// splits as L_A (x) I + I (x) L_Z; L_Z has the Dirichlet sine eigenbasis, so
// g = sum_k s_k(z) s_k(z') [(L_A + mu_k)^{-1}]_{y y'}.
class FactoredGreen {
public:
    FactoredGreen(const WeightedGraph& g, ProductBox box) : g_(&g), box_(std::move(box)) {
        const BaseGraph& b = g.base();
        const int na = static_cast<int>(box_.base.size());
        const int m = box_.m();
        local_.reserve(na);
        for (int a = 0; a < na; ++a) local_.emplace(box_.base[a], a);
        std::vector<Eigen::Triplet<double>> trip;
        for (int a = 0; a < na; ++a) {
            int y = box_.base[a];
            if (!b.complete(y)) throw GeometryError("domain touches the window margin");
            trip.emplace_back(a, a, b.rho(y));
            b.for_each_neighbor(y, [&](int u, double w) {
                auto it = local_.find(u);
                if (it != local_.end()) trip.emplace_back(a, it->second, -w);
            });
        }
        LA_.resize(na, na);
        LA_.setFromTriplets(trip.begin(), trip.end());
        S_.resize(m, m);
        mu_.resize(m);
        const double pi = std::numbers::pi, c = std::sqrt(2.0 / (m + 1));
        for (int k = 0; k < m; ++k) {
            mu_[k] = 2.0 - 2.0 * std::cos(pi * (k + 1) / (m + 1));
            for (int j = 0; j < m; ++j) S_(j, k) = c * std::sin(pi * (j + 1.0) * (k + 1.0) / (m + 1));
        }
    }

    const ProductBox& box() const { return box_; }

    // g_U(X_i, T_j)
    Eigen::MatrixXd block(const std::vector<SiteId>& X, const std::vector<SiteId>& T) const {
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(X.size()), static_cast<Eigen::Index>(T.size()));
        if (X.empty() || T.empty()) return G;
        std::vector<int> xa, xj, ta, tj;
        for (SiteId x : X) locate(x, xa, xj);
        for (SiteId t : T) locate(t, ta, tj);
        std::map<int, int> uniq;  // base-local -> rhs column
        for (int a : ta) uniq.emplace(a, static_cast<int>(uniq.size()));
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(LA_.rows(), static_cast<Eigen::Index>(uniq.size()));
        for (auto [a, c] : uniq) rhs(a, c) = 1.0;
        for_each_mode([&](int k, const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>& solver) {
            Eigen::MatrixXd V = solver.solve(rhs);
            for (std::size_t j = 0; j < T.size(); ++j) {
                int c = uniq.at(ta[j]);
                double st = S_(tj[j], k);
                for (std::size_t i = 0; i < X.size(); ++i) G(i, j) += S_(xj[i], k) * st * V(xa[i], c);
            }
        });
        return G;
    }

    // sum_t c_t g_U(., t) over U in sorted order
    std::vector<double> potential(const std::vector<SiteId>& T, const std::vector<double>& coef) const {
        const Eigen::Index na = LA_.rows(), m = box_.m();
        std::vector<int> ta, tj;
        for (SiteId t : T) locate(t, ta, tj);
        Eigen::MatrixXd W(na, m);
        for_each_mode([&](int k, const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>& solver) {
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(na);
            for (std::size_t j = 0; j < T.size(); ++j) rhs(ta[j]) += coef[j] * S_(tj[j], k);
            W.col(k) = solver.solve(rhs);
        });
        Eigen::MatrixXd F = W * S_.transpose();  // F(a, j)
        std::vector<double> out(static_cast<std::size_t>(na * m));
        for (Eigen::Index a = 0; a < na; ++a)
            for (Eigen::Index j = 0; j < m; ++j) out[a * m + j] = F(a, j);
        return out;
    }

private:
    void locate(SiteId x, std::vector<int>& a, std::vector<int>& j) const {
        auto it = local_.find(g_->base_of(x));
        int z = g_->z_of(x);
        if (it == local_.end() || z < box_.z1 || z > box_.z2) throw std::invalid_argument("site outside the Green domain");
        a.push_back(it->second);
        j.push_back(z - box_.z1);
    }

    template <class F>
    void for_each_mode(F&& f) const {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
        solver.analyzePattern(LA_);
        Eigen::SparseMatrix<double> I(LA_.rows(), LA_.cols());
        I.setIdentity();
        for (int k = 0; k < box_.m(); ++k) {
            Eigen::SparseMatrix<double> M = LA_ + mu_[k] * I;
            solver.factorize(M);
            if (solver.info() != Eigen::Success) throw NumericalError("factorization failed");
            f(k, solver);
        }
    }

    const WeightedGraph* g_;
    ProductBox box_;
    std::unordered_map<int, int> local_;
    Eigen::SparseMatrix<double> LA_;
    Eigen::MatrixXd S_;
    std::vector<double> mu_;
};

// g_U = (D - A)_U^{-1}. The graph must outlive the object.
class KilledGreen {
public:
    enum class Mode { Dense, Factored, Iterative };

    KilledGreen(const WeightedGraph& g, SiteSet U, SolverOptions opt = {}) : g_(&g), U_(std::move(U)), opt_(opt) {
        auto t0 = std::chrono::steady_clock::now();
        if (U_.empty()) throw std::invalid_argument("empty Green domain");
        for (SiteId x : U_)
            if (!g.complete(x)) throw GeometryError("domain touches the window margin");
        std::optional<ProductBox> box;
        bool small = U_.size() <= opt.dense_cap;
        if (opt.allow_factored && (!small || U_.size() > 512)) box = product_box(g, U_);
        if (small && !box) {
            mode_ = Mode::Dense;
            auto P = transition_operator(g, U_, opt.dense_cap);
            const auto n = P.rows();
            Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - P;
            Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, n);
            for (Eigen::Index i = 0; i < n; ++i) rhs(i, i) = 1.0 / g.rho(U_[i]);
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
            dense_ = std::make_shared<Eigen::MatrixXd>(lu.solve(rhs));
            const auto& G = *dense_;
            stats_.residual = (M * G - rhs).cwiseAbs().maxCoeff() / rhs.cwiseAbs().maxCoeff();
            stats_.symmetry_error = (G - G.transpose()).cwiseAbs().maxCoeff() / G.cwiseAbs().maxCoeff();
            stats_.method = "dense-lu";
            if (stats_.symmetry_error > 1e-8) throw NumericalError("killed Green function failed the symmetry check");
        } else if (box) {
            mode_ = Mode::Factored;
            fac_ = std::make_shared<FactoredGreen>(g, *box);
            stats_.method = "factored-sine";
        } else {
            mode_ = Mode::Iterative;
            dom_ = std::make_shared<LocalDomain>(g, U_);
            stats_.method = "cg";
        }
        stats_.seconds = detail::seconds_since(t0);
    }

    Mode mode() const { return mode_; }
    const SiteSet& domain() const { return U_; }
    const WeightedGraph& graph() const { return *g_; }
    const SolverStats& stats() const { return stats_; }

    Eigen::MatrixXd block(const std::vector<SiteId>& X, const std::vector<SiteId>& T) const {
        Eigen::MatrixXd G(static_cast<Eigen::Index>(X.size()), static_cast<Eigen::Index>(T.size()));
        if (mode_ == Mode::Factored) {
            std::vector<SiteId> xi, ti;
            std::vector<std::size_t> xr, tr;
            for (std::size_t i = 0; i < X.size(); ++i)
                if (contains(U_, X[i])) xi.push_back(X[i]), xr.push_back(i);
            for (std::size_t j = 0; j < T.size(); ++j)
                if (contains(U_, T[j])) ti.push_back(T[j]), tr.push_back(j);
            G.setZero();
            auto B = fac_->block(xi, ti);
            for (std::size_t i = 0; i < xi.size(); ++i)
                for (std::size_t j = 0; j < ti.size(); ++j) G(xr[i], tr[j]) = B(i, j);
            return G;
        }
        for (std::size_t j = 0; j < T.size(); ++j) {
            auto tj = index_of(U_, T[j]);
            if (mode_ == Mode::Iterative && tj >= 0) {
                auto col = potential({T[j]}, {1.0});
                for (std::size_t i = 0; i < X.size(); ++i) {
                    auto xi = index_of(U_, X[i]);
                    G(i, j) = xi >= 0 ? col[xi] : 0.0;
                }
                continue;
            }
            for (std::size_t i = 0; i < X.size(); ++i) {
                auto xi = index_of(U_, X[i]);
                G(i, j) = (xi >= 0 && tj >= 0) ? (*dense_)(xi, tj) : 0.0;
            }
        }
        return G;
    }

    double operator()(SiteId x, SiteId y) const {
        auto xi = index_of(U_, x), yi = index_of(U_, y);
        if (xi < 0 || yi < 0) return 0.0;
        if (mode_ == Mode::Dense) return (*dense_)(xi, yi);
        std::lock_guard lk(cache_->mu);
        auto it = cache_->cols.find(y);
        if (it == cache_->cols.end()) it = cache_->cols.emplace(y, potential({y}, {1.0})).first;
        return it->second[xi];
    }

    // f = sum_t c_t g_U(., t) over the domain, i.e. the solution of (D - A)_U f = sum_t c_t 1_t
    std::vector<double> potential(const std::vector<SiteId>& T, const std::vector<double>& coef) const {
        if (T.size() != coef.size()) throw std::invalid_argument("potential: size mismatch");
        if (mode_ == Mode::Factored) return fac_->potential(T, coef);
        std::vector<double> b(U_.size(), 0.0);
        for (std::size_t j = 0; j < T.size(); ++j) {
            auto tj = index_of(U_, T[j]);
            if (tj < 0) throw std::invalid_argument("source outside the Green domain");
            b[tj] += coef[j];
        }
        if (mode_ == Mode::Dense) {
            Eigen::Map<Eigen::VectorXd> bv(b.data(), static_cast<Eigen::Index>(b.size()));
            // G = (D - A)^{-1}, so f = G b
            Eigen::VectorXd f = (*dense_) * bv;
            return {f.data(), f.data() + f.size()};
        }
        std::vector<double> x;
        auto rep = cg_solve(*dom_, nullptr, b, x, opt_.tol, opt_.max_iter);
        std::lock_guard lk(cache_->mu);
        stats_.iterations += rep.iterations;
        stats_.residual = std::max(stats_.residual, rep.rel_residual);
        return x;
    }

private:
    struct Cache {
        std::mutex mu;
        std::map<SiteId, std::vector<double>> cols;
    };
    const WeightedGraph* g_;
    SiteSet U_;
    SolverOptions opt_;
    Mode mode_ = Mode::Dense;
    std::shared_ptr<Eigen::MatrixXd> dense_;
    std::shared_ptr<FactoredGreen> fac_;
    std::shared_ptr<LocalDomain> dom_;
    mutable SolverStats stats_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// ---- killed equilibrium measures ----

struct KilledEquilibrium {
    SiteSet K;
    std::vector<double> e;   // over K
    double capacity = 0;
    SolverStats stats;
};

// Green route: e = G_KK^{-1} 1
inline KilledEquilibrium equilibrium_green(const KilledGreen& G, const SiteSet& K) {
    auto t0 = std::chrono::steady_clock::now();
    KilledEquilibrium r;
    r.K = K;
    if (K.empty()) return r;
    if (!is_subset(K, G.domain())) throw GeometryError("K leaves the Green domain");
    auto GKK = G.block(K, K);
    Eigen::VectorXd e = GKK.ldlt().solve(Eigen::VectorXd::Ones(GKK.rows()));
    r.e.assign(e.data(), e.data() + e.size());
    for (double v : r.e) {
        if (v < -1e-9 * e.cwiseAbs().maxCoeff()) throw NumericalError("negative equilibrium mass");
        r.capacity += v;
    }
    r.stats = G.stats();
    r.stats.method += "+green-route";
    r.stats.residual = (GKK * e - Eigen::VectorXd::Ones(GKK.rows())).cwiseAbs().maxCoeff();
    r.stats.seconds = detail::seconds_since(t0);
    return r;
}

struct HittingField {
    std::shared_ptr<const LocalDomain> dom;
    std::vector<double> h;      // P_x[H_K < T_U] over U, 1 on K
    std::vector<char> inK;      // over U
    KilledEquilibrium eq;
};

// Dirichlet route: solve h = P[H_K < T_U], then e(x) = rho(x) - sum_y rho_xy h(y) on K
inline HittingField hitting_field(const WeightedGraph& g, const SiteSet& U, const SiteSet& K, const SolverOptions& opt = {}) {
    auto t0 = std::chrono::steady_clock::now();
    if (!is_subset(K, U)) throw GeometryError("K leaves the killing domain");
    HittingField f;
    f.dom = std::make_shared<LocalDomain>(g, U);
    const LocalDomain& D = *f.dom;
    const std::size_t n = D.size();
    f.inK.assign(n, 0);
    for (SiteId k : K) f.inK[D.local(k)] = 1;
    std::vector<double> b(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (f.inK[i]) continue;
        for (std::size_t k = D.row_begin(i); k < D.row_end(i); ++k)
            if (D.nbr(k) >= 0 && f.inK[D.nbr(k)]) b[i] += D.weight(k);
    }
    CgReport rep;
    if (K.size() < n) rep = cg_solve(D, &f.inK, b, f.h, opt.tol, opt.max_iter);
    else f.h.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (f.inK[i]) f.h[i] = 1.0;
    f.eq.K = K;
    for (SiteId x : K) {
        auto i = static_cast<std::size_t>(D.local(x));
        double s = D.rho(i);
        for (std::size_t k = D.row_begin(i); k < D.row_end(i); ++k)
            if (D.nbr(k) >= 0) s -= D.weight(k) * f.h[D.nbr(k)];
        f.eq.e.push_back(std::max(0.0, s));
        f.eq.capacity += f.eq.e.back();
    }
    f.eq.stats = {"cg-dirichlet", rep.iterations, rep.rel_residual, 0.0, detail::seconds_since(t0)};
    return f;
}

inline double pair_capacity(double gx, double gy, double gxy) { return (gx + gy - 2 * gxy) / (gx * gy - gxy * gxy); }

// ---- infinite-volume estimates with brackets ----

struct EquilibriumSolution {
    SiteSet K;
    std::vector<double> e;
    double capacity = 0;           // killed capacity at the truncation radius
    double truncation_radius = 0;
    double companion_radius = 0;
    double companion_capacity = 0;
    Interval error_bracket;        // [extrapolated lower, killed upper]
    double extrapolated = 0;
    SolverStats stats;
};

inline double max_distance(const WeightedGraph& g, SiteId c, const SiteSet& K, const MetricParams& p) {
    double r = 0;
    for (SiteId k : K) r = std::max(r, metric_d(g, c, k, p));
    return r;
}

// Remaining truncation error after the larger radius, assuming it decays like
// R^{-nu}; the radii ratio is q.
inline double richardson(double at_large, double at_small, double q, double nu) {
    return (at_large - at_small) / (std::pow(q, nu) - 1);
}

inline KilledEquilibrium killed_equilibrium(const WeightedGraph& g, const SiteSet& U, const SiteSet& K,
                                            const SolverOptions& opt = {}) {
    if (K.size() <= 400) {
        KilledGreen G(g, U, opt);
        if (G.mode() != KilledGreen::Mode::Iterative) return equilibrium_green(G, K);
    }
    return hitting_field(g, U, K, opt).eq;
}

inline EquilibriumSolution equilibrium_measure(const WeightedGraph& g, const SiteSet& K, SiteId center, double R,
                                               const MetricParams& p, const SolverOptions& opt = {}) {
    EquilibriumSolution s;
    s.K = K;
    s.truncation_radius = R;
    if (K.empty()) {
        s.error_bracket = {0, 0};
        return s;
    }
    double rK = max_distance(g, center, K, p);
    if (rK > R - 1) throw GeometryError("K touches the truncation shell");
    double r1 = std::max(R / 2, rK + 1);
    if (r1 >= R) throw GeometryError("truncation radius leaves no room for a companion radius");
    auto fine = killed_equilibrium(g, ball(g, center, R, p), K, opt);
    auto coarse = killed_equilibrium(g, ball(g, center, r1, p), K, opt);
    s.e = fine.e;
    s.capacity = fine.capacity;
    s.companion_radius = r1;
    s.companion_capacity = coarse.capacity;
    // 1/cap_U(K) approaches 1/cap(K) with an R^{-nu} correction, as g_U does
    double corr = richardson(1 / fine.capacity, 1 / coarse.capacity, R / r1, p.nu());
    s.extrapolated = 1 / (1 / fine.capacity + corr);
    s.error_bracket = {1 / (1 / fine.capacity + 2 * corr), fine.capacity};
    s.stats = fine.stats;
    return s;
}

struct GreenEstimate {
    double value = 0, error = 0, radius = 0;
    Interval bracket;
    std::vector<double> killed;  // per radius
};

// g(x, t) for several targets from one killed column per radius
inline std::vector<GreenEstimate> green_estimate_many(const WeightedGraph& g, SiteId x, const std::vector<SiteId>& targets,
                                                      const std::vector<double>& radii, const MetricParams& p,
                                                      const SolverOptions& opt = {}) {
    if (radii.size() < 2) throw std::invalid_argument("green_estimate needs at least two radii");
    for (std::size_t i = 1; i < radii.size(); ++i)
        if (!(radii[i] > radii[i - 1])) throw std::invalid_argument("radii must increase");
    for (SiteId t : targets)
        if (metric_d(g, x, t, p) > radii[0] - 1) throw GeometryError("target too close to the smallest truncation shell");
    std::vector<GreenEstimate> out(targets.size());
    for (double R : radii) {
        KilledGreen G(g, ball(g, x, R, p), opt);
        auto B = G.block({x}, targets);
        for (std::size_t j = 0; j < targets.size(); ++j) out[j].killed.push_back(B(0, j));
    }
    const std::size_t k = radii.size() - 1;
    for (auto& e : out) {
        double q = radii[k] / radii[k - 1];
        double corr = richardson(e.killed[k], e.killed[k - 1], q, p.nu());
        if (corr < -1e-12 * e.killed[k]) throw NumericalError("killed Green values decrease with the domain");
        corr = std::max(corr, 0.0);
        if (k >= 2) {
            double prev = richardson(e.killed[k - 1], e.killed[k - 2], radii[k - 1] / radii[k - 2], p.nu());
            if (corr > prev) throw GeometryError("non-shrinking bracket: window too small");
        }
        e.radius = radii[k];
        e.value = e.killed[k] + corr;
        e.error = corr;
        e.bracket = {e.killed[k], e.killed[k] + 2 * corr};
        if (e.error > e.value) throw GeometryError("non-shrinking bracket: window too small");
    }
    return out;
}

inline GreenEstimate green_estimate(const WeightedGraph& g, SiteId x, SiteId x2, const std::vector<double>& radii,
                                   const MetricParams& p, const SolverOptions& opt = {}) {
    return green_estimate_many(g, x, {x2}, radii, p, opt).front();
}

struct HittingResult {
    double direct = 0, via_identity = 0;
    Interval bracket;
};

inline HittingResult hitting_prob(const WeightedGraph& g, SiteId x, const SiteSet& K, SiteId center, double R,
                                  const MetricParams& p, const SolverOptions& opt = {}) {
    if (K.empty()) throw std::invalid_argument("hitting an empty set");
    if (contains(K, x)) return {1.0, 1.0, {1.0, 1.0}};
    double rK = std::max(max_distance(g, center, K, p), metric_d(g, center, x, p));
    if (rK > R - 1) throw GeometryError("x or K touches the truncation shell");
    double r1 = std::max(R / 2, rK + 1);
    if (r1 >= R) throw GeometryError("truncation radius leaves no room for a companion radius");
    auto U = ball(g, center, R, p);
    auto f = hitting_field(g, U, K, opt);
    HittingResult r;
    r.direct = f.h[f.dom->local(x)];
    KilledGreen G(g, U, opt);
    auto col = G.block({x}, K);
    for (std::size_t i = 0; i < K.size(); ++i) r.via_identity += col(0, i) * f.eq.e[i];
    if (std::abs(r.direct - r.via_identity) > 1e-8 * std::max(1.0, r.direct))
        throw NumericalError("hitting probability routes disagree beyond solver tolerance");
    auto fc = hitting_field(g, ball(g, center, r1, p), K, opt);
    double coarse = fc.h[fc.dom->local(x)];
    double corr = std::max(0.0, richardson(r.direct, coarse, R / r1, p.nu()));
    r.bracket = {r.direct, std::min(1.0, r.direct + 2 * corr)};
    return r;
}

struct CapacityProbe {
    LinearFit fit;
    std::vector<double> L;
    std::vector<EquilibriumSolution> caps;
};

inline CapacityProbe capacity_ball_probe(const WeightedGraph& g, SiteId center, const std::vector<double>& Ls,
                                         const MetricParams& p, double factor = 4, const SolverOptions& opt = {}) {
    if (Ls.size() < 3) throw std::invalid_argument("capacity probe needs at least three radii");
    CapacityProbe pr;
    std::vector<double> v;
    for (double L : Ls) {
        auto s = equilibrium_measure(g, ball(g, center, L, p), center, factor * L, p, opt);
        pr.L.push_back(L);
        v.push_back(s.extrapolated);
        pr.caps.push_back(std::move(s));
    }
    pr.fit = loglog_fit(pr.L, v);
    return pr;
}

// ---- harmonic fields ----

struct BoundaryData {
    enum class Kind { Constant, Indicator, Function };
    Kind kind = Kind::Constant;
    double value = 1.0;
    SiteId site = -1;
    std::function<double(SiteId)> f;
    double operator()(SiteId v) const {
        switch (kind) {
            case Kind::Constant: return value;
            case Kind::Indicator: return v == site ? 1.0 : 0.0;
            default: return f(v);
        }
    }
};

struct HarmonicField {
    std::shared_ptr<const LocalDomain> dom;
    std::vector<double> values;  // over U
    double residual = 0;         // max |P f - f| relative to max |f|
};

// max over U of |sum_y p(x,y) f(y) - f(x)| / max|f|, f given on U and by data outside
inline double harmonicity_residual(const LocalDomain& D, const std::vector<double>& f, const BoundaryData& data) {
    const WeightedGraph& g = D.graph();
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < D.size(); ++i) {
        double s = 0;
        std::size_t k = D.row_begin(i);
        g.for_each_neighbor(D.sites()[i], [&](SiteId v, double w) {
            auto j = D.nbr(k++);
            s += w * (j >= 0 ? f[j] : data(v));
        });
        worst = std::max(worst, std::abs(s / D.rho(i) - f[i]));
        scale = std::max(scale, std::abs(f[i]));
    }
    return scale > 0 ? worst / scale : worst;
}

inline HarmonicField dirichlet_field(const WeightedGraph& g, const SiteSet& U, const BoundaryData& data,
                                     const SolverOptions& opt = {}) {
    HarmonicField h;
    h.dom = std::make_shared<LocalDomain>(g, U);
    const LocalDomain& D = *h.dom;
    std::vector<double> b(D.size(), 0.0);
    bool indicator_adjacent = data.kind != BoundaryData::Kind::Indicator;
    for (std::size_t i = 0; i < D.size(); ++i) {
        std::size_t k = D.row_begin(i);
        g.for_each_neighbor(D.sites()[i], [&](SiteId v, double w) {
            if (D.nbr(k++) < 0) {
                b[i] += w * data(v);
                indicator_adjacent |= v == data.site;
            }
        });
    }
    if (!indicator_adjacent) throw std::invalid_argument("indicator site is not on the outer boundary");
    cg_solve(D, nullptr, b, h.values, opt.tol, opt.max_iter);
    h.residual = harmonicity_residual(D, h.values, data);
    if (h.residual > 1e-9) throw NumericalError("field fails the harmonicity residual check");
    return h;
}

struct HarnackResult {
    double ratio = 1, max = 0, min = 0, residual = 0;
};

inline HarnackResult harnack_ratio(const WeightedGraph& g, SiteId x, double L, double c0, const BoundaryData& data,
                                   const MetricParams& p, const SolverOptions& opt = {}) {
    if (!(c0 > 1)) throw std::invalid_argument("c0 must exceed 1");
    auto h = dirichlet_field(g, ball(g, x, c0 * L, p), data, opt);
    HarnackResult r;
    r.residual = h.residual;
    r.max = -INFINITY;
    r.min = INFINITY;
    for (SiteId s : ball(g, x, L, p)) {
        double v = h.values[h.dom->local(s)];
        if (v < 0) throw NumericalError("harmonic field is negative");
        r.max = std::max(r.max, v);
        r.min = std::min(r.min, v);
    }
    r.ratio = r.min > 0 ? r.max / r.min : INFINITY;
    return r;
}

// Harmonic measure of W seen from V \ W: column w holds P_x[H_W < T_V, X_{H_W} = w]
// over x in V \ W. By the last step before H_W it equals sum_{y ~ w} g_{V\W}(x, y) rho_{yw}.
struct EntranceTable {
    SiteSet outside;                       // V \ W
    std::vector<std::vector<double>> law;  // [w][x]
    std::vector<double> at(SiteId x, const SiteSet& W) const {
        std::vector<double> out(law.size(), 0.0);
        auto wi = index_of(W, x);
        if (wi >= 0) {
            out[wi] = 1.0;
            return out;
        }
        auto xi = index_of(outside, x);
        if (xi >= 0)
            for (std::size_t j = 0; j < law.size(); ++j) out[j] = law[j][xi];
        return out;
    }
};

inline EntranceTable entrance_table(const WeightedGraph& g, const SiteSet& V, const SiteSet& W,
                                    const SolverOptions& opt = {}) {
    if (!is_subset(W, V)) throw GeometryError("W must lie inside V");
    EntranceTable t;
    t.outside = set_difference(V, W);
    if (t.outside.empty()) {
        t.law.assign(W.size(), {});
        return t;
    }
    KilledGreen G(g, t.outside, opt);
    for (SiteId w : W) {
        std::vector<SiteId> src;
        std::vector<double> c;
        g.for_each_neighbor(w, [&](SiteId y, double wt) {
            if (contains(t.outside, y)) src.push_back(y), c.push_back(wt);
        });
        t.law.push_back(src.empty() ? std::vector<double>(t.outside.size(), 0.0) : G.potential(src, c));
    }
    return t;
}

struct EntranceSpread {
    double min_ratio = INFINITY, max_ratio = 0, spread = 0;
    std::size_t starts = 0;
};

// ratio P_x[H_W < T_V, X_H = w] / e_W(w) over x in the given starts and w in supp e_W
inline EntranceSpread entrance_law_spread(const WeightedGraph& g, const SiteSet& V, const SiteSet& W,
                                          const std::vector<SiteId>& starts, const SolverOptions& opt = {}) {
    auto eq = killed_equilibrium(g, V, W, opt);
    auto table = entrance_table(g, V, W, opt);
    EntranceSpread s;
    for (SiteId x : starts) {
        auto law = table.at(x, W);
        for (std::size_t i = 0; i < W.size(); ++i) {
            if (eq.e[i] <= 1e-14) continue;
            double r = law[i] / eq.e[i];
            s.min_ratio = std::min(s.min_ratio, r);
            s.max_ratio = std::max(s.max_ratio, r);
        }
        ++s.starts;
    }
    s.spread = s.max_ratio / s.min_ratio;
    return s;
}

}  // namespace ri

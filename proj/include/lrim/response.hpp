#pragma once

// d/dalpha int psi d mu_alpha as the series -sum_k int psi L^k Y with
// Y = (X N rho)', evaluated in three ways, plus the finite-difference oracle.

#include <lrim/funcgrid.hpp>
#include <lrim/observables.hpp>
#include <lrim/transfer.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrim {

enum class ResponseMethod { series_backward, series_forward, susceptibility };

inline const char* to_string(ResponseMethod m) {
    switch (m) {
    case ResponseMethod::series_backward: return "series_backward";
    case ResponseMethod::series_forward: return "series_forward";
    default: return "susceptibility";
    }
}

struct ResponseResult {
    double alpha = 0.0;
    std::string observable_id;
    double value = 0.0;
    std::vector<double> terms;        // t_k = int psi L^k Y (series) or s_k (susceptibility)
    std::vector<double> term_errors;  // per-term quadrature noise (forward, susceptibility)
    int k_used = 0;
    double tail_estimate = 0.0;
    double decay_exponent = 0.0;      // fitted r in |t_k| ~ k^{-r}
    bool decaying = true;
    ResponseMethod method = ResponseMethod::series_backward;
    double z = 1.0;
};

namespace detail {

struct TailFit {
    double tail = 0.0;
    double exponent = 0.0;
    bool decaying = true;
};

inline void least_squares(const std::vector<double>& xs, const std::vector<double>& ys, double& slope,
                          double& intercept, double& rss) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    slope = sxx > 0 ? sxy / sxx : 0.0;
    intercept = my - slope * mx;
    rss = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - intercept - slope * xs[i];
        rss += r * r;
    }
}

/// Fits the last third of |t_k| (k >= 1) by a power law and by a geometric
/// law, keeps the better fit, and returns the summed remainder past the end.
inline TailFit fit_tail(const std::vector<double>& t, double floor = 0.0) {
    TailFit fit;
    const std::size_t K = t.size();
    if (K < 6) {
        fit.tail = std::numeric_limits<double>::infinity();
        return fit;
    }
    std::vector<double> lk, k, lt;
    for (std::size_t i = std::max<std::size_t>(1, 2 * K / 3); i < K; ++i) {
        const double a = std::abs(t[i]);
        if (a <= floor || a == 0.0) continue;
        lk.push_back(std::log(static_cast<double>(i)));
        k.push_back(static_cast<double>(i));
        lt.push_back(std::log(a));
    }
    if (lt.size() < 3) {
        fit.tail = 0.0;  // everything in the window is below the noise floor
        fit.exponent = std::numeric_limits<double>::infinity();
        return fit;
    }
    double sp, ip, rp, sg, ig, rg;
    least_squares(lk, lt, sp, ip, rp);
    least_squares(k, lt, sg, ig, rg);
    fit.exponent = -sp;
    const double last = static_cast<double>(K) - 0.5;
    if (rg < rp && sg < 0.0) {
        const double q = std::exp(sg);
        fit.tail = std::exp(ig + sg * static_cast<double>(K)) / (1.0 - q);
    } else if (-sp > 1.0) {
        fit.tail = std::exp(ip) * std::pow(last, 1.0 + sp) / (-sp - 1.0);
    } else {
        fit.tail = std::numeric_limits<double>::infinity();
        fit.decaying = false;
    }
    return fit;
}

/// Quadrature points for pulling observables back along orbits: every mesh
/// cell is split into equal subcells, about `target` in total, spread
/// proportionally to length, with the midpoint of each subcell as node.
struct OrbitPoints {
    std::vector<double> x, h;
};

inline constexpr int noise_groups = 8;

/// Every cell gets a multiple of noise_groups subcells, so the interleaved
/// groups j mod noise_groups are each a midpoint rule on a coarser partition.
/// With `jitter`, nodes move to a seeded random spot inside their subcell;
/// this keeps doubling-map orbits (alpha = 0) off dyadic rationals, which
/// floating point would otherwise collapse onto 0.
inline OrbitPoints orbit_points(const Mesh& mesh, std::size_t target, bool jitter = false) {
    OrbitPoints pts;
    const auto& nodes = mesh.nodes();
    pts.x.reserve(target + noise_groups * nodes.size());
    pts.h.reserve(target + noise_groups * nodes.size());
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    for (std::size_t c = 0; c + 1 < nodes.size(); ++c) {
        const double a = nodes[c], b = nodes[c + 1];
        const auto blocks = std::max<long long>(1, std::llround((b - a) * static_cast<double>(target) / noise_groups));
        const auto m = static_cast<std::size_t>(blocks) * noise_groups;
        const double h = (b - a) / static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double off = jitter ? unit(rng) : 0.0;
            pts.x.push_back(a + (static_cast<double>(j) + 0.5 + off) * h);
            pts.h.push_back(h);
        }
    }
    return pts;
}

/// Mean and standard error of the interleaved group estimates.
inline std::pair<double, double> grouped_estimate(const double (&g)[noise_groups]) {
    double mean = 0;
    for (double v : g) mean += v;
    mean /= noise_groups;
    double var = 0;
    for (double v : g) var += (v - mean) * (v - mean);
    var /= (noise_groups - 1);
    return {mean, std::sqrt(var / noise_groups)};
}

} // namespace detail

/// Y = (X N rho)' = X' N rho + X (N rho)', exponent 0.
inline GridFunction response_source(const TransferOperator& op, const DensityRecord& d) {
    if (!d.converged) throw std::runtime_error("response_source: density record is not converged");
    if (!(d.params == op.params())) throw std::invalid_argument("response_source: density is for a different alpha");
    const auto nr = op.apply_N(d.density);
    const auto n0 = nr.nodal();
    const auto n1 = nodal_derivative(nr, 1);
    const auto& F = op.fields();
    std::vector<double> y(n0.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = F.dX[i] * n0[i] + F.X[i] * n1[i];
    return GridFunction(op.mesh_ptr(), std::move(y), 0.0);
}

/// X N rho at the nodes, exponent 0; its derivative is Y.
inline GridFunction response_potential(const TransferOperator& op, const DensityRecord& d) {
    const auto n0 = op.apply_N(d.density).nodal();
    std::vector<double> w(n0.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = op.fields().X[i] * n0[i];
    return GridFunction(op.mesh_ptr(), std::move(w), 0.0);
}

struct SeriesOptions {
    int max_terms = 2000;
    int min_terms = 20;
    double tol = 1e-10;                  // stop once the fitted tail is below this
    std::size_t points = std::size_t{1} << 22;  // forward / susceptibility quadrature size
    double resolution_limit = 0.25;      // susceptibility: stop when max (T^k)' h exceeds this
};

/// -sum_k int psi L^k Y, pushing Y forward with the grid operator.
inline ResponseResult response_series(const TransferOperator& op, const DensityRecord& d, const Observable& psi,
                                      const SeriesOptions& opt = {}) {
    if (opt.max_terms < 1) throw std::invalid_argument("response_series: need at least one term");
    ResponseResult r;
    r.alpha = op.params().alpha();
    r.observable_id = psi.id;
    r.method = ResponseMethod::series_backward;
    GridFunction y = response_source(op, d);
    const auto W = observable_weights(psi, op.mesh(), 0.0);
    const GridFunction rho = d.density;
    auto dot = [&](const GridFunction& f) {
        double s = 0;
        for (std::size_t i = 0; i < W.size(); ++i) s += W[i] * f.values()[i];
        return s;
    };
    double scale = 0;
    for (int k = 0; k < opt.max_terms; ++k) {
        // The exact iterates have zero mass; discard what the discrete L leaks.
        y.axpy(-integrate(y), rho);
        const double t = dot(y);
        r.terms.push_back(t);
        scale = std::max(scale, std::abs(t));
        if (k + 1 >= opt.min_terms && (k + 1) % 10 == 0) {
            const auto fit = detail::fit_tail(r.terms, 1e-15 * scale);
            if (fit.tail < opt.tol) break;
        }
        y = op.apply_L(y);
    }
    const auto fit = detail::fit_tail(r.terms, 1e-15 * scale);
    r.k_used = static_cast<int>(r.terms.size());
    r.tail_estimate = fit.tail;
    r.decay_exponent = fit.exponent;
    r.decaying = fit.decaying;
    r.value = -std::accumulate(r.terms.begin(), r.terms.end(), 0.0);
    return r;
}

/// -sum_k int (psi o T^k) Y dx, pulling psi back along orbits of fine
/// quadrature points. Per-term errors come from 8 interleaved sub-rules.
inline ResponseResult response_series_forward(const TransferOperator& op, const DensityRecord& d,
                                              const Observable& psi, int K, const SeriesOptions& opt = {}) {
    if (K < 1) throw std::invalid_argument("response_series_forward: need at least one term");
    ResponseResult r;
    r.alpha = op.params().alpha();
    r.observable_id = psi.id;
    r.method = ResponseMethod::series_forward;
    const GridFunction y = response_source(op, d);
    auto pts = detail::orbit_points(op.mesh(), opt.points, op.params().alpha() == 0.0);
    const std::size_t n = pts.x.size();
    std::vector<double> w(n);
    double mass = 0;
    for (std::size_t j = 0; j < n; ++j) {
        w[j] = pts.h[j] * evaluate(y, pts.x[j]);
        mass += w[j];
    }
    for (std::size_t j = 0; j < n; ++j) w[j] -= mass * pts.h[j];
    const MapParams& p = op.params();
    // At alpha = 0 both branches are exact in binary, so orbits run out of
    // mantissa bits after ~50 steps; a 1e-15 kick per step keeps them generic.
    const bool kick = p.alpha() == 0.0;
    std::mt19937_64 rng(0xd1ce);
    std::uniform_real_distribution<double> tiny(-1e-15, 1e-15);
    for (int k = 0; k < K; ++k) {
        double g[detail::noise_groups] = {};
        for (std::size_t j = 0; j < n; ++j) g[j % detail::noise_groups] += w[j] * psi(pts.x[j]);
        for (double& v : g) v *= detail::noise_groups;
        const auto [mean, se] = detail::grouped_estimate(g);
        r.terms.push_back(mean);
        r.term_errors.push_back(se);
        if (k + 1 < K) {
            for (double& x : pts.x) {
                x = forward(p, x);
                if (kick) x = std::clamp(x + tiny(rng), 0.0, 1.0);
            }
        }
    }
    const auto fit = detail::fit_tail(r.terms);
    r.k_used = K;
    r.tail_estimate = fit.tail;
    r.decay_exponent = fit.exponent;
    r.decaying = fit.decaying;
    r.value = -std::accumulate(r.terms.begin(), r.terms.end(), 0.0);
    return r;
}

enum class SusceptibilityMethod {
    branch_sum,  // int psi' Q^k W dy on the grid, Q f = f o g + f((y+1)/2)
    orbit        // chain rule (T^k)' along orbits of quadrature points
};

inline const char* to_string(SusceptibilityMethod m) {
    return m == SusceptibilityMethod::branch_sum ? "branch_sum" : "orbit";
}

/// Psi(z) = sum_k z^k int (psi o T^k)' W dx with W = X N rho.
///
/// Only circle-periodic C^1 observables qualify: otherwise psi o T^k jumps
/// at the preimages of 1/2 and the integration by parts behind
/// Psi(1) = response fails.
///
/// branch_sum: substituting y = T^k x on each branch of T^k turns a term
/// into int psi'(y) (Q^k W)(y) dy, with Q the branch sum without Jacobian.
/// Q doubles constants and psi' integrates them to zero, so each iterate is
/// recentred to Lebesgue mean zero.
///
/// orbit: (psi o T^k)' = psi'(T^k x) (T^k)'(x) on fine quadrature points.
/// The integrand oscillates with amplitude (T^k)', so terms stop once the
/// interleaved-rule noise exceeds 5% of the term or (T^k)' h passes the
/// resolution limit.
inline ResponseResult susceptibility(const TransferOperator& op, const DensityRecord& d, const Observable& psi,
                                     double z, int K, const SeriesOptions& opt = {},
                                     SusceptibilityMethod method = SusceptibilityMethod::branch_sum) {
    if (!(std::abs(z) <= 1.0)) throw std::domain_error("susceptibility: |z| must be <= 1");
    if (!psi.differentiable() || !psi.periodic) {
        throw std::invalid_argument("susceptibility needs a C^1 observable with psi(0) = psi(1); got " + psi.id);
    }
    if (K < 1) throw std::invalid_argument("susceptibility: need at least one term");
    ResponseResult r;
    r.alpha = op.params().alpha();
    r.observable_id = psi.id;
    r.method = ResponseMethod::susceptibility;
    r.z = z;
    const GridFunction pot = response_potential(op, d);
    const MapParams& p = op.params();
    double zk = 1.0;

    if (method == SusceptibilityMethod::branch_sum) {
        Observable dpsi{psi.id + "'", psi.derivative, {}, {}, false};
        const auto Wd = observable_weights(dpsi, op.mesh(), 0.0);
        // Q = (first-branch matrix at s = 0) / g' + second-branch matrix * 2.
        SparseMatrix Q = op.second_branch_matrix(0.0) * 2.0;
        {
            SparseMatrix N = op.first_branch_matrix(0.0);
            for (Eigen::Index i = 0; i < N.outerSize(); ++i) {
                const double inv = 1.0 / op.inverse_slopes()[static_cast<std::size_t>(i)];
                for (SparseMatrix::InnerIterator it(N, i); it; ++it) it.valueRef() *= inv;
            }
            Q += N;
        }
        Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(pot.values().data(), static_cast<Eigen::Index>(pot.size()));
        const auto& w = op.mesh().quadrature_weights(0.0);
        const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
        const Eigen::Map<const Eigen::VectorXd> wd(Wd.data(), static_cast<Eigen::Index>(Wd.size()));
        // Q preserves f(1) - f(0), which is zero for W but not for its grid
        // image; remove that part along the cumulative density R, Q R = R + c.
        const GridFunction cdf = antiderivative(d.density);
        const Eigen::Map<const Eigen::VectorXd> R(cdf.values().data(), static_cast<Eigen::Index>(cdf.size()));
        const Eigen::Index last = f.size() - 1;
        double scale = 0;
        for (int k = 0; k < K; ++k) {
            f -= ((f[last] - f[0]) / (R[last] - R[0])) * R;
            f.array() -= wv.dot(f);
            const double t = zk * wd.dot(f);
            r.terms.push_back(t);
            scale = std::max(scale, std::abs(t));
            zk *= z;
            if (k + 1 >= opt.min_terms && (k + 1) % 10 == 0) {
                if (detail::fit_tail(r.terms, 1e-15 * scale).tail < opt.tol) break;
            }
            f = Q * f;
        }
        const auto fit = detail::fit_tail(r.terms, 1e-15 * scale);
        r.tail_estimate = fit.tail;
        r.decay_exponent = fit.exponent;
        r.decaying = fit.decaying;
    } else {
        auto pts = detail::orbit_points(op.mesh(), opt.points, p.alpha() == 0.0);
        const std::size_t n = pts.x.size();
        std::vector<double> w(n), D(n, 1.0);
        for (std::size_t j = 0; j < n; ++j) w[j] = pts.h[j] * evaluate(pot, pts.x[j]);
        for (int k = 0; k < K; ++k) {
            double worst = 0;
            for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, D[j] * pts.h[j]);
            if (worst > opt.resolution_limit) break;
            double g[detail::noise_groups] = {};
            for (std::size_t j = 0; j < n; ++j) g[j % detail::noise_groups] += w[j] * psi.derivative(pts.x[j]) * D[j];
            for (double& v : g) v *= detail::noise_groups;
            const auto [mean, se] = detail::grouped_estimate(g);
            if (k > 0 && se > 0.05 * std::abs(mean)) break;
            r.terms.push_back(zk * mean);
            r.term_errors.push_back(std::abs(zk) * se);
            zk *= z;
            for (std::size_t j = 0; j < n; ++j) {
                D[j] *= forward_deriv(p, pts.x[j], 1);
                pts.x[j] = forward(p, pts.x[j]);
            }
        }
        const auto fit = detail::fit_tail(r.terms);
        r.tail_estimate = fit.tail;
        r.decay_exponent = fit.exponent;
        r.decaying = fit.decaying;
    }
    r.k_used = static_cast<int>(r.terms.size());
    r.value = std::accumulate(r.terms.begin(), r.terms.end(), 0.0);
    return r;
}

struct FiniteDifferenceResult {
    double eps = 0.0;
    double value = 0.0;       // quotient at eps
    double value_half = 0.0;  // quotient at eps / 2
    double richardson = 0.0;  // extrapolated from the pair
    bool one_sided = false;
};

/// int psi d mu at parameter a, from a direct density solve on `mesh`.
inline double expectation(const MapParams& p, const MeshPtr& mesh, const Observable& psi, double tol = 1e-11) {
    const auto d = compute_density(p, mesh, tol, 0, DensityMethod::direct);
    if (!d.converged) throw std::runtime_error("expectation: density solve did not reach tolerance");
    return pair(psi, d.density);
}

/// (E(a+eps) - E(a-eps)) / (2 eps) with E(a) = int psi d mu_a, and the same
/// at eps/2. One-sided (E(a+eps) - E(a)) / eps when a - eps < 0.
inline FiniteDifferenceResult finite_difference_response(const MapParams& p, const Observable& psi, double eps,
                                                         const MeshPtr& mesh, double tol = 1e-11) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_response: eps must be positive");
    const double a = p.alpha();
    if (!(a + eps < 1.0)) throw std::domain_error("finite_difference_response: alpha + eps must stay below 1");
    FiniteDifferenceResult r;
    r.eps = eps;
    r.one_sided = a - eps < 0.0;
    auto E = [&](double b) { return expectation(MapParams(b), mesh, psi, tol); };
    if (r.one_sided) {
        const double e0 = E(a);
        r.value = (E(a + eps) - e0) / eps;
        r.value_half = (E(a + eps / 2) - e0) / (eps / 2);
        r.richardson = 2.0 * r.value_half - r.value;
    } else {
        r.value = (E(a + eps) - E(a - eps)) / (2 * eps);
        r.value_half = (E(a + eps / 2) - E(a - eps / 2)) / eps;
        r.richardson = (4.0 * r.value_half - r.value) / 3.0;
    }
    return r;
}

} // namespace lrim

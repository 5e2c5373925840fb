#pragma once

#include <lrim/response.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lrim {

// ---------------------------------------------------------------------------
// Neutral orbit x_l = g^l(1)

struct OrbitStats {
    double alpha = 0.0;
    int ell_max = 0;
    std::vector<double> x_ell;       // x_0 = 1, x_1 = 1/2, ...
    std::vector<double> upper;       // 2^{1/a^2 + 1/a} l^{-1/a}, l >= 1 (empty at alpha = 0)
    double fitted_exponent = 0.0;    // slope of log x_l against log l on [l_max/10, l_max]
    double fit_lo = 0.0, fit_hi = 0.0;
    bool upper_ok = true;
    double upper_margin = 0.0;       // min over l of (bound - x_l) / bound
    double lower_constant = 0.0;     // largest c with x_l >= c (2^a a)^{-1/a} l^{-1/a} for all l
    bool lower_ok = true;
};

inline OrbitStats neutral_orbit(const MapParams& p, int ell_max) {
    if (ell_max < 1) throw std::invalid_argument("neutral_orbit: ell_max must be >= 1");
    OrbitStats s;
    const double a = p.alpha();
    s.alpha = a;
    s.ell_max = ell_max;
    s.x_ell.resize(static_cast<std::size_t>(ell_max) + 1);
    s.x_ell[0] = 1.0;
    for (int l = 1; l <= ell_max; ++l) {
        s.x_ell[l] = a == 0.0 ? std::ldexp(1.0, -l) : branch_inverse(p, s.x_ell[l - 1]);
    }
    if (a == 0.0) {
        s.fitted_exponent = -std::numeric_limits<double>::infinity();
        return s;
    }
    const double cu = std::pow(2.0, 1.0 / (a * a) + 1.0 / a);
    const double cl = std::pow(p.two_pow_alpha() * a, -1.0 / a);
    s.upper.resize(static_cast<std::size_t>(ell_max) + 1, 0.0);
    s.upper_margin = std::numeric_limits<double>::infinity();
    s.lower_constant = std::numeric_limits<double>::infinity();
    for (int l = 1; l <= ell_max; ++l) {
        const double lp = std::pow(static_cast<double>(l), -1.0 / a);
        s.upper[l] = cu * lp;
        s.upper_margin = std::min(s.upper_margin, (s.upper[l] - s.x_ell[l]) / s.upper[l]);
        s.lower_constant = std::min(s.lower_constant, s.x_ell[l] / (cl * lp));
    }
    s.upper_ok = s.upper_margin >= 0.0;
    s.lower_ok = s.lower_constant > 0.0;
    std::vector<double> lx, ly;
    const int lo = std::max(1, ell_max / 10);
    for (int l = lo; l <= ell_max; ++l) {
        lx.push_back(std::log(static_cast<double>(l)));
        ly.push_back(std::log(s.x_ell[l]));
    }
    if (lx.size() >= 2) {
        double icpt, rss;
        detail::least_squares(lx, ly, s.fitted_exponent, icpt, rss);
    }
    s.fit_lo = lo;
    s.fit_hi = ell_max;
    return s;
}

/// lambda_m(x_l) = 1 / (f^m)'(x_{l+m}), the product of 1/T' over the m steps
/// x_{l+m} -> x_l, accumulated in log space.
inline double contraction_factor(const MapParams& p, int ell, int m) {
    if (ell < 1 || m < 0) throw std::invalid_argument("contraction_factor: need ell >= 1 and m >= 0");
    if (m == 0) return 1.0;
    double x = 1.0;
    for (int l = 1; l <= ell + m; ++l) x = branch_inverse(p, x);
    double log_lambda = 0.0;
    for (int j = 0; j < m; ++j) {
        log_lambda -= std::log(forward_deriv(p, x, 1));
        x = left_branch(p, x);
    }
    return std::exp(log_lambda);
}

struct DistortionPoint {
    int ell = 0;
    int m = 0;
    double lambda = 0.0;
    double scaled = 0.0;  // lambda (1 + m/l)^{1 + 1/alpha}
};

struct DistortionGrid {
    std::vector<DistortionPoint> points;
    double c_min = 0.0, c_max = 0.0;  // range of the scaled values
    double spread = 0.0;               // c_max / c_min
};

inline DistortionGrid distortion_grid(const MapParams& p, const std::vector<int>& ells, const std::vector<int>& ms) {
    if (p.alpha() == 0.0) throw std::domain_error("distortion_grid: the envelope needs alpha > 0");
    DistortionGrid g;
    g.c_min = std::numeric_limits<double>::infinity();
    g.c_max = 0.0;
    const double e = 1.0 + 1.0 / p.alpha();
    for (int l : ells) {
        for (int m : ms) {
            DistortionPoint d{l, m, contraction_factor(p, l, m), 0.0};
            d.scaled = d.lambda * std::pow(1.0 + static_cast<double>(m) / l, e);
            g.c_min = std::min(g.c_min, d.scaled);
            g.c_max = std::max(g.c_max, d.scaled);
            g.points.push_back(d);
        }
    }
    g.spread = g.c_max / g.c_min;
    return g;
}

// ---------------------------------------------------------------------------
// Orbit simulation

namespace detail {

/// One step of T with a +-1e-15 kick, reflected into [0, 1]. In double
/// precision the affine branch shifts out one mantissa bit per step and 1/2
/// maps to the fixed point 0, so unperturbed orbits can collapse onto dyadic
/// points; the kick is far below every scale resolved by the statistics.
class NoisyOrbit {
public:
    NoisyOrbit(const MapParams& p, std::uint64_t seed, std::uint64_t stream)
        : p_(p), rng_(seed ^ (0x0b17ULL * (stream + 1))) {}

    double start() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    double step(double x) {
        double y = forward(p_, x) + kick_(rng_);
        if (y < 0.0) y = -y;
        if (y > 1.0) y = 2.0 - y;
        return y;
    }

private:
    MapParams p_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> kick_{-1e-15, 1e-15};
};

inline std::uint64_t orbit_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 of the pair.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline unsigned worker_count(std::size_t jobs) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(hw, std::max<std::size_t>(jobs, 1)));
}

/// Runs body(i) for i in [0, n) on a small thread pool; results must be
/// written to per-index slots so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& body) {
    const unsigned w = worker_count(n);
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (unsigned t = 0; t < w; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

struct BirkhoffResult {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
    int batches = 0;
};

/// Average of psi over n_orbits orbits of length orbit_len (the first burn_in
/// points discarded), started uniformly at random. Each orbit contributes
/// `batches_per_orbit` batch means; the standard error is that of the batch
/// means. Orbit i uses a generator seeded from (seed, i).
inline BirkhoffResult birkhoff_average(const MapParams& p, const Observable& psi, int n_orbits, long long orbit_len,
                                       long long burn_in, std::uint64_t seed, int batches_per_orbit = 10) {
    if (n_orbits < 1 || orbit_len <= burn_in || burn_in < 0 || batches_per_orbit < 1) {
        throw std::invalid_argument("birkhoff_average: need n_orbits >= 1 and orbit_len > burn_in >= 0");
    }
    const long long kept = orbit_len - burn_in;
    if (kept < batches_per_orbit) throw std::invalid_argument("birkhoff_average: orbit too short for its batches");
    const std::size_t nb = static_cast<std::size_t>(n_orbits) * static_cast<std::size_t>(batches_per_orbit);
    std::vector<double> batch(nb, 0.0);
    detail::parallel_for(static_cast<std::size_t>(n_orbits), [&](std::size_t o) {
        detail::NoisyOrbit orbit(p, detail::orbit_seed(seed, o), o);
        double x = orbit.start();
        for (long long t = 0; t < burn_in; ++t) x = orbit.step(x);
        const long long per = kept / batches_per_orbit;
        for (int b = 0; b < batches_per_orbit; ++b) {
            const long long len = b + 1 == batches_per_orbit ? kept - per * b : per;
            double s = 0.0;
            for (long long t = 0; t < len; ++t) {
                s += psi(x);
                x = orbit.step(x);
            }
            batch[o * static_cast<std::size_t>(batches_per_orbit) + static_cast<std::size_t>(b)] = s / static_cast<double>(len);
        }
    });
    BirkhoffResult r;
    r.samples = static_cast<std::size_t>(kept) * static_cast<std::size_t>(n_orbits);
    r.batches = static_cast<int>(nb);
    r.mean = std::accumulate(batch.begin(), batch.end(), 0.0) / static_cast<double>(nb);
    if (nb > 1) {
        double var = 0.0;
        for (double b : batch) var += (b - r.mean) * (b - r.mean);
        var /= static_cast<double>(nb - 1);
        r.standard_error = std::sqrt(var / static_cast<double>(nb));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Correlation decay

enum class CorrelationMethod { operator_method, montecarlo };

inline const char* to_string(CorrelationMethod m) {
    return m == CorrelationMethod::operator_method ? "operator" : "montecarlo";
}

inline CorrelationMethod correlation_method_from_string(const std::string& s) {
    if (s == "operator") return CorrelationMethod::operator_method;
    if (s == "montecarlo" || s == "mc") return CorrelationMethod::montecarlo;
    throw std::invalid_argument("unknown correlation method: " + s);
}

struct PowerFit {
    double exponent = std::numeric_limits<double>::quiet_NaN();  // slope of log|C_n| vs log n
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    double rate = std::numeric_limits<double>::quiet_NaN();      // slope of log|C_n| vs n
    int n_lo = 0, n_hi = 0;
    int points = 0;
};

struct CorrelationOptions {
    int mc_orbits = 64;
    long long mc_orbit_len = 1'000'000;
    long long mc_burn_in = 10'000;
    std::uint64_t seed = 1;
    int bootstrap = 400;
    double noise_floor = 0.0;  // |C_n| at or below this is left out of fits
};

struct CorrelationCurve {
    double alpha = 0.0;
    std::string psi_id, phi_id;
    CorrelationMethod method = CorrelationMethod::operator_method;
    std::vector<double> values;  // C_0..C_N
    std::vector<double> errors;  // Monte Carlo standard errors (empty for the operator method)
    PowerFit fit;
    bool degenerate = false;     // every C_n is zero
};

/// Lipschitz observable supported in [1/2, 1] with zero mean under rho dx:
/// a sine wave on [1/2, 1] minus a multiple of the hat centred at 3/4.
/// Observables supported away from the neutral point with zero mean have
/// correlations decaying like n^{-1/alpha}; a nonzero mean brings in the
/// slower n^{1 - 1/alpha} term.
inline Observable zero_mean_right_observable(const GridFunction& rho) {
    auto hat = [](double x) { return x <= 0.5 ? 0.0 : std::max(0.0, 1.0 - std::abs(4.0 * x - 3.0)); };
    auto wave = [](double x) { return x <= 0.5 ? 0.0 : std::sin(2.0 * M_PI * (2.0 * x - 1.0)); };
    const Observable h{"hat", hat, {}, {0.5, 0.75}, false};
    const Observable w{"wave", wave, {}, {0.5}, false};
    const double c = pair(w, rho) / pair(h, rho);
    return Observable{"right_zero_mean", [=](double x) { return wave(x) - c * hat(x); }, {}, {0.5, 0.75}, false};
}

namespace detail {

/// Least-squares slopes on n in [N/4, N] plus a pairs-bootstrap 95% interval
/// for the log-log slope.
inline PowerFit fit_correlations(const std::vector<double>& c, double floor, int resamples, std::uint64_t seed) {
    PowerFit f;
    const int N = static_cast<int>(c.size()) - 1;
    f.n_lo = std::max(1, N / 4);
    f.n_hi = N;
    std::vector<double> ln, n, lc;
    for (int k = f.n_lo; k <= N; ++k) {
        const double a = std::abs(c[k]);
        if (!(a > floor)) continue;
        ln.push_back(std::log(static_cast<double>(k)));
        n.push_back(static_cast<double>(k));
        lc.push_back(std::log(a));
    }
    f.points = static_cast<int>(ln.size());
    if (f.points < 3) return f;
    double icpt, rss;
    least_squares(ln, lc, f.exponent, icpt, rss);
    least_squares(n, lc, f.rate, icpt, rss);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, ln.size() - 1);
    std::vector<double> slopes;
    std::vector<double> bx(ln.size()), by(ln.size());
    for (int b = 0; b < resamples; ++b) {
        for (std::size_t i = 0; i < ln.size(); ++i) {
            const auto j = pick(rng);
            bx[i] = ln[j];
            by[i] = lc[j];
        }
        double s;
        least_squares(bx, by, s, icpt, rss);
        slopes.push_back(s);
    }
    if (!slopes.empty()) {
        std::sort(slopes.begin(), slopes.end());
        f.ci_low = slopes[static_cast<std::size_t>(0.025 * (slopes.size() - 1))];
        f.ci_high = slopes[static_cast<std::size_t>(0.975 * (slopes.size() - 1))];
    }
    return f;
}

} // namespace detail

/// C_n = int psi L^n(phi~ rho) dx = int (psi o T^n) phi~ dmu, n = 0..N, with
/// phi~ = phi - int phi dmu. The Monte Carlo method estimates the same
/// covariance from long orbits.
inline CorrelationCurve correlation_decay(const TransferOperator& op, const DensityRecord& d, const Observable& psi,
                                          const Observable& phi, int N,
                                          CorrelationMethod method = CorrelationMethod::operator_method,
                                          const CorrelationOptions& opt = {}) {
    if (N < 1) throw std::invalid_argument("correlation_decay: N must be >= 1");
    if (!d.converged) throw std::runtime_error("correlation_decay: density record is not converged");
    if (!(d.params == op.params())) throw std::invalid_argument("correlation_decay: density is for a different alpha");
    CorrelationCurve cc;
    cc.alpha = op.params().alpha();
    cc.psi_id = psi.id;
    cc.phi_id = phi.id;
    cc.method = method;
    cc.values.assign(static_cast<std::size_t>(N) + 1, 0.0);
    const GridFunction& rho = d.density;
    if (method == CorrelationMethod::operator_method) {
        const double mphi = pair(phi, rho);
        // phi~ rho on the density's exponent.
        const auto& x = rho.mesh().nodes();
        std::vector<double> u(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) u[i] = (phi(x[i]) - mphi) * rho.values()[i];
        GridFunction f(rho.mesh_ptr(), std::move(u), rho.exponent());
        const auto W = observable_weights(psi, rho.mesh(), rho.exponent());
        for (int n = 0; n <= N; ++n) {
            // The exact iterates keep zero mass; remove what the grid operator leaks.
            f.axpy(-integrate(f), rho);
            double s = 0.0;
            for (std::size_t i = 0; i < W.size(); ++i) s += W[i] * f.values()[i];
            cc.values[n] = s;
            if (n < N) f = op.apply_L(f);
        }
    } else {
        const MapParams p = op.params();
        const std::size_t M = static_cast<std::size_t>(opt.mc_orbits);
        if (opt.mc_orbit_len <= opt.mc_burn_in + N) throw std::invalid_argument("correlation_decay: orbits too short");
        std::vector<std::vector<double>> per(M, std::vector<double>(static_cast<std::size_t>(N) + 1));
        detail::parallel_for(M, [&](std::size_t o) {
            detail::NoisyOrbit orbit(p, detail::orbit_seed(opt.seed, o), o);
            double x = orbit.start();
            for (long long t = 0; t < opt.mc_burn_in; ++t) x = orbit.step(x);
            const long long len = opt.mc_orbit_len - opt.mc_burn_in;
            const std::size_t W = static_cast<std::size_t>(N) + 1;
            std::vector<double> ring(W);  // phi at the last N+1 times
            std::vector<double> sum(W, 0.0);
            double sphi = 0.0, spsi = 0.0;
            for (long long t = 0; t < len; ++t) {
                const double ph = phi(x), ps = psi(x);
                ring[static_cast<std::size_t>(t) % W] = ph;
                for (std::size_t n = 0; n < W && static_cast<long long>(n) <= t; ++n) {
                    sum[n] += ring[static_cast<std::size_t>(t - static_cast<long long>(n)) % W] * ps;
                }
                sphi += ph;
                spsi += ps;
                x = orbit.step(x);
            }
            const double mphi = sphi / static_cast<double>(len), mpsi = spsi / static_cast<double>(len);
            for (std::size_t n = 0; n < W; ++n) {
                per[o][n] = sum[n] / static_cast<double>(len - static_cast<long long>(n)) - mphi * mpsi;
            }
        });
        cc.errors.assign(cc.values.size(), 0.0);
        for (std::size_t n = 0; n < cc.values.size(); ++n) {
            double m = 0.0;
            for (std::size_t o = 0; o < M; ++o) m += per[o][n];
            m /= static_cast<double>(M);
            double v = 0.0;
            for (std::size_t o = 0; o < M; ++o) v += (per[o][n] - m) * (per[o][n] - m);
            cc.values[n] = m;
            cc.errors[n] = M > 1 ? std::sqrt(v / static_cast<double>(M - 1) / static_cast<double>(M)) : 0.0;
        }
    }
    cc.degenerate = std::all_of(cc.values.begin(), cc.values.end(), [](double v) { return v == 0.0; });
    if (!cc.degenerate) {
        double scale = 0.0;
        for (double v : cc.values) scale = std::max(scale, std::abs(v));
        cc.fit = detail::fit_correlations(cc.values, std::max(opt.noise_floor, 1e-14 * scale), opt.bootstrap, opt.seed);
    }
    return cc;
}

} // namespace lrim

#pragma once

#include <lrim/transfer.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrim {

enum class ConeId { Cstar, Cstar1, C2, C3 };

inline const char* to_string(ConeId c) {
    switch (c) {
    case ConeId::Cstar: return "Cstar";
    case ConeId::Cstar1: return "Cstar1";
    case ConeId::C2: return "C2";
    case ConeId::C3: return "C3";
    }
    return "?";
}

inline ConeId cone_id_from_string(const std::string& s) {
    if (s == "Cstar") return ConeId::Cstar;
    if (s == "Cstar1") return ConeId::Cstar1;
    if (s == "C2") return ConeId::C2;
    if (s == "C3") return ConeId::C3;
    throw std::invalid_argument("unknown cone: " + s);
}

struct ConeParams {
    double a = 1.0;
    double b1 = 1.0;
    double b2 = 1.0;
    double b3 = 1.0;
    double b1_bar = 0.0;
    double b2_bar = 0.0;
};

struct InequalityMargin {
    std::string name;
    double worst_margin = std::numeric_limits<double>::infinity();
    double worst_node = 0.0;
};

struct ConeReport {
    ConeId cone_id = ConeId::C2;
    bool verdict = true;
    double worst_margin = std::numeric_limits<double>::infinity();
    double worst_node = 0.0;
    std::vector<InequalityMargin> inequalities;
    double mass = 0.0;
    double half_mass_margin = std::numeric_limits<double>::quiet_NaN();  // int_0^{1/2} f - m/2, C_* only
    int k = 0;
    std::string image;  // "L^k 1" or "N L^k 1" in invariance experiments
};

namespace detail {

inline constexpr double margin_guard = 1e-300;
// Rounding level of x^k f^(k) / f from the nonuniform stencils, k = 1..3.
inline constexpr double normalized_floor[4] = {0.0, 1e-9, 1e-6, 1e-3};

/// lhs <= rhs as (rhs - lhs) / max(|rhs|, |lhs|, guard).
inline double margin(double lhs, double rhs) {
    return (rhs - lhs) / std::max({std::abs(rhs), std::abs(lhs), margin_guard});
}

class MarginBook {
public:
    explicit MarginBook(ConeId id) { report_.cone_id = id; }

    void add(const std::string& name, double lhs, double rhs, double x) {
        auto it = std::find_if(report_.inequalities.begin(), report_.inequalities.end(),
                               [&](const InequalityMargin& m) { return m.name == name; });
        if (it == report_.inequalities.end()) {
            report_.inequalities.push_back({name});
            it = std::prev(report_.inequalities.end());
        }
        const double m = margin(lhs, rhs);
        if (m < it->worst_margin) {
            it->worst_margin = m;
            it->worst_node = x;
        }
    }

    ConeReport finish() {
        for (const auto& m : report_.inequalities) {
            if (m.worst_margin < report_.worst_margin) {
                report_.worst_margin = m.worst_margin;
                report_.worst_node = m.worst_node;
            }
        }
        report_.verdict = report_.worst_margin >= 0.0;
        return std::move(report_);
    }

    ConeReport& report() { return report_; }

private:
    ConeReport report_;
};

inline double default_x_check(const Mesh& m) { return 10.0 * m.x_min(); }

/// x^k f^(k) / f, with values below rounding level of the stencils set to 0.
inline double normalized(double xk_dk, double f, int k) {
    if (!(f > 0.0)) return xk_dk >= 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    const double q = xk_dk / f;
    return std::abs(q) < normalized_floor[k] ? 0.0 : q;
}

inline void add_c2(MarginBook& book, double x, double f, double d1, double d2, const ConeParams& cp) {
    const double q1 = -normalized(x * d1, f, 1);
    const double q2 = normalized(x * x * d2, f, 2);
    book.add("positive", 0.0, f, x);
    book.add("-x f'/f >= b1_bar", cp.b1_bar, q1, x);
    book.add("-x f'/f <= b1", q1, cp.b1, x);
    book.add("x^2 f''/f >= b2_bar", cp.b2_bar, q2, x);
    book.add("x^2 f''/f <= b2", q2, cp.b2, x);
}

inline void check_density_params(const MapParams& p, const DensityRecord& d) {
    if (!(d.params == p)) throw std::invalid_argument("cone check: density is for a different alpha");
}

} // namespace detail

/// phi >= 0, b1_bar phi/x <= -phi' <= b1 phi/x, b2_bar phi/x^2 <= phi'' <= b2 phi/x^2.
inline ConeReport check_C2(const GridFunction& f, const ConeParams& cp, double x_check = -1.0) {
    if (x_check < 0) x_check = detail::default_x_check(f.mesh());
    const auto v = f.nodal();
    const auto d1 = nodal_derivative(f, 1);
    const auto d2 = nodal_derivative(f, 2);
    const auto& x = f.mesh().nodes();
    detail::MarginBook book(ConeId::C2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x_check) continue;
        detail::add_c2(book, x[i], v[i], d1[i], d2[i], cp);
    }
    book.report().mass = integrate(f);
    return book.finish();
}

/// C_2 together with |phi'''| <= b3 phi/x^3.
inline ConeReport check_C3(const GridFunction& f, const ConeParams& cp, double x_check = -1.0) {
    if (x_check < 0) x_check = detail::default_x_check(f.mesh());
    const auto v = f.nodal();
    const auto d1 = nodal_derivative(f, 1);
    const auto d2 = nodal_derivative(f, 2);
    const auto d3 = nodal_derivative(f, 3);
    const auto& x = f.mesh().nodes();
    detail::MarginBook book(ConeId::C3);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x_check) continue;
        detail::add_c2(book, x[i], v[i], d1[i], d2[i], cp);
        book.add("x^3 |f'''|/f <= b3", std::abs(detail::normalized(x[i] * x[i] * x[i] * d3[i], v[i], 3)), cp.b3, x[i]);
    }
    book.report().mass = integrate(f);
    return book.finish();
}

/// 0 <= phi <= 2 a rho m(phi), -(alpha+1) phi/x <= phi' <= 0; also reports
/// the half-mass margin int_0^{1/2} phi - m(phi)/2.
inline ConeReport check_Cstar(const GridFunction& f, const MapParams& p, const DensityRecord& d, double a,
                              double x_check = -1.0) {
    detail::check_density_params(p, d);
    if (x_check < 0) x_check = detail::default_x_check(f.mesh());
    const auto v = f.nodal();
    const auto d1 = nodal_derivative(f, 1);
    const auto& x = f.mesh().nodes();
    const double m = integrate(f);
    detail::MarginBook book(ConeId::Cstar);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x_check) continue;
        const double rho = evaluate(d.density, x[i]);
        book.add("positive", 0.0, v[i], x[i]);
        book.add("f <= 2 a rho m", v[i], 2.0 * a * rho * m, x[i]);
        const double q1 = detail::normalized(x[i] * d1[i], v[i], 1);
        book.add("x f'/f >= -(alpha+1)", -(p.alpha() + 1.0), q1, x[i]);
        book.add("x f'/f <= 0", q1, 0.0, x[i]);
    }
    book.report().mass = m;
    book.report().half_mass_margin = evaluate(antiderivative(f), 0.5) - 0.5 * m;
    return book.finish();
}

/// 0 <= phi <= 2 a rho m(phi), |phi'| <= b1 phi/x.
inline ConeReport check_Cstar1(const GridFunction& f, const MapParams& p, const DensityRecord& d, double a,
                               double b1, double x_check = -1.0) {
    detail::check_density_params(p, d);
    if (x_check < 0) x_check = detail::default_x_check(f.mesh());
    const auto v = f.nodal();
    const auto d1 = nodal_derivative(f, 1);
    const auto& x = f.mesh().nodes();
    const double m = integrate(f);
    detail::MarginBook book(ConeId::Cstar1);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x_check) continue;
        const double rho = evaluate(d.density, x[i]);
        book.add("positive", 0.0, v[i], x[i]);
        book.add("f <= 2 a rho m", v[i], 2.0 * a * rho * m, x[i]);
        book.add("x |f'|/f <= b1", std::abs(detail::normalized(x[i] * d1[i], v[i], 1)), b1, x[i]);
    }
    book.report().mass = m;
    return book.finish();
}

// ---------------------------------------------------------------------------
// Bracketed factors of the first-branch derivative bounds

struct OmegaFactors {
    double omega1 = 0.0;
    double omega2 = 0.0;
    double omega3 = 0.0;
    double omega1_bar = 0.0;
    double omega2_bar = 0.0;
};

/// c_0..c_3 with (N phi)'''(x) = sum_j c_j(y) phi^(j)(y), y = g(x) in (0, 1/2].
inline std::array<double, 4> third_derivative_coefficients(const MapParams& p, double y) {
    const auto jet = detail::left_branch_jet(p, y);
    const double t1 = jet.d1, t2 = jet.d2, t3 = jet.d3, t4 = jet.d4;
    return {-t4 / std::pow(t1, 5) + 10.0 * t2 * t3 / std::pow(t1, 6) - 15.0 * t2 * t2 * t2 / std::pow(t1, 7),
            -4.0 * t3 / std::pow(t1, 5) + 15.0 * t2 * t2 / std::pow(t1, 6),
            -6.0 * t2 / std::pow(t1, 5),
            1.0 / std::pow(t1, 4)};
}

/// Upper factors Omega_1..3 and lower factors at y in (0, 1/2]; the upper
/// cone bound is preserved by N where Omega_i <= 1, the lower one where the
/// barred factor is >= 1.
inline OmegaFactors omega_factors(const MapParams& p, double y, const ConeParams& cp) {
    if (!(y > 0.0 && y <= 0.5)) throw std::domain_error("omega_factors: y must lie in (0, 1/2]");
    const double a = p.alpha();
    const double T = left_branch(p, y);
    // Left-branch jet, also at y = 1/2 where forward_deriv switches branch.
    const auto jet = detail::left_branch_jet(p, y);
    const double t1 = jet.d1, t2 = jet.d2, t3 = jet.d3;
    OmegaFactors o;
    o.omega1 = T / (cp.b1 * y * t1) * (y * t2 / t1 + cp.b1);
    o.omega1_bar = T / (y * t1) * (y * t2 / (cp.b1_bar * t1) + 1.0);
    const double lead2 = T * T / (t1 * t1);
    o.omega2 = lead2 / cp.b2 * (3.0 * cp.b1 / y * t2 / t1 + std::abs(t3) / t1 + 3.0 * t2 * t2 / (t1 * t1) + cp.b2 / (y * y));
    // Lower second-derivative factor: the bracket with barred constants.
    const double D = 1.0 + p.two_pow_alpha() * (1.0 + a) * std::pow(y, a);
    const double A = p.two_pow_alpha() * a * std::pow(y, a) / D;
    o.omega2_bar = (1.0 - A) * (1.0 - A) *
                   (1.0 + A / cp.b2_bar *
                              (3.0 * cp.b1_bar * (a + 1.0) + (1.0 - a * a) +
                               3.0 * p.two_pow_alpha() * (a + 1.0) * (a + 1.0) * a * std::pow(y, a) / D));
    // |phi^(j)| <= b_j phi / y^j with b_0 = 1.
    const auto c = third_derivative_coefficients(p, y);
    const double sum = std::abs(c[3]) * cp.b3 / (y * y * y) + std::abs(c[2]) * cp.b2 / (y * y) +
                       std::abs(c[1]) * cp.b1 / y + std::abs(c[0]);
    o.omega3 = T * T * T * t1 * sum / cp.b3;
    return o;
}

/// y_j = j / (2 n), j = 1..n.
inline std::vector<double> omega_grid(int n) {
    if (n < 1) throw std::invalid_argument("omega_grid: need at least one point");
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) y[static_cast<std::size_t>(j - 1)] = 0.5 * j / n;
    return y;
}

struct OmegaExtremes {
    double max_omega1 = -std::numeric_limits<double>::infinity();
    double max_omega2 = -std::numeric_limits<double>::infinity();
    double max_omega3 = -std::numeric_limits<double>::infinity();
    double min_omega1_bar = std::numeric_limits<double>::infinity();
    double min_omega2_bar = std::numeric_limits<double>::infinity();
};

inline OmegaExtremes omega_extremes(const MapParams& p, const ConeParams& cp, int grid = 512) {
    OmegaExtremes e;
    for (double y : omega_grid(grid)) {
        const auto o = omega_factors(p, y, cp);
        e.max_omega1 = std::max(e.max_omega1, o.omega1);
        e.max_omega2 = std::max(e.max_omega2, o.omega2);
        e.max_omega3 = std::max(e.max_omega3, o.omega3);
        e.min_omega1_bar = std::min(e.min_omega1_bar, o.omega1_bar);
        e.min_omega2_bar = std::min(e.min_omega2_bar, o.omega2_bar);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Parameter regime

/// Allowance for Omega factors that equal 1 identically (alpha = 0).
inline constexpr double omega_rounding = 1e-12;

/// Smallest a for which C_* is L-invariant.
inline double cstar_threshold(const MapParams& p) { return p.two_pow_alpha() * (p.alpha() + 2.0); }

struct Calibration {
    ConeParams params;
    OmegaExtremes extremes;
};

/// b1 = alpha + 1, b2 = 3 b1 (1 + alpha) + 21, a = 2^alpha (alpha + 2).
/// b3: smallest value on a doubling grid from b2 with max Omega_3 <= 1.
/// b2_bar = b1_bar / 10 (Omega_2_bar >= 1 wants b1_bar / b2_bar large), with
/// b1_bar the largest value on the grid 10^{-j/4}, j = 0..64, such that
/// min Omega_1_bar >= 1, min Omega_2_bar >= 1 and max(b1_bar, b2_bar) <= 1/b2.
/// At alpha = 0 every factor is identically 1 and the lower bounds carry no
/// content, so b1_bar = b2_bar = 0.
inline Calibration calibrate(const MapParams& p, int grid = 512) {
    Calibration c;
    auto& cp = c.params;
    const double a = p.alpha();
    cp.a = cstar_threshold(p);
    cp.b1 = a + 1.0;
    cp.b2 = 3.0 * cp.b1 * (1.0 + a) + 21.0;
    cp.b3 = cp.b2;
    cp.b1_bar = cp.b2_bar = 0.0;
    for (int it = 0; it < 60 && omega_extremes(p, cp, grid).max_omega3 > 1.0 + omega_rounding; ++it) cp.b3 *= 2.0;
    if (a > 0.0) {
        for (int j = 0; j <= 64; ++j) {
            ConeParams trial = cp;
            trial.b1_bar = std::pow(10.0, -j / 4.0);
            trial.b2_bar = trial.b1_bar / 10.0;
            if (std::max(trial.b1_bar, trial.b2_bar) > 1.0 / cp.b2) continue;
            const auto e = omega_extremes(p, trial, grid);
            if (e.min_omega1_bar >= 1.0 && e.min_omega2_bar >= 1.0) {
                cp = trial;
                break;
            }
        }
    }
    c.extremes = omega_extremes(p, cp, grid);
    return c;
}

// ---------------------------------------------------------------------------
// Invariance experiment

/// Checks L^k 1 and N L^k 1 for k = 1..k_max. C_*: L-images at a, with the
/// half-mass margin. C_{*,1}: L-images at (a, b1) and N-images at (2a, b1).
/// C_2 and C_3: both images at the same parameters.
inline std::vector<ConeReport> invariance_experiment(const TransferOperator& op, const DensityRecord& d, ConeId cone,
                                                     const ConeParams& cp, int k_max, double x_check = -1.0) {
    if (k_max < 1) throw std::invalid_argument("invariance_experiment: k_max must be >= 1");
    const MapParams& p = op.params();
    std::vector<ConeReport> out;
    GridFunction f = GridFunction::constant(op.mesh_ptr(), 1.0);
    for (int k = 1; k <= k_max; ++k) {
        f = op.apply_L(f);
        auto tag = [&](ConeReport r, const char* image) {
            r.k = k;
            r.image = image;
            out.push_back(std::move(r));
        };
        switch (cone) {
        case ConeId::Cstar:
            tag(check_Cstar(f, p, d, cp.a, x_check), "L^k 1");
            break;
        case ConeId::Cstar1:
            tag(check_Cstar1(f, p, d, cp.a, cp.b1, x_check), "L^k 1");
            tag(check_Cstar1(op.apply_N(f), p, d, 2.0 * cp.a, cp.b1, x_check), "N L^k 1");
            break;
        case ConeId::C2:
            tag(check_C2(f, cp, x_check), "L^k 1");
            tag(check_C2(op.apply_N(f), cp, x_check), "N L^k 1");
            break;
        case ConeId::C3:
            tag(check_C3(f, cp, x_check), "L^k 1");
            tag(check_C3(op.apply_N(f), cp, x_check), "N L^k 1");
            break;
        }
    }
    return out;
}

} // namespace lrim

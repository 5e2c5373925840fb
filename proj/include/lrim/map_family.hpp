#pragma once

// The intermittent interval maps
//
//     T(x) = x (1 + 2^a x^a)   on [0, 1/2),
//     T(x) = 2x - 1            on [1/2, 1],
//
// their left-branch inverse g, and the parameter-velocity field X = v o g
// with v = dT/da. Everything here is a closed-form expression or a scalar
// root solve; no state.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lrim {

/// One member of the map family. The exponent is validated once at
/// construction; 2^alpha is cached because nearly every formula needs it.
class MapParams {
public:
    explicit MapParams(double alpha) : alpha_(alpha) {
        if (!(alpha >= 0.0 && alpha < 1.0)) {
            throw std::domain_error("alpha must lie in [0, 1), got " + std::to_string(alpha));
        }
        two_pow_alpha_ = std::exp2(alpha);
    }

    double alpha() const noexcept { return alpha_; }
    double two_pow_alpha() const noexcept { return two_pow_alpha_; }

    friend bool operator==(const MapParams& a, const MapParams& b) noexcept {
        return a.alpha_ == b.alpha_;
    }

private:
    double alpha_;
    double two_pow_alpha_;
};

namespace detail {

inline void require_unit_interval(double x, const char* what) {
    if (!(x >= 0.0 && x <= 1.0)) {
        throw std::domain_error(std::string(what) + ": argument outside [0,1]: " + std::to_string(x));
    }
}

inline void require_positive_unit(double x, const char* what) {
    if (!(x > 0.0 && x <= 1.0)) {
        throw std::domain_error(std::string(what) + ": argument outside (0,1]: " + std::to_string(x));
    }
}

// Derivatives of the left branch f(y) = y + 2^a y^(1+a), y > 0.
struct LeftBranchJet {
    double d1, d2, d3, d4;
};

inline LeftBranchJet left_branch_jet(const MapParams& p, double y) {
    const double a = p.alpha();
    const double c = p.two_pow_alpha() * (a + 1.0);
    if (a == 0.0) {
        return {1.0 + c, 0.0, 0.0, 0.0};
    }
    const double ya = std::pow(y, a);
    const double d2 = c * a * ya / y;
    const double d3 = d2 * (a - 1.0) / y;
    const double d4 = d3 * (a - 2.0) / y;
    return {1.0 + c * ya, d2, d3, d4};
}

} // namespace detail

/// T_alpha(x). The point 1/2 belongs to the affine branch.
inline double forward(const MapParams& p, double x) {
    detail::require_unit_interval(x, "forward");
    if (x >= 0.5) {
        return 2.0 * x - 1.0;
    }
    // x + 2^a x^(1+a) keeps full relative precision as x -> 0.
    return x + p.two_pow_alpha() * x * std::pow(x, p.alpha());
}

/// Left branch f_alpha on [0, 1/2] (closed at 1/2, where it equals 1).
inline double left_branch(const MapParams& p, double x) {
    return x + p.two_pow_alpha() * x * std::pow(x, p.alpha());
}

/// Closed-form x-derivative of order 1..4 of the branch containing x.
inline double forward_deriv(const MapParams& p, double x, int order) {
    detail::require_unit_interval(x, "forward_deriv");
    if (order < 1 || order > 4) {
        throw std::invalid_argument("forward_deriv: order must be 1..4");
    }
    if (x >= 0.5) {
        return order == 1 ? 2.0 : 0.0;
    }
    if (x == 0.0) {
        if (order == 1) {
            return p.alpha() == 0.0 ? 2.0 : 1.0;
        }
        if (p.alpha() > 0.0) {
            throw std::domain_error("forward_deriv: order >= 2 is singular at x = 0");
        }
        return 0.0;
    }
    const auto jet = detail::left_branch_jet(p, x);
    switch (order) {
    case 1: return jet.d1;
    case 2: return jet.d2;
    case 3: return jet.d3;
    default: return jet.d4;
    }
}

/// g_alpha(y): the root in [0, 1/2] of x + 2^a x^(1+a) = y.
///
/// Newton started from the expansion y (1 - 2^a y^a) and safeguarded by a
/// bisection bracket. The iteration runs to full double precision; `tol`
/// is the acceptance threshold on the relative residual.
inline double branch_inverse(const MapParams& p, double y, double tol = 1e-13) {
    detail::require_unit_interval(y, "branch_inverse");
    if (!(tol > 0.0)) {
        throw std::invalid_argument("branch_inverse: tol must be positive");
    }
    if (y == 0.0) return 0.0;
    if (y == 1.0) return 0.5;
    const double a = p.alpha();
    const double c = p.two_pow_alpha();
    if (a == 0.0) return 0.5 * y;

    double lo = 0.0;
    double hi = 0.5;
    double x = y * (1.0 - c * std::pow(y, a));
    if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);

    for (int it = 0; it < 100; ++it) {
        const double xa = std::pow(x, a);
        const double r = x + c * x * xa - y;
        if (r == 0.0) return x;
        if (r < 0.0) lo = x; else hi = x;
        const double dr = 1.0 + c * (1.0 + a) * xa;
        double next = x - r / dr;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        if (step <= 2.0 * std::numeric_limits<double>::epsilon() * x || hi - lo <= 2.0 * std::numeric_limits<double>::epsilon() * x) {
            break;
        }
    }
    const double res = std::abs(x + c * x * std::pow(x, a) - y);
    if (res > tol * y && res > 8.0 * std::numeric_limits<double>::epsilon() * y) {
        throw std::runtime_error("branch_inverse: Newton iteration failed to converge");
    }
    return x;
}

/// Value and first three y-derivatives of g_alpha at one point.
struct InverseJet {
    double g, d1, d2, d3;
};

inline InverseJet inverse_jet(const MapParams& p, double y) {
    const double g = branch_inverse(p, y);
    const auto t = detail::left_branch_jet(p, g);
    const double d1 = 1.0 / t.d1;
    const double d2 = -t.d2 * d1 * d1 * d1;
    const double d3 = (3.0 * t.d2 * t.d2 - t.d1 * t.d3) * std::pow(d1, 5);
    return {g, d1, d2, d3};
}

/// g'(y), g''(y), g'''(y) via the inverse-function identities.
inline double branch_inverse_deriv(const MapParams& p, double y, int order) {
    detail::require_positive_unit(y, "branch_inverse_deriv");
    if (order < 1 || order > 3) {
        throw std::invalid_argument("branch_inverse_deriv: order must be 1..3");
    }
    const auto j = inverse_jet(p, y);
    return order == 1 ? j.d1 : (order == 2 ? j.d2 : j.d3);
}

/// The velocity field X = v o g, its x-derivatives, and their alpha-derivatives,
/// all at a single point x in (0, 1].
struct FieldJet {
    double X = 0, dX = 0, d2X = 0;          // X, X', X''
    double aX = 0, adX = 0, ad2X = 0;       // d/dalpha of X, X', X''
    double g = 0, dg = 0, d2g = 0, d3g = 0; // branch inverse jet
    double ag = 0;                          // d/dalpha of g
};

inline FieldJet field_jet(const MapParams& p, double x) {
    detail::require_positive_unit(x, "field_jet");
    const double a = p.alpha();
    const double c = p.two_pow_alpha();
    const auto inv = inverse_jet(p, x);
    const double g = inv.g, g1 = inv.d1, g2 = inv.d2, g3 = inv.d3;

    const double ell = std::log(2.0 * g);
    const double ga = std::pow(g, a);
    const double Q = (1.0 + a) * ell + 1.0;
    const double R = (a + a * a) * ell + 1.0 + 2.0 * a;
    const double B = g2 * g * Q + g1 * g1 * R;

    FieldJet j;
    j.g = g; j.dg = g1; j.d2g = g2; j.d3g = g3;
    j.X = c * g * ga * ell;
    j.dX = c * g1 * ga * Q;
    j.d2X = c * (ga / g) * B;

    // Implicit differentiation of f(g) = x in alpha: dg/dalpha = -X g'.
    const double G = -j.X * g1;
    const double G1 = -(j.dX * g1 + j.X * g2);
    const double G2 = -(j.d2X * g1 + 2.0 * j.dX * g2 + j.X * g3);
    j.ag = G;

    j.aX = j.X * ell + c * ga * Q * G;

    j.adX = j.dX * ell + c * g1 * ga * ell
          + c * g1 * (ga / g) * (a * Q + 1.0 + a) * G
          + c * ga * Q * G1;

    const double explicit_part = j.d2X * ell
        + c * (ga / g) * (g2 * g * ell + g1 * g1 * ((1.0 + 2.0 * a) * ell + 2.0));
    const double by_g = c * (ga / (g * g))
        * ((a - 1.0) * B + g2 * g * Q + g2 * g * (1.0 + a) + g1 * g1 * (a + a * a));
    const double by_g1 = c * (ga / g) * 2.0 * g1 * R;
    const double by_g2 = c * ga * Q;
    j.ad2X = explicit_part + by_g * G + by_g1 * G1 + by_g2 * G2;
    return j;
}

/// X(x) = 2^a g^(1+a) log(2g), extended by 0 at x = 0.
inline double velocity_field(const MapParams& p, double x) {
    detail::require_unit_interval(x, "velocity_field");
    if (x == 0.0) return 0.0;
    return field_jet(p, x).X;
}

inline double velocity_field_d1(const MapParams& p, double x) { return field_jet(p, x).dX; }
inline double velocity_field_d2(const MapParams& p, double x) { return field_jet(p, x).d2X; }

/// d/dalpha of g_alpha(x).
inline double dalpha_branch_inverse(const MapParams& p, double x) {
    detail::require_unit_interval(x, "dalpha_branch_inverse");
    if (x == 0.0) return 0.0;
    return field_jet(p, x).ag;
}

inline double dalpha_velocity_field(const MapParams& p, double x) {
    detail::require_unit_interval(x, "dalpha_velocity_field");
    if (x == 0.0) return 0.0;
    return field_jet(p, x).aX;
}

inline double dalpha_velocity_field_d1(const MapParams& p, double x) { return field_jet(p, x).adX; }
inline double dalpha_velocity_field_d2(const MapParams& p, double x) { return field_jet(p, x).ad2X; }

} // namespace lrim

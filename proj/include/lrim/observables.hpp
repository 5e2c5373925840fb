#pragma once

// Test functions psi paired with densities: int psi f dx.

#include <lrim/funcgrid.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrim {

struct Observable {
    std::string id;
    std::function<double(double)> value;
    std::function<double(double)> derivative;  // empty when psi is not C^1
    std::vector<double> breaks;                // jump points inside (0, 1)
    bool periodic = false;                     // psi(0) = psi(1), C^1 on the circle

    double operator()(double x) const { return value(x); }
    bool differentiable() const { return static_cast<bool>(derivative); }
};

namespace observables {

inline Observable constant(double c = 1.0) {
    return {"const", [c](double) { return c; }, [](double) { return 0.0; }, {}, true};
}

inline Observable monomial(int k) {
    if (k < 1 || k > 4) throw std::invalid_argument("monomial degree must be 1..4");
    const std::string id = k == 1 ? "x" : "x^" + std::to_string(k);
    return {id, [k](double x) { return std::pow(x, k); }, [k](double x) { return k * std::pow(x, k - 1); }, {}, false};
}

inline Observable identity() { return monomial(1); }

inline Observable cosine(int m) {
    if (m < 1) throw std::invalid_argument("cosine frequency must be >= 1");
    const double w = 2.0 * std::numbers::pi * m;
    return {"cos" + std::to_string(m), [w](double x) { return std::cos(w * x); },
            [w](double x) { return -w * std::sin(w * x); }, {}, true};
}

inline Observable indicator(double a, double b) {
    if (!(0.0 <= a && a < b && b <= 1.0)) throw std::invalid_argument("indicator needs 0 <= a < b <= 1");
    std::vector<double> br;
    if (a > 0.0) br.push_back(a);
    if (b < 1.0) br.push_back(b);
    return {"ind:" + std::to_string(a) + ":" + std::to_string(b),
            [a, b](double x) { return (x >= a && x <= b) ? 1.0 : 0.0; }, {}, br, false};
}

/// C^1 ramp-up at a and ramp-down at b, each over a width w.
inline Observable smooth_indicator(double a, double b, double w) {
    if (!(w > 0.0) || !(a < b)) throw std::invalid_argument("smooth indicator needs a < b and w > 0");
    auto ramp = [](double t) { t = std::clamp(t, 0.0, 1.0); return t * t * (3.0 - 2.0 * t); };
    auto dramp = [](double t) { return (t <= 0.0 || t >= 1.0) ? 0.0 : 6.0 * t * (1.0 - t); };
    return {"sind:" + std::to_string(a) + ":" + std::to_string(b) + ":" + std::to_string(w),
            [=](double x) { return ramp((x - a) / w + 0.5) - ramp((x - b) / w + 0.5); },
            [=](double x) { return (dramp((x - a) / w + 0.5) - dramp((x - b) / w + 0.5)) / w; }, {}, false};
}

/// A user-supplied grid function, interpolated between nodes.
inline Observable from_grid(GridFunction g, std::string id = "grid") {
    auto gp = std::make_shared<GridFunction>(std::move(g));
    return {std::move(id), [gp](double x) { return evaluate(*gp, std::max(x, gp->mesh().x_min())); }, {}, {}, false};
}

/// "const", "x", "x^k", "cosm", "ind:a:b", "sind:a:b:w".
inline Observable parse(const std::string& spec) {
    if (spec == "const" || spec == "1") return constant();
    if (spec == "x") return identity();
    if (spec.size() == 3 && spec.rfind("x^", 0) == 0) return monomial(spec[2] - '0');
    if (spec.rfind("cos", 0) == 0) return cosine(spec.size() == 3 ? 1 : std::stoi(spec.substr(3)));
    auto fields = [&](std::size_t skip) {
        std::vector<double> v;
        std::size_t pos = skip;
        while (pos <= spec.size()) {
            const auto next = spec.find(':', pos);
            v.push_back(std::stod(spec.substr(pos, next - pos)));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        return v;
    };
    if (spec.rfind("ind:", 0) == 0) {
        const auto v = fields(4);
        if (v.size() != 2) throw std::invalid_argument("ind:a:b expects two numbers");
        return indicator(v[0], v[1]);
    }
    if (spec.rfind("sind:", 0) == 0) {
        const auto v = fields(5);
        if (v.size() != 3) throw std::invalid_argument("sind:a:b:w expects three numbers");
        return smooth_indicator(v[0], v[1], v[2]);
    }
    throw std::invalid_argument("unknown observable: " + spec);
}

} // namespace observables

/// Weights W with sum_i W_i u_i ~ int_0^1 psi(x) x^{-s} u(x) dx for grid
/// functions on `mesh`: local cubics in u, Gauss-Legendre on each cell,
/// cells split at the jumps of psi.
inline std::vector<double> observable_weights(const Observable& psi, const Mesh& mesh, double s) {
    if (!(s < 1.0)) throw std::domain_error("observable_weights: exponent must be < 1");
    const auto& x = mesh.nodes();
    const std::size_t n = x.size();
    std::vector<double> W(n, 0.0);
    double lw[4];
    auto piece = [&](double a, double b, std::size_t j0) {
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        for (int q = 0; q < 4; ++q) {
            const double y = mid + half * detail::gauss4_nodes[q];
            const double wy = half * detail::gauss4_weights[q] * psi(y) * (s == 0.0 ? 1.0 : std::pow(y, -s));
            detail::lagrange_weights(y, x.data() + j0, 4, lw);
            for (int k = 0; k < 4; ++k) W[j0 + k] += wy * lw[k];
        }
    };
    for (std::size_t c = 0; c + 1 < n; ++c) {
        const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(c) - 1, 4, n);
        double a = x[c];
        for (double br : psi.breaks) {
            if (br > a && br < x[c + 1]) {
                piece(a, br, j0);
                a = br;
            }
        }
        piece(a, x[c + 1], j0);
    }
    W[0] += psi(0.5 * x[0]) * std::pow(x[0], 1.0 - s) / (1.0 - s);
    return W;
}

/// int psi f dx.
inline double pair(const Observable& psi, const GridFunction& f) {
    const auto W = observable_weights(psi, f.mesh(), f.exponent());
    double sum = 0.0;
    for (std::size_t i = 0; i < W.size(); ++i) sum += W[i] * f.values()[i];
    return sum;
}

} // namespace lrim

#pragma once

// Finite-difference and interpolation weights on arbitrary node sets.

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

namespace lrim::detail {

/// Fornberg's recursion: weights c[k][j] such that
/// f^(k)(z) ~ sum_j c[k][j] f(x[j]) for k = 0..max_order.
inline std::vector<std::vector<double>> fornberg_weights(double z, const double* x, std::size_t n, int max_order) {
    const int m = max_order;
    std::vector<std::vector<double>> c(m + 1, std::vector<double>(n, 0.0));
    double c1 = 1.0;
    double c4 = x[0] - z;
    c[0][0] = 1.0;
    for (std::size_t i = 1; i < n; ++i) {
        const int mn = std::min<int>(static_cast<int>(i), m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i] - z;
        for (std::size_t j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) {
                    c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for (int k = mn; k >= 1; --k) {
                c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    return c;
}

/// Lagrange basis values at z for the nodes x[0..n).
inline void lagrange_weights(double z, const double* x, std::size_t n, double* w) {
    for (std::size_t j = 0; j < n; ++j) {
        double num = 1.0, den = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) continue;
            num *= z - x[k];
            den *= x[j] - x[k];
        }
        w[j] = num / den;
    }
}

/// Lagrange basis derivatives d/dz at z.
inline void lagrange_derivative_weights(double z, const double* x, std::size_t n, double* w) {
    const auto c = fornberg_weights(z, x, n, 1);
    std::copy(c[1].begin(), c[1].end(), w);
}

/// First index of a width-`width` window centered on `center`, clamped to [0, size).
inline std::size_t window_start(std::ptrdiff_t center_left, std::size_t width, std::size_t size) {
    const std::ptrdiff_t max_start = static_cast<std::ptrdiff_t>(size) - static_cast<std::ptrdiff_t>(width);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(center_left, 0, std::max<std::ptrdiff_t>(max_start, 0)));
}

inline constexpr std::array<double, 4> gauss4_nodes = {
    -0.861136311594052575224, -0.339981043584856264803, 0.339981043584856264803, 0.861136311594052575224};
inline constexpr std::array<double, 4> gauss4_weights = {
    0.347854845137453857373, 0.652145154862546142627, 0.652145154862546142627, 0.347854845137453857373};

} // namespace lrim::detail

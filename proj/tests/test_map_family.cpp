#include <lrim/map_family.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using lrim::MapParams;

namespace {

// Plain bisection in long double: the independent oracle for g_alpha.
long double bisect_inverse(double alpha, long double y) {
    long double lo = 0.0L, hi = 0.5L;
    const long double c = std::pow(2.0L, static_cast<long double>(alpha));
    for (int i = 0; i < 200; ++i) {
        const long double mid = 0.5L * (lo + hi);
        const long double f = mid + c * mid * std::pow(mid, static_cast<long double>(alpha));
        (f < y ? lo : hi) = mid;
    }
    return 0.5L * (lo + hi);
}

std::vector<double> log_grid(double lo, double hi, int n) {
    std::vector<double> xs;
    for (int i = 0; i < n; ++i) {
        xs.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    }
    return xs;
}

} // namespace

TEST(MapParams, RejectsOutOfRange) {
    EXPECT_THROW(MapParams(-0.1), std::domain_error);
    EXPECT_THROW(MapParams(1.0), std::domain_error);
    EXPECT_THROW(MapParams(std::nan("")), std::domain_error);
    EXPECT_NO_THROW(MapParams(0.0));
    EXPECT_NO_THROW(MapParams(0.999));
}

TEST(Forward, Examples) {
    EXPECT_DOUBLE_EQ(lrim::forward(MapParams(0.0), 0.25), 0.5);
    for (double a : {0.0, 0.3, 0.7}) {
        EXPECT_EQ(lrim::forward(MapParams(a), 0.0), 0.0);
        EXPECT_EQ(lrim::forward(MapParams(a), 0.5), 0.0);
        EXPECT_NEAR(lrim::forward(MapParams(a), std::nextafter(0.5, 0.0)), 1.0, 1e-15);
        EXPECT_EQ(lrim::forward(MapParams(a), 1.0), 1.0);
    }
    // 30-digit reference: 0.3 (1 + sqrt(2) sqrt(0.3)).
    EXPECT_NEAR(lrim::forward(MapParams(0.5), 0.3), 0.532379000772445013, 1e-15);
    EXPECT_THROW(lrim::forward(MapParams(0.5), 1.5), std::domain_error);
    EXPECT_THROW(lrim::forward(MapParams(0.5), -1e-3), std::domain_error);
}

TEST(ForwardDeriv, Examples) {
    EXPECT_EQ(lrim::forward_deriv(MapParams(0.0), 0.3, 1), 2.0);
    EXPECT_NEAR(lrim::forward_deriv(MapParams(0.5), 0.25, 1), 2.06066017177982129, 1e-14);
    for (double a : {0.0, 0.4}) {
        EXPECT_EQ(lrim::forward_deriv(MapParams(a), 0.75, 2), 0.0);
        EXPECT_EQ(lrim::forward_deriv(MapParams(a), 0.75, 1), 2.0);
    }
    EXPECT_THROW(lrim::forward_deriv(MapParams(0.4), 0.0, 2), std::domain_error);
    EXPECT_EQ(lrim::forward_deriv(MapParams(0.0), 0.0, 2), 0.0);
}

TEST(ForwardDeriv, MatchesCentralDifferences) {
    const MapParams p(0.35);
    for (double x : {1e-3, 0.01, 0.1, 0.3, 0.45}) {
        for (int order = 1; order <= 3; ++order) {
            const double h = 1e-4 * x;
            const double fd = (lrim::forward_deriv(p, x + h, order) - lrim::forward_deriv(p, x - h, order)) / (2 * h);
            const double closed = lrim::forward_deriv(p, x, order + 1);
            EXPECT_NEAR(fd, closed, 1e-6 * std::abs(closed) + 1e-9) << "x=" << x << " order=" << order;
        }
    }
}

TEST(BranchInverse, Examples) {
    for (double y : {0.0, 0.1, 0.37, 0.999}) {
        EXPECT_DOUBLE_EQ(lrim::branch_inverse(MapParams(0.0), y), y / 2);
    }
    for (double a : {0.1, 0.5, 0.9}) {
        EXPECT_EQ(lrim::branch_inverse(MapParams(a), 1.0), 0.5);
    }
    EXPECT_NEAR(lrim::branch_inverse(MapParams(0.5), 0.4), static_cast<double>(bisect_inverse(0.5, 0.4L)), 1e-14);
    EXPECT_NEAR(lrim::branch_inverse(MapParams(0.5), 0.4), 0.236916881220703951, 1e-15);
}

TEST(BranchInverse, RoundTripAndMonotone) {
    for (double a : {0.05, 0.25, 0.5, 0.75, 0.95}) {
        const MapParams p(a);
        double prev = -1.0;
        for (double y : log_grid(1e-12, 1.0, 400)) {
            const double g = lrim::branch_inverse(p, y);
            EXPECT_GT(g, prev);
            prev = g;
            EXPECT_NEAR(lrim::left_branch(p, g), y, 10 * 1e-13 * y + 1e-300);
            const long double oracle = bisect_inverse(a, y);
            EXPECT_NEAR(g, static_cast<double>(oracle), 2e-15 * g + 1e-300);
        }
    }
}

TEST(BranchInverse, ExpansionBound) {
    // |g(y) - y (1 - 2^a y^a)| / y^(1+2a) stays bounded on (0, 1].
    for (double a : {0.2, 0.5, 0.8}) {
        const MapParams p(a);
        double worst = 0.0;
        for (double y : log_grid(1e-10, 1.0, 300)) {
            const double dev = std::abs(lrim::branch_inverse(p, y) - y * (1 - p.two_pow_alpha() * std::pow(y, a)));
            worst = std::max(worst, dev / std::pow(y, 1 + 2 * a));
        }
        EXPECT_LT(worst, 10.0) << "alpha=" << a;
    }
}

TEST(BranchInverseDeriv, Examples) {
    EXPECT_DOUBLE_EQ(lrim::branch_inverse_deriv(MapParams(0.0), 0.42, 1), 0.5);
    for (double a : {0.1, 0.5, 0.9}) {
        EXPECT_NEAR(lrim::branch_inverse_deriv(MapParams(a), 1.0, 1), 1.0 / (2.0 + a), 1e-14);
    }
    const MapParams p(0.5);
    const double h = 1e-5;
    const double fd = (lrim::branch_inverse_deriv(p, 0.4 + h, 1) - lrim::branch_inverse_deriv(p, 0.4 - h, 1)) / (2 * h);
    EXPECT_NEAR(lrim::branch_inverse_deriv(p, 0.4, 2), fd, 1e-6);
}

TEST(BranchInverseDeriv, SecondOrderConsistency) {
    // |closed - FD_h| <= C h^2 with a C that is stable under halving.
    const MapParams p(0.4);
    for (double y : log_grid(1e-4, 0.9, 12)) {
        for (int order = 1; order <= 3; ++order) {
            auto fd = [&](double h) {
                const auto lower = [&](double t) {
                    return order == 1 ? lrim::branch_inverse(p, t) : lrim::branch_inverse_deriv(p, t, order - 1);
                };
                return (lower(y + h) - lower(y - h)) / (2 * h);
            };
            const double closed = lrim::branch_inverse_deriv(p, y, order);
            const double h = 1e-2 * y;
            const double e1 = std::abs(fd(h) - closed);
            const double e2 = std::abs(fd(h / 2) - closed);
            if (e1 > 1e-9 * std::abs(closed)) {
                EXPECT_NEAR(e1 / e2, 4.0, 0.6) << "y=" << y << " order=" << order;
            }
        }
    }
}

TEST(VelocityField, AlphaZeroClosedForms) {
    const MapParams p(0.0);
    EXPECT_NEAR(lrim::velocity_field(p, 0.5), -std::log(2.0) / 4, 1e-15);
    for (double x : log_grid(1e-8, 1.0, 50)) {
        EXPECT_NEAR(lrim::velocity_field(p, x), x * (std::log(2.0) + std::log(x / 2)) / 2, 1e-15);
        EXPECT_NEAR(lrim::velocity_field_d1(p, x), (1 + std::log(2.0) + std::log(x / 2)) / 2, 1e-14);
        EXPECT_NEAR(lrim::velocity_field_d2(p, x), 0.5 / x, 1e-12 / x);
    }
}

TEST(VelocityField, Endpoints) {
    for (double a : {0.0, 0.3, 0.8}) {
        const MapParams p(a);
        EXPECT_EQ(lrim::velocity_field(p, 0.0), 0.0);
        EXPECT_NEAR(lrim::velocity_field(p, 1.0), 0.0, 1e-16);
        EXPECT_EQ(lrim::dalpha_velocity_field(p, 0.0), 0.0);
        EXPECT_THROW(lrim::velocity_field_d1(p, 0.0), std::domain_error);
        EXPECT_THROW(lrim::velocity_field_d2(p, 0.0), std::domain_error);
    }
}

TEST(VelocityField, XDerivativesMatchFiniteDifferences) {
    for (double a : {0.0, 0.25, 0.6}) {
        const MapParams p(a);
        for (double x : log_grid(1e-6, 0.999, 25)) {
            const double h = 1e-4 * x;
            const double fd1 = (lrim::velocity_field(p, x + h) - lrim::velocity_field(p, x - h)) / (2 * h);
            const double fd2 = (lrim::velocity_field_d1(p, x + h) - lrim::velocity_field_d1(p, x - h)) / (2 * h);
            EXPECT_NEAR(lrim::velocity_field_d1(p, x), fd1, 1e-7 * (std::abs(fd1) + 1));
            EXPECT_NEAR(lrim::velocity_field_d2(p, x), fd2, 1e-7 * (std::abs(fd2) + 1));
        }
    }
}

TEST(VelocityField, EnvelopesBounded) {
    // sup |field| / envelope stays below a fixed constant down to 1e-14.
    for (double a : {0.1, 0.4, 0.7}) {
        const MapParams p(a);
        auto sup_ratio = [&](double lo) {
            double r[4] = {0, 0, 0, 0};
            for (double x : log_grid(lo, 1.0, 400)) {
                const double L = std::abs(std::log(x)) + 1;
                const auto j = lrim::field_jet(p, x);
                r[0] = std::max(r[0], std::abs(j.X) / (std::pow(x, 1 + a) * L));
                r[1] = std::max(r[1], std::abs(j.dX) / (std::pow(x, a) * L));
                r[2] = std::max(r[2], std::abs(j.d2X) / (std::pow(x, a - 1) * L));
                r[3] = std::max(r[3], std::abs(j.aX) / (std::pow(x, 1 + a) * L * L));
            }
            return std::vector<double>(r, r + 4);
        };
        const auto fine = sup_ratio(1e-14);
        for (int k = 0; k < 4; ++k) {
            EXPECT_LT(fine[k], 4.0) << "alpha=" << a << " field " << k;
        }
    }
}

TEST(DalphaBranchInverse, MatchesAlphaDifferences) {
    EXPECT_NEAR(lrim::dalpha_branch_inverse(MapParams(0.4), 1.0), 0.0, 1e-16);
    EXPECT_EQ(lrim::dalpha_branch_inverse(MapParams(0.4), 0.0), 0.0);
    const double eps = 1e-5;
    const double fd = (lrim::branch_inverse(MapParams(0.3 + eps), 0.5) - lrim::branch_inverse(MapParams(0.3 - eps), 0.5)) / (2 * eps);
    EXPECT_NEAR(lrim::dalpha_branch_inverse(MapParams(0.3), 0.5), fd, 1e-7);
    // The alternative form -X / T'(g)^2 is far from the differences.
    const auto j = lrim::field_jet(MapParams(0.3), 0.5);
    EXPECT_GT(std::abs(-j.X * j.dg * j.dg - fd), 1e-2);
}

TEST(DalphaFields, MatchAlphaDifferences) {
    const double eps = 1e-5;
    for (double a : {0.2, 0.45, 0.7}) {
        for (double x : log_grid(1e-5, 1.0, 20)) {
            const auto jp = lrim::field_jet(MapParams(a + eps), x);
            const auto jm = lrim::field_jet(MapParams(a - eps), x);
            const auto j = lrim::field_jet(MapParams(a), x);
            EXPECT_NEAR(j.ag, (jp.g - jm.g) / (2 * eps), 1e-7 * (std::abs(j.ag) + x));
            EXPECT_NEAR(j.aX, (jp.X - jm.X) / (2 * eps), 1e-7 * (std::abs(j.aX) + x));
            EXPECT_NEAR(j.adX, (jp.dX - jm.dX) / (2 * eps), 1e-7 * (std::abs(j.adX) + 1));
            EXPECT_NEAR(j.ad2X, (jp.d2X - jm.d2X) / (2 * eps), 1e-6 * (std::abs(j.ad2X) + 1 / x));
        }
    }
}

TEST(DalphaFields, EndpointValues) {
    const double eps = 1e-5;
    for (double a : {0.1, 0.5, 0.8}) {
        const double fd = (lrim::velocity_field(MapParams(a + eps), 1.0) - lrim::velocity_field(MapParams(a - eps), 1.0)) / (2 * eps);
        EXPECT_NEAR(lrim::dalpha_velocity_field(MapParams(a), 1.0), fd, 1e-7);
    }
    // One-sided difference at the boundary alpha = 0.
    const double e = 1e-6;
    const double fd0 = (lrim::velocity_field(MapParams(e), 0.5) - lrim::velocity_field(MapParams(0.0), 0.5)) / e;
    EXPECT_NEAR(lrim::dalpha_velocity_field(MapParams(0.0), 0.5), fd0, 1e-5);
    // Envelope limit at 0.
    EXPECT_LT(std::abs(lrim::dalpha_velocity_field(MapParams(0.3), 1e-12)), 1e-12);
}

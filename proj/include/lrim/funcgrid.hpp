#pragma once

// Functions on (0, 1] with an explicit x^{-s} factor, stored on a mesh that
// is graded towards the neutral fixed point at 0.

#include <lrim/detail/stencils.hpp>
#include <lrim/map_family.hpp>

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrim {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Parameters from which a mesh is rebuilt bit-for-bit.
struct MeshSpec {
    double alpha = 0.0;
    int n = 4096;
    int orbit_points = 0;      // L; 0 means "pick from x_min"
    double x_min = 1e-10;
    int per_decade = 0;        // geometric refinement density; 0 means auto

    friend bool operator==(const MeshSpec&, const MeshSpec&) = default;
};

inline constexpr int interp_points = 6;
inline constexpr int stencil_points = 5;

class Mesh;
using MeshPtr = std::shared_ptr<const Mesh>;

class Mesh {
public:
    /// Mesh from an explicit node list (strictly increasing, ending at 1).
    static MeshPtr from_nodes(std::vector<double> nodes, MeshSpec spec = {}, double grading = 1.0) {
        return MeshPtr(new Mesh(std::move(nodes), spec, grading));
    }

    const std::vector<double>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double x_min() const noexcept { return nodes_.front(); }
    double grading_exponent() const noexcept { return grading_; }
    const MeshSpec& spec() const noexcept { return spec_; }
    double operator[](std::size_t i) const { return nodes_[i]; }

    /// Index c with nodes[c] <= y < nodes[c+1] (clamped to a valid cell).
    std::size_t cell_of(double y) const {
        const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), y);
        const auto c = static_cast<std::ptrdiff_t>(it - nodes_.begin()) - 1;
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(size()) - 2));
    }

    /// Interpolation weights for u at y; below x_min u is held constant.
    /// Returns the number of entries written to idx/w (at most interp_points).
    int interp_weights(double y, std::size_t* idx, double* w) const {
        if (!(y >= 0.0) || y > 1.0 + 1e-15) {
            throw std::domain_error("interpolation point outside [0,1]: " + std::to_string(y));
        }
        if (y <= nodes_.front()) {
            idx[0] = 0;
            w[0] = 1.0;
            return 1;
        }
        const std::size_t c = cell_of(y);
        if (nodes_[c] == y) {
            idx[0] = c;
            w[0] = 1.0;
            return 1;
        }
        const std::size_t width = std::min<std::size_t>(interp_points, size());
        const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(c) - (static_cast<std::ptrdiff_t>(width) / 2 - 1), width, size());
        detail::lagrange_weights(y, nodes_.data() + j0, width, w);
        for (std::size_t k = 0; k < width; ++k) idx[k] = j0 + k;
        return static_cast<int>(width);
    }

    /// Weights of d/dy of the same interpolant.
    int interp_derivative_weights(double y, std::size_t* idx, double* w) const {
        if (y < nodes_.front()) {
            idx[0] = 0;
            w[0] = 0.0;
            return 1;
        }
        const std::size_t c = cell_of(y);
        const std::size_t width = std::min<std::size_t>(interp_points, size());
        const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(c) - (static_cast<std::ptrdiff_t>(width) / 2 - 1), width, size());
        detail::lagrange_derivative_weights(y, nodes_.data() + j0, width, w);
        for (std::size_t k = 0; k < width; ++k) idx[k] = j0 + k;
        return static_cast<int>(width);
    }

    /// Nodal differentiation matrix for d^k/dx^k, k = 1..3.
    const SparseMatrix& derivative_matrix(int order) const {
        if (order < 1 || order > 3) throw std::invalid_argument("derivative order must be 1..3");
        return deriv_[order - 1];
    }

    /// d^k u/dx^k at the nodes, applied as sum_j w_ij (u_j - u_i) so that
    /// constants differentiate to exactly zero despite huge weights near x_min.
    std::vector<double> apply_derivative(int order, const std::vector<double>& u) const {
        const SparseMatrix& D = derivative_matrix(order);
        std::vector<double> out(u.size(), 0.0);
        for (Eigen::Index i = 0; i < D.outerSize(); ++i) {
            double acc = 0.0;
            for (SparseMatrix::InnerIterator it(D, i); it; ++it) {
                if (it.col() != i) acc += it.value() * (u[it.col()] - u[i]);
            }
            out[i] = acc;
        }
        return out;
    }

    /// Quadrature weights w with sum_i w_i u_i ~ int_0^1 x^{-s} u(x) dx.
    const std::vector<double>& quadrature_weights(double s) const {
        if (!(s < 1.0)) {
            throw std::domain_error("x^{-s} is not integrable at 0 for s = " + std::to_string(s));
        }
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto it = weights_.find(s);
        if (it == weights_.end()) {
            it = weights_.emplace(s, build_weights(s)).first;
        }
        return it->second;
    }

private:
    Mesh(std::vector<double> nodes, MeshSpec spec, double grading)
        : nodes_(std::move(nodes)), spec_(spec), grading_(grading) {
        if (nodes_.size() < static_cast<std::size_t>(stencil_points)) {
            throw std::invalid_argument("mesh needs at least 5 nodes");
        }
        if (!(nodes_.front() > 0.0) || nodes_.back() != 1.0) {
            throw std::invalid_argument("mesh nodes must lie in (0,1] and end at 1");
        }
        for (std::size_t i = 1; i < nodes_.size(); ++i) {
            if (!(nodes_[i] > nodes_[i - 1])) throw std::invalid_argument("mesh nodes must be strictly increasing");
        }
        build_stencils();
    }

    void build_stencils() {
        const std::size_t n = size();
        std::vector<Eigen::Triplet<double>> t[3];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(i) - stencil_points / 2, stencil_points, n);
            auto c = detail::fornberg_weights(nodes_[i], nodes_.data() + j0, stencil_points, 3);
            // Rows annihilate constants exactly; the node's own weight absorbs rounding.
            const std::size_t self = i - j0;
            for (int k = 0; k < 3; ++k) {
                double off = 0.0;
                for (int j = 0; j < stencil_points; ++j) {
                    if (static_cast<std::size_t>(j) != self) off += c[k + 1][j];
                }
                c[k + 1][self] = -off;
            }
            for (int k = 0; k < 3; ++k) {
                for (int j = 0; j < stencil_points; ++j) {
                    t[k].emplace_back(static_cast<int>(i), static_cast<int>(j0 + j), c[k + 1][j]);
                }
            }
        }
        for (int k = 0; k < 3; ++k) {
            deriv_[k].resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
            deriv_[k].setFromTriplets(t[k].begin(), t[k].end());
        }
    }

    // Composite rule: on each cell, the cubic through four neighbouring
    // nodes times x^{-s}, integrated by 4-point Gauss-Legendre; the tail
    // below x_min carries u(x_min).
    std::vector<double> build_weights(double s) const {
        const std::size_t n = size();
        std::vector<double> w(n, 0.0);
        double lw[4];
        for (std::size_t c = 0; c + 1 < n; ++c) {
            const double a = nodes_[c], b = nodes_[c + 1];
            const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
            const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(c) - 1, 4, n);
            for (int q = 0; q < 4; ++q) {
                const double x = mid + half * detail::gauss4_nodes[q];
                const double wx = half * detail::gauss4_weights[q] * (s == 0.0 ? 1.0 : std::pow(x, -s));
                detail::lagrange_weights(x, nodes_.data() + j0, 4, lw);
                for (int k = 0; k < 4; ++k) w[j0 + k] += wx * lw[k];
            }
        }
        w[0] += std::pow(nodes_[0], 1.0 - s) / (1.0 - s);
        return w;
    }

    std::vector<double> nodes_;
    MeshSpec spec_;
    double grading_;
    SparseMatrix deriv_[3];
    mutable std::mutex cache_mutex_;
    mutable std::map<double, std::vector<double>> weights_;
};

/// Number of neutral-orbit points g^l(1) kept above 10 x_min, capped at 64.
inline int default_orbit_points(const MapParams& p, double x_min) {
    int L = 0;
    double x = 1.0;
    while (L < 64) {
        const double next = branch_inverse(p, x);
        if (!(next > 10.0 * x_min)) break;
        x = next;
        ++L;
    }
    return L;
}

/// Graded mesh for the map with parameter p: nodes (i/n)^gamma down to the
/// point where their log-spacing matches a geometric refinement, geometric
/// nodes from there to x_min, and the neutral orbit points g^l(1), l <= L.
inline MeshPtr build_mesh(const MapParams& p, int n, int L = -1, double x_min = 1e-10, int per_decade = 0) {
    if (n < 64) throw std::invalid_argument("build_mesh: n must be >= 64");
    if (!(x_min > 0.0 && x_min < 0.01)) throw std::invalid_argument("build_mesh: x_min must lie in (0, 0.01)");
    if (L < 0) L = default_orbit_points(p, x_min);

    std::vector<double> orbit{1.0};
    for (int l = 1; l <= L; ++l) orbit.push_back(branch_inverse(p, orbit.back()));
    if (!(orbit.back() > x_min)) {
        throw std::invalid_argument("build_mesh: x_min must lie below the last orbit point g^L(1)");
    }

    const double gamma = std::max(2.0, 2.0 / (1.0 - p.alpha()));
    const int ppd = per_decade > 0 ? per_decade : std::max(32, n / 32);
    const double delta = std::numbers::ln10 / ppd;

    // Graded node i has log-spacing ~ gamma / i; switch to geometric below it.
    const int i_switch = std::clamp(static_cast<int>(std::ceil(gamma / delta)), 1, n / 2);
    double x_switch = std::pow(static_cast<double>(i_switch) / n, gamma);

    std::vector<double> free_nodes;
    if (x_switch > x_min) {
        const double span = std::log(x_switch / x_min);
        const int steps = std::max(1, static_cast<int>(std::ceil(span / delta)));
        for (int j = steps; j >= 1; --j) free_nodes.push_back(x_min * std::exp(span * (steps - j) / steps));
    } else {
        x_switch = x_min;
    }
    for (int i = i_switch; i <= n; ++i) {
        const double x = std::pow(static_cast<double>(i) / n, gamma);
        if (x > x_switch) free_nodes.push_back(x);
    }
    std::sort(free_nodes.begin(), free_nodes.end());

    std::vector<double> fixed = orbit;
    fixed.push_back(x_min);
    fixed.push_back(0.5);
    std::sort(fixed.begin(), fixed.end());
    fixed.erase(std::unique(fixed.begin(), fixed.end()), fixed.end());

    // Drop free nodes that crowd a fixed one.
    std::vector<double> kept;
    for (std::size_t i = 0; i < free_nodes.size(); ++i) {
        const double x = free_nodes[i];
        const double left = i > 0 ? x - free_nodes[i - 1] : free_nodes[std::min(i + 1, free_nodes.size() - 1)] - x;
        const double right = i + 1 < free_nodes.size() ? free_nodes[i + 1] - x : left;
        const double spacing = std::min(left, right);
        const auto it = std::lower_bound(fixed.begin(), fixed.end(), x);
        double nearest = std::numeric_limits<double>::infinity();
        if (it != fixed.end()) nearest = std::min(nearest, *it - x);
        if (it != fixed.begin()) nearest = std::min(nearest, x - *(it - 1));
        if (nearest > 0.3 * spacing) kept.push_back(x);
    }
    kept.insert(kept.end(), fixed.begin(), fixed.end());
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());

    MeshSpec spec{p.alpha(), n, L, x_min, ppd};
    return Mesh::from_nodes(std::move(kept), spec, gamma);
}

inline MeshPtr build_mesh(const MapParams& p, const MeshSpec& spec) {
    return build_mesh(p, spec.n, spec.orbit_points > 0 ? spec.orbit_points : -1, spec.x_min, spec.per_decade);
}

/// f(x) = x^{-s} u(x), with u stored at the mesh nodes.
class GridFunction {
public:
    GridFunction() = default;

    GridFunction(MeshPtr mesh, std::vector<double> u, double s = 0.0)
        : mesh_(std::move(mesh)), u_(std::move(u)), s_(s) {
        if (!mesh_) throw std::invalid_argument("GridFunction: null mesh");
        if (u_.size() != mesh_->size()) throw std::invalid_argument("GridFunction: value count does not match mesh");
        if (!(s_ >= 0.0) || !std::isfinite(s_)) throw std::invalid_argument("GridFunction: exponent must be finite and >= 0");
        for (double v : u_) {
            if (!std::isfinite(v)) throw std::domain_error("GridFunction: non-finite nodal value");
        }
    }

    /// Samples the full function f and stores u = x^s f.
    template <class F>
    static GridFunction from_function(MeshPtr mesh, F&& f, double s = 0.0) {
        std::vector<double> u(mesh->size());
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double x = (*mesh)[i];
            u[i] = (s == 0.0 ? 1.0 : std::pow(x, s)) * f(x);
        }
        return GridFunction(std::move(mesh), std::move(u), s);
    }

    /// Samples u directly; the function represented is x^{-s} u.
    template <class F>
    static GridFunction from_reduced(MeshPtr mesh, F&& u_fn, double s) {
        std::vector<double> u(mesh->size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = u_fn((*mesh)[i]);
        return GridFunction(std::move(mesh), std::move(u), s);
    }

    static GridFunction constant(MeshPtr mesh, double c) {
        const auto n = mesh->size();
        return GridFunction(std::move(mesh), std::vector<double>(n, c), 0.0);
    }

    const Mesh& mesh() const { return *mesh_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    const std::vector<double>& values() const noexcept { return u_; }
    double exponent() const noexcept { return s_; }
    std::size_t size() const noexcept { return u_.size(); }

    double at_node(std::size_t i) const {
        return s_ == 0.0 ? u_[i] : std::pow((*mesh_)[i], -s_) * u_[i];
    }

    /// Plain nodal values x^{-s} u.
    std::vector<double> nodal() const {
        std::vector<double> out(u_.size());
        for (std::size_t i = 0; i < u_.size(); ++i) out[i] = at_node(i);
        return out;
    }

    /// Same function, re-expressed with singular exponent s.
    GridFunction with_exponent(double s) const {
        if (s == s_) return *this;
        std::vector<double> u(u_.size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::pow((*mesh_)[i], s - s_) * u_[i];
        return GridFunction(mesh_, std::move(u), s);
    }

    bool same_mesh(const GridFunction& o) const {
        return mesh_ == o.mesh_ || (mesh_ && o.mesh_ && mesh_->nodes() == o.mesh_->nodes());
    }

    GridFunction& operator+=(const GridFunction& o) { return axpy(1.0, o); }
    GridFunction& operator-=(const GridFunction& o) { return axpy(-1.0, o); }
    GridFunction& operator*=(double c) {
        for (double& v : u_) v *= c;
        return *this;
    }

    /// this += c * o, converting o to this function's exponent.
    GridFunction& axpy(double c, const GridFunction& o) {
        require_same_mesh(o);
        if (o.s_ == s_) {
            for (std::size_t i = 0; i < u_.size(); ++i) u_[i] += c * o.u_[i];
        } else {
            for (std::size_t i = 0; i < u_.size(); ++i) u_[i] += c * std::pow((*mesh_)[i], s_ - o.s_) * o.u_[i];
        }
        return *this;
    }

    /// Nodewise product with a plain field sampled at the nodes.
    GridFunction times(const std::vector<double>& field) const {
        if (field.size() != u_.size()) throw std::invalid_argument("GridFunction::times: size mismatch");
        std::vector<double> u(u_.size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = field[i] * u_[i];
        return GridFunction(mesh_, std::move(u), s_);
    }

    void require_same_mesh(const GridFunction& o) const {
        if (!same_mesh(o)) throw std::invalid_argument("GridFunctions live on different meshes");
    }

private:
    MeshPtr mesh_;
    std::vector<double> u_;
    double s_ = 0.0;
};

inline GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
inline GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
inline GridFunction operator*(double c, GridFunction a) { return a *= c; }

/// int_0^1 x^{-s} u(x) dx.
inline double integrate(const GridFunction& f) {
    const auto& w = f.mesh().quadrature_weights(f.exponent());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * f.values()[i];
    return sum;
}

/// L1 norm, int |f| dx, with the same weights.
inline double norm_l1(const GridFunction& f) {
    const auto& w = f.mesh().quadrature_weights(f.exponent());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sum += std::abs(w[i] * f.values()[i]);
    return sum;
}

/// L1 norm of a function given by exponent >= 1; converts to exponent 0 first.
inline double norm_l1_any(const GridFunction& f) {
    return f.exponent() < 1.0 ? norm_l1(f) : norm_l1(f.with_exponent(0.0));
}

/// Interpolated value of u at x, times x^{-s}.
inline double evaluate(const GridFunction& f, double x) {
    if (!(x > 0.0)) throw std::domain_error("evaluate: x must be positive");
    std::size_t idx[interp_points];
    double w[interp_points];
    const int m = f.mesh().interp_weights(x, idx, w);
    double u = 0.0;
    for (int k = 0; k < m; ++k) u += w[k] * f.values()[idx[k]];
    return f.exponent() == 0.0 ? u : std::pow(x, -f.exponent()) * u;
}

/// Derivative of u at the nodes (5-point stencils).
inline std::vector<double> reduced_derivative(const GridFunction& f, int order = 1) {
    return f.mesh().apply_derivative(order, f.values());
}

/// (x^{-s} u)' = x^{-(s+1)} (x u' - s u); the result carries exponent s+1.
inline GridFunction differentiate(const GridFunction& f) {
    const auto du = reduced_derivative(f, 1);
    const auto& x = f.mesh().nodes();
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * du[i] - f.exponent() * f.values()[i];
    return GridFunction(f.mesh_ptr(), std::move(v), f.exponent() + 1.0);
}

/// Plain nodal values of the k-th derivative of x^{-s} u, k = 0..3, by Leibniz.
inline std::vector<double> nodal_derivative(const GridFunction& f, int order) {
    if (order == 0) return f.nodal();
    if (order < 0 || order > 3) throw std::invalid_argument("nodal_derivative: order must be 0..3");
    std::vector<std::vector<double>> du(order + 1);
    du[0] = f.values();
    for (int k = 1; k <= order; ++k) du[k] = reduced_derivative(f, k);
    const double s = f.exponent();
    const auto& x = f.mesh().nodes();
    std::vector<double> out(f.size());
    static constexpr int binom[4][4] = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};
    for (std::size_t i = 0; i < out.size(); ++i) {
        // d^m/dx^m x^{-s} = (-s)(-s-1)...(-s-m+1) x^{-s-m}
        double acc = 0.0;
        for (int j = 0; j <= order; ++j) {
            const int m = order - j;
            double coef = 1.0;
            for (int r = 0; r < m; ++r) coef *= -s - r;
            acc += binom[order][j] * coef * std::pow(x[i], -s - m) * du[j][i];
        }
        out[i] = acc;
    }
    return out;
}

/// F(x_i) = int_0^{x_i} f dx at the nodes (exponent 0), with the same
/// local-cubic Gauss rule and constant-u tail as integrate().
inline GridFunction antiderivative(const GridFunction& f) {
    const double s = f.exponent();
    if (!(s < 1.0)) throw std::domain_error("antiderivative: exponent must be < 1");
    const auto& x = f.mesh().nodes();
    const auto& u = f.values();
    const std::size_t n = x.size();
    std::vector<double> F(n);
    F[0] = u[0] * std::pow(x[0], 1.0 - s) / (1.0 - s);
    double lw[4];
    for (std::size_t c = 0; c + 1 < n; ++c) {
        const double half = 0.5 * (x[c + 1] - x[c]), mid = 0.5 * (x[c + 1] + x[c]);
        const std::size_t j0 = detail::window_start(static_cast<std::ptrdiff_t>(c) - 1, 4, n);
        double cell = 0.0;
        for (int q = 0; q < 4; ++q) {
            const double y = mid + half * detail::gauss4_nodes[q];
            detail::lagrange_weights(y, x.data() + j0, 4, lw);
            double uy = 0.0;
            for (int k = 0; k < 4; ++k) uy += lw[k] * u[j0 + k];
            cell += half * detail::gauss4_weights[q] * (s == 0.0 ? 1.0 : std::pow(y, -s)) * uy;
        }
        F[c + 1] = F[c] + cell;
    }
    return GridFunction(f.mesh_ptr(), std::move(F), 0.0);
}

/// Widest cell of the mesh.
inline double max_cell_width(const Mesh& m) {
    double h = 0.0;
    for (std::size_t i = 1; i < m.size(); ++i) h = std::max(h, m[i] - m[i - 1]);
    return h;
}

} // namespace lrim

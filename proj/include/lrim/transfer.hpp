#pragma once

// Transfer operators of T_alpha on grid functions, their alpha-derivatives,
// the invariant density, and the Ulam matrix used as an independent model.

#include <lrim/funcgrid.hpp>
#include <lrim/map_family.hpp>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrim {

/// Nodal samples of the velocity field and its derivatives.
struct FieldTable {
    std::vector<double> X, dX, d2X, aX, adX, ad2X;
};

/// Sign convention for the (d/dalpha X) (N phi)' part of the seven-term split.
enum class TermISign {
    from_product_rule,  // -(dX)' N phi - dX (N phi)'
    as_printed          // -(dX)' N phi + dX (N phi)'
};

class TransferOperator {
public:
    TransferOperator(const MapParams& p, MeshPtr mesh) : p_(p), mesh_(std::move(mesh)) {
        if (!mesh_) throw std::invalid_argument("TransferOperator: null mesh");
        const auto& x = mesh_->nodes();
        const std::size_t n = x.size();
        g_.resize(n);
        dg_.resize(n);
        fields_.X.resize(n); fields_.dX.resize(n); fields_.d2X.resize(n);
        fields_.aX.resize(n); fields_.adX.resize(n); fields_.ad2X.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = field_jet(p_, x[i]);
            g_[i] = j.g;
            dg_[i] = j.dg;
            fields_.X[i] = j.X; fields_.dX[i] = j.dX; fields_.d2X[i] = j.d2X;
            fields_.aX[i] = j.aX; fields_.adX[i] = j.adX; fields_.ad2X[i] = j.ad2X;
        }
    }

    const MapParams& params() const noexcept { return p_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    const Mesh& mesh() const noexcept { return *mesh_; }
    const FieldTable& fields() const noexcept { return fields_; }
    /// g(x_i) and g'(x_i) at the nodes.
    const std::vector<double>& inverse_nodes() const noexcept { return g_; }
    const std::vector<double>& inverse_slopes() const noexcept { return dg_; }

    /// Reduced-value matrices: for f = x^{-s} u, (N f) = x^{-s} (N_s u).
    const SparseMatrix& first_branch_matrix(double s) const { return matrices(s).N; }
    const SparseMatrix& second_branch_matrix(double s) const { return matrices(s).R; }
    const SparseMatrix& matrix(double s) const { return matrices(s).L; }

    GridFunction apply_N(const GridFunction& f) const { return apply(first_branch_matrix(f.exponent()), f); }
    GridFunction apply_second_branch(const GridFunction& f) const { return apply(second_branch_matrix(f.exponent()), f); }
    GridFunction apply_L(const GridFunction& f) const { return apply(matrix(f.exponent()), f); }

    /// d/dalpha L f = -(X N f)' = -X' N f - X (N f)'. Same exponent as f.
    GridFunction apply_M(const GridFunction& f) const {
        const auto nf = apply_N(f);
        const auto n0 = nf.nodal();
        const auto n1 = nodal_derivative(nf, 1);
        std::vector<double> out(n0.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = -fields_.dX[i] * n0[i] - fields_.X[i] * n1[i];
        }
        return from_plain(std::move(out), f.exponent());
    }

    /// d^2/dalpha^2 L f = -((dX) N f)' + X' (X N f)' + X (X N f)''.
    GridFunction apply_d2L(const GridFunction& f) const {
        const auto terms = seven_terms(f);
        GridFunction sum = terms[0];
        for (std::size_t k = 1; k < terms.size(); ++k) sum += terms[k];
        return sum;
    }

    /// The Leibniz expansion of apply_d2L into
    ///   -(dX)' n0, -+dX n1, X'^2 n0, X' X n1, X X'' n0, 2 X X' n1, X^2 n2
    /// with n_k = (N f)^(k). All terms carry the exponent of f.
    std::array<GridFunction, 7> seven_terms(const GridFunction& f, TermISign sign = TermISign::from_product_rule) const {
        const auto nf = apply_N(f);
        const auto n0 = nf.nodal();
        const auto n1 = nodal_derivative(nf, 1);
        const auto n2 = nodal_derivative(nf, 2);
        const std::size_t n = n0.size();
        const double sb = sign == TermISign::from_product_rule ? -1.0 : 1.0;
        std::array<std::vector<double>, 7> t;
        for (auto& v : t) v.resize(n);
        const auto& F = fields_;
        for (std::size_t i = 0; i < n; ++i) {
            t[0][i] = -F.adX[i] * n0[i];
            t[1][i] = sb * F.aX[i] * n1[i];
            t[2][i] = F.dX[i] * F.dX[i] * n0[i];
            t[3][i] = F.dX[i] * F.X[i] * n1[i];
            t[4][i] = F.X[i] * F.d2X[i] * n0[i];
            t[5][i] = 2.0 * F.X[i] * F.dX[i] * n1[i];
            t[6][i] = F.X[i] * F.X[i] * n2[i];
        }
        return {from_plain(std::move(t[0]), f.exponent()), from_plain(std::move(t[1]), f.exponent()),
                from_plain(std::move(t[2]), f.exponent()), from_plain(std::move(t[3]), f.exponent()),
                from_plain(std::move(t[4]), f.exponent()), from_plain(std::move(t[5]), f.exponent()),
                from_plain(std::move(t[6]), f.exponent())};
    }

    /// Plain nodal values -> grid function with exponent s.
    GridFunction from_plain(std::vector<double> v, double s) const {
        if (s != 0.0) {
            const auto& x = mesh_->nodes();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] *= std::pow(x[i], s);
        }
        return GridFunction(mesh_, std::move(v), s);
    }

private:
    struct Matrices {
        SparseMatrix N, R, L;
    };

    GridFunction apply(const SparseMatrix& A, const GridFunction& f) const {
        if (f.mesh_ptr() != mesh_ && f.mesh().nodes() != mesh_->nodes()) {
            throw std::invalid_argument("TransferOperator: function lives on a different mesh");
        }
        const Eigen::Map<const Eigen::VectorXd> u(f.values().data(), static_cast<Eigen::Index>(f.size()));
        const Eigen::VectorXd v = A * u;
        return GridFunction(mesh_, std::vector<double>(v.data(), v.data() + v.size()), f.exponent());
    }

    const Matrices& matrices(double s) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(s);
        if (it == cache_.end()) it = cache_.emplace(s, build(s)).first;
        return it->second;
    }

    Matrices build(double s) const {
        const auto& x = mesh_->nodes();
        const std::size_t n = x.size();
        std::vector<Eigen::Triplet<double>> tn, tr;
        tn.reserve(n * interp_points);
        tr.reserve(n * interp_points);
        std::size_t idx[interp_points];
        double w[interp_points];
        for (std::size_t i = 0; i < n; ++i) {
            // f(g) g' = g^{-s} u(g) g'  ->  reduced factor (x/g)^s g'
            const double cn = dg_[i] * (s == 0.0 ? 1.0 : std::pow(x[i] / g_[i], s));
            int m = mesh_->interp_weights(g_[i], idx, w);
            for (int k = 0; k < m; ++k) tn.emplace_back(static_cast<int>(i), static_cast<int>(idx[k]), cn * w[k]);

            const double y = 0.5 * (x[i] + 1.0);
            const double cr = 0.5 * (s == 0.0 ? 1.0 : std::pow(x[i] / y, s));
            m = mesh_->interp_weights(y, idx, w);
            for (int k = 0; k < m; ++k) tr.emplace_back(static_cast<int>(i), static_cast<int>(idx[k]), cr * w[k]);
        }
        Matrices M;
        const auto N = static_cast<Eigen::Index>(n);
        M.N.resize(N, N);
        M.N.setFromTriplets(tn.begin(), tn.end());
        M.R.resize(N, N);
        M.R.setFromTriplets(tr.begin(), tr.end());
        M.L = M.N + M.R;
        M.L.makeCompressed();
        return M;
    }

    MapParams p_;
    MeshPtr mesh_;
    std::vector<double> g_, dg_;
    FieldTable fields_;
    mutable std::mutex mutex_;
    mutable std::map<double, Matrices> cache_;
};

enum class DensityMethod { power, direct };

inline const char* to_string(DensityMethod m) { return m == DensityMethod::power ? "power" : "direct"; }

inline DensityMethod density_method_from_string(const std::string& s) {
    if (s == "power") return DensityMethod::power;
    if (s == "direct") return DensityMethod::direct;
    throw std::invalid_argument("unknown density method: " + s);
}

struct DensityRecord {
    MapParams params{0.0};
    GridFunction density;   // exponent alpha
    int iterations = 0;
    double residual = 0.0;  // L1 distance between the last two normalized iterates
    double normalization = 0.0;
    bool converged = false;
    DensityMethod method = DensityMethod::power;
    double tol = 0.0;
};

/// Iteration cap matching the k^{1-1/alpha} convergence rate of L^k 1.
inline int default_max_iter(double alpha, double tol) {
    if (alpha == 0.0) return 100;
    const double k = 10.0 * std::pow(tol, -alpha / (1.0 - alpha));
    return static_cast<int>(std::clamp(k, 100.0, 200000.0));
}

namespace detail {

inline void normalize(GridFunction& f) {
    const double m = integrate(f);
    if (!(m > 0.0)) throw std::runtime_error("density iterate lost its mass");
    f *= 1.0 / m;
}

} // namespace detail

inline DensityRecord compute_density(const TransferOperator& op, double tol = 1e-10, int max_iter = 0,
                                     DensityMethod method = DensityMethod::power) {
    if (!(tol > 0.0)) throw std::invalid_argument("compute_density: tol must be positive");
    const double a = op.params().alpha();
    const auto& mesh = op.mesh_ptr();
    DensityRecord rec;
    rec.params = op.params();
    rec.method = method;
    rec.tol = tol;
    if (max_iter <= 0) max_iter = default_max_iter(a, tol);

    if (method == DensityMethod::power) {
        // f_0 = 1, stored as x^{-a} * x^a.
        GridFunction f = GridFunction::from_function(mesh, [](double) { return 1.0; }, a);
        for (int k = 1; k <= max_iter; ++k) {
            GridFunction next = op.apply_L(f);
            detail::normalize(next);
            rec.residual = norm_l1(next - f);
            rec.iterations = k;
            f = std::move(next);
            if (rec.residual <= tol) {
                rec.converged = true;
                break;
            }
        }
        rec.density = std::move(f);
    } else {
        const SparseMatrix& L = op.matrix(a);
        const auto n = static_cast<Eigen::Index>(op.mesh().size());
        const auto& w = op.mesh().quadrature_weights(a);
        // (L - I) u = 0 with the equation at x = 1 replaced by int u = 1. The
        // equation at x_min is the only one pinning u there, so it stays.
        const Eigen::Index last = n - 1;
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(L.nonZeros() + 2 * n));
        for (Eigen::Index i = 0; i < last; ++i) {
            for (SparseMatrix::InnerIterator it(L, i); it; ++it) t.emplace_back(i, it.col(), it.value());
            t.emplace_back(i, i, -1.0);
        }
        for (Eigen::Index j = 0; j < n; ++j) t.emplace_back(last, j, w[j]);
        Eigen::SparseMatrix<double> A(n, n);
        A.setFromTriplets(t.begin(), t.end());
        A.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) throw std::runtime_error("compute_density: sparse LU factorization failed");
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
        rhs[last] = 1.0;
        Eigen::VectorXd u = lu.solve(rhs);
        for (int refine = 0; refine < 2; ++refine) u += lu.solve(rhs - A * u);
        GridFunction f(mesh, std::vector<double>(u.data(), u.data() + n), a);
        detail::normalize(f);
        GridFunction next = op.apply_L(f);
        detail::normalize(next);
        rec.residual = norm_l1(next - f);
        rec.iterations = 1;
        rec.converged = rec.residual <= tol;
        rec.density = std::move(f);
    }
    rec.normalization = integrate(rec.density);
    return rec;
}

inline DensityRecord compute_density(const MapParams& p, MeshPtr mesh, double tol = 1e-10, int max_iter = 0,
                                     DensityMethod method = DensityMethod::power) {
    return compute_density(TransferOperator(p, std::move(mesh)), tol, max_iter, method);
}

/// L^k applied k times.
inline GridFunction iterate(const TransferOperator& op, GridFunction f, int k) {
    for (int i = 0; i < k; ++i) f = op.apply_L(f);
    return f;
}

// ---------------------------------------------------------------------------
// Ulam discretization

/// Row-stochastic transition matrix on the cells [0, x_0], [x_0, x_1], ...
struct UlamOperator {
    MapParams params{0.0};
    std::vector<double> edges;  // 0 = e_0 < e_1 < ... < e_m = 1
    SparseMatrix P;

    std::size_t cells() const noexcept { return edges.size() - 1; }
};

/// Cell masses pi_i of the stationary vector and the resulting
/// piecewise-constant density pi_i / |I_i|.
struct UlamDensity {
    std::vector<double> edges;
    std::vector<double> mass;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;

    double height(std::size_t i) const { return mass[i] / (edges[i + 1] - edges[i]); }

    /// int psi rho dx with 4-point Gauss-Legendre on each cell.
    template <class F>
    double expectation(F&& psi) const {
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
            const double a = edges[i], b = edges[i + 1];
            const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
            double cell = 0.0;
            for (int q = 0; q < 4; ++q) cell += detail::gauss4_weights[q] * psi(mid + half * detail::gauss4_nodes[q]);
            sum += 0.5 * cell * mass[i];
        }
        return sum;
    }
};

inline UlamOperator build_ulam(const MapParams& p, const Mesh& partition) {
    UlamOperator U;
    U.params = p;
    U.edges.reserve(partition.size() + 1);
    U.edges.push_back(0.0);
    for (double x : partition.nodes()) U.edges.push_back(x);
    const auto& e = U.edges;
    const std::size_t m = e.size() - 1;

    // Preimages of the edges under each branch; consecutive preimages tile
    // [0, 1/2] and [1/2, 1] exactly, so rows sum to one.
    std::vector<double> pre_left(e.size()), pre_right(e.size());
    for (std::size_t k = 0; k < e.size(); ++k) {
        pre_left[k] = branch_inverse(p, e[k]);
        pre_right[k] = 0.5 * (e[k] + 1.0);
    }
    pre_left.back() = 0.5;
    pre_right.front() = 0.5;

    std::vector<Eigen::Triplet<double>> t;
    auto add_interval = [&](double lo, double hi, std::size_t j) {
        if (!(hi > lo)) return;
        auto it = std::upper_bound(e.begin(), e.end(), lo);
        std::size_t i = static_cast<std::size_t>(it - e.begin()) - 1;
        for (; i < m && e[i] < hi; ++i) {
            const double overlap = std::min(hi, e[i + 1]) - std::max(lo, e[i]);
            if (overlap > 0.0) {
                t.emplace_back(static_cast<int>(i), static_cast<int>(j), overlap / (e[i + 1] - e[i]));
            }
        }
    };
    for (std::size_t j = 0; j < m; ++j) {
        add_interval(pre_left[j], pre_left[j + 1], j);
        add_interval(pre_right[j], pre_right[j + 1], j);
    }
    const auto M = static_cast<Eigen::Index>(m);
    U.P.resize(M, M);
    U.P.setFromTriplets(t.begin(), t.end());
    U.P.makeCompressed();
    return U;
}

/// Stationary row vector pi = pi P by power iteration from Lebesgue measure.
inline UlamDensity ulam_stationary(const UlamOperator& U, double tol = 1e-12, int max_iter = 1000000) {
    const std::size_t m = U.cells();
    const SparseMatrix PT = U.P.transpose();
    Eigen::VectorXd pi(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) pi[static_cast<Eigen::Index>(i)] = U.edges[i + 1] - U.edges[i];
    UlamDensity out;
    out.edges = U.edges;
    for (int k = 1; k <= max_iter; ++k) {
        Eigen::VectorXd next = PT * pi;
        next /= next.sum();
        out.residual = (next - pi).lpNorm<1>();
        out.iterations = k;
        pi = std::move(next);
        if (out.residual <= tol) {
            out.converged = true;
            break;
        }
    }
    if (!out.converged) throw std::runtime_error("ulam_stationary: power iteration stagnated");
    out.mass.assign(pi.data(), pi.data() + pi.size());
    return out;
}

/// Stationary vector by a sparse solve of (P^T - I) pi = 0, sum pi = 1.
inline UlamDensity ulam_stationary_direct(const UlamOperator& U) {
    const auto m = static_cast<Eigen::Index>(U.cells());
    const SparseMatrix PT = U.P.transpose();
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index i = 1; i < m; ++i) {
        for (SparseMatrix::InnerIterator it(PT, i); it; ++it) t.emplace_back(i, it.col(), it.value());
        t.emplace_back(i, i, -1.0);
    }
    for (Eigen::Index j = 0; j < m; ++j) t.emplace_back(0, j, 1.0);
    Eigen::SparseMatrix<double> A(m, m);
    A.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw std::runtime_error("ulam_stationary_direct: factorization failed");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    rhs[0] = 1.0;
    Eigen::VectorXd pi = lu.solve(rhs);
    UlamDensity out;
    out.edges = U.edges;
    out.mass.assign(pi.data(), pi.data() + m);
    const Eigen::VectorXd next = PT * pi;
    out.residual = (next - pi).lpNorm<1>();
    out.iterations = 1;
    out.converged = true;
    return out;
}

} // namespace lrim

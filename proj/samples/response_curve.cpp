// Density, response series and finite-difference check for psi(x) = x over a
// few parameters of the intermittent family.
#include <lrim/lrim.hpp>

#include <cstdio>

int main() {
    using namespace lrim;
    const auto psi = observables::identity();
    std::printf("%6s %12s %12s %12s %8s\n", "alpha", "int x dmu", "series", "FD limit", "terms");
    for (double a : {0.0, 0.1, 0.2, 0.3, 0.4}) {
        const MapParams p(a);
        const auto mesh = build_mesh(p, 2048);
        const TransferOperator op(p, mesh);
        const auto d = compute_density(op, 1e-10, 0, a == 0.0 ? DensityMethod::power : DensityMethod::direct);
        const auto r = response_series(op, d, psi);
        const auto fd = finite_difference_response(p, psi, 1e-2, mesh, 1e-10);
        std::printf("%6.2f %12.8f %12.8f %12.8f %8d\n", a, pair(psi, d.density), r.value, fd.richardson, r.k_used);
    }
}

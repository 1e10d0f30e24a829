#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "parafreq/frequency.hpp"

namespace parafreq {

/// Exact summation-by-parts identities over seeded random fields:
///   self_adjointness      <Lu, v>_mu = <u, Lv>_mu
///   divergence            sum_i mu_i (Lu)_i = 0
///   summation_by_parts    <v, Lu>_mu = -E_T(u, v)
///   p2_reduction          apply_p_operator(u, 2, 0) == apply_operator(u) bit for bit
/// Residuals are relative to the sum of absolute values of the terms involved.
inline std::vector<CheckResult> check_identities(const WeightedDomain& domain, std::size_t trials, std::uint64_t seed,
                                                 double tol) {
    if (!(tol > 0.0)) throw Error(ErrorKind::parameter, "identity tolerance must be positive");
    const std::size_t n = domain.n();
    const auto edges = domain.edges();
    detail::Worst sa, dv, sbp, red;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, {t}));
        ScalarField u(n), v(n);
        for (std::size_t i = 0; i < n; ++i) u[i] = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
        const ScalarField lu = apply_operator(domain, u);
        const ScalarField lv = apply_operator(domain, v);

        double lhs = 0.0, rhs = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            lhs += domain.measure(i) * lu[i] * v[i];
            rhs += domain.measure(i) * u[i] * lv[i];
            scale += domain.measure(i) * (std::abs(lu[i] * v[i]) + std::abs(u[i] * lv[i]));
        }
        sa.update(scale > 0.0 ? std::abs(lhs - rhs) / scale : std::abs(lhs - rhs), t);

        double total = 0.0, flux = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += domain.measure(i) * lu[i];
        for (const Edge& e : edges) flux += 2.0 * e.coupling() * std::abs(u[e.j] - u[e.i]);
        dv.update(flux > 0.0 ? std::abs(total) / flux : std::abs(total), t);

        double sbp_scale = 0.0;
        for (const Edge& e : edges) sbp_scale += e.coupling() * std::abs(u[e.j] - u[e.i]) * (std::abs(v[e.i]) + std::abs(v[e.j]));
        const double gap = std::abs(lhs + dirichlet_form(domain, u, v));
        sbp.update(sbp_scale > 0.0 ? gap / sbp_scale : gap, t);

        const ScalarField lp = apply_p_operator(domain, u, 2.0, 0.0);
        double mismatched = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::bit_cast<std::uint64_t>(lp[i]) != std::bit_cast<std::uint64_t>(lu[i])) mismatched += 1.0;
        }
        red.update(mismatched, t);
    }
    if (trials == 0) {
        sa.update(0.0, 0);
        dv.update(0.0, 0);
        sbp.update(0.0, 0);
        red.update(0.0, 0);
    }
    return {make_check("self_adjointness", "operator-self-adjoint", sa.value, tol, sa.at),
            make_check("divergence", "operator-divergence", dv.value, tol, dv.at),
            make_check("summation_by_parts", "integration-by-parts", sbp.value, tol, sbp.at),
            make_check("p2_reduction", "p-operator-reduction", red.value, 0.0, red.at)};
}

// ---------------------------------------------------------------------------
// Product rule on periodic grids

/// g(x, y) = sin(2 pi (kx x + ky y) + phase) with closed-form derivatives.
struct PlaneWave {
    double kx = 1.0;
    double ky = 0.0;
    double phase = 0.0;

    double theta(double x, double y) const { return 2.0 * std::numbers::pi * (kx * x + ky * y) + phase; }
    double value(double x, double y) const { return std::sin(theta(x, y)); }
    double dx(double x, double y) const { return 2.0 * std::numbers::pi * kx * std::cos(theta(x, y)); }
    double dy(double x, double y) const { return 2.0 * std::numbers::pi * ky * std::cos(theta(x, y)); }
    double dxx(double x, double y) const { return -std::pow(2.0 * std::numbers::pi * kx, 2) * value(x, y); }
    double dyy(double x, double y) const { return -std::pow(2.0 * std::numbers::pi * ky, 2) * value(x, y); }
};

struct ProductRuleSetup {
    PeriodicGridSpec grid;      // nx, ny are overwritten per refinement level
    double f_amplitude = 0.0;   // f = amp cos(2 pi x) cos(2 pi y)
    PlaneWave u;
    PlaneWave v;
};

/// max_i |L_h(uv)_i - [v Lu + u Lv + 2 T(grad u, grad v)](x_i)| on an nx-by-nx
/// grid, where the bracket is evaluated from the continuum operator
///   L g = T_xx (g_xx - f_x g_x) + T_yy (g_yy - f_y g_y).
inline double product_rule_residual(const ProductRuleSetup& setup, std::size_t nx) {
    DomainSpec spec;
    PeriodicGridSpec g = setup.grid;
    g.nx = nx;
    g.ny = nx;
    spec.shape = g;
    spec.measure.kind = MeasureSpec::Kind::f_cosine;
    spec.measure.value = setup.f_amplitude;
    const WeightedDomain domain = build_domain(spec);

    const double two_pi = 2.0 * std::numbers::pi;
    const double h = 1.0 / static_cast<double>(nx);
    ScalarField uv(domain.n());
    std::vector<std::pair<double, double>> xy(domain.n());
    for (std::size_t iy = 0; iy < nx; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const std::size_t i = ix + nx * iy;
            xy[i] = {ix * h, iy * h};
            uv[i] = setup.u.value(ix * h, iy * h) * setup.v.value(ix * h, iy * h);
        }
    }
    const ScalarField luv = apply_operator(domain, uv);

    double worst = 0.0;
    for (std::size_t i = 0; i < domain.n(); ++i) {
        const auto [x, y] = xy[i];
        const double txx = g.txx * (1.0 + g.ax * std::sin(two_pi * y));
        const double tyy = g.tyy * (1.0 + g.ay * std::sin(two_pi * x));
        const double fx = -two_pi * setup.f_amplitude * std::sin(two_pi * x) * std::cos(two_pi * y);
        const double fy = -two_pi * setup.f_amplitude * std::cos(two_pi * x) * std::sin(two_pi * y);
        auto op = [&](const PlaneWave& w) {
            return txx * (w.dxx(x, y) - fx * w.dx(x, y)) + tyy * (w.dyy(x, y) - fy * w.dy(x, y));
        };
        const double cross = txx * setup.u.dx(x, y) * setup.v.dx(x, y) + tyy * setup.u.dy(x, y) * setup.v.dy(x, y);
        const double expected = setup.v.value(x, y) * op(setup.u) + setup.u.value(x, y) * op(setup.v) + 2.0 * cross;
        worst = std::max(worst, std::abs(luv[i] - expected));
    }
    return worst;
}

/// Residuals must strictly decrease along the refinement ladder. The reported
/// violation is the largest increase between consecutive levels.
inline CheckResult check_product_rule_trend(const ProductRuleSetup& setup, const std::vector<std::size_t>& sizes,
                                            std::vector<double>* residuals_out = nullptr) {
    if (sizes.size() < 2) throw Error(ErrorKind::input, "product-rule trend needs at least two grid sizes");
    std::vector<double> r;
    for (std::size_t nx : sizes) r.push_back(product_rule_residual(setup, nx));
    detail::Worst w;
    for (std::size_t k = 0; k + 1 < r.size(); ++k) w.update(r[k + 1] - r[k], k);
    if (residuals_out) *residuals_out = r;
    std::string note = "residuals";
    for (double x : r) note += " " + format_number(x);
    return make_check("product_rule_trend", "product-rule", w.value, -std::numeric_limits<double>::denorm_min(), w.at,
                      note);
}

} // namespace parafreq

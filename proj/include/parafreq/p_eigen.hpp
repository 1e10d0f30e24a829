#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

#include "parafreq/operators.hpp"

namespace parafreq {

struct PEigenOptions {
    std::uint64_t seed = 1;
    int max_iters = 20000;
    double step_tol = 1e-10;  // target for the mu-norm eigen-residual
    std::optional<ScalarField> initial_guess;
};

struct PEigenpair {
    double lambda = 0.0;
    ScalarField w;        // sum_i mu_i |w_i|^p = 1
    double residual = 0.0; // || Delta_p w + lambda w |w|^(p-2) ||_mu
    int iterations = 0;
};

namespace detail {

inline ScalarField signed_power(const ScalarField& u, double q) {
    ScalarField out(u.size());
    for (int i = 0; i < u.size(); ++i) {
        const double a = std::abs(u[i]);
        out[i] = a == 0.0 ? 0.0 : std::copysign(std::pow(a, q), u[i]);
    }
    return out;
}

// Constant c minimizing sum mu_i |u_i - c|^p, i.e. the root of the
// decreasing function sum mu_i |u_i - c|^{p-2} (u_i - c).
inline double p_center(const WeightedDomain& domain, const ScalarField& u, double p) {
    if (p == 2.0) return mu_inner(domain, u, ScalarField::Ones(u.size())) / domain.total_measure();
    double lo = u.minCoeff(), hi = u.maxCoeff();
    auto h = [&](double c) {
        double acc = 0.0;
        for (int i = 0; i < u.size(); ++i) {
            const double d = u[i] - c;
            acc += domain.measure(static_cast<std::size_t>(i)) * (d == 0.0 ? 0.0 : std::copysign(std::pow(std::abs(d), p - 1.0), d));
        }
        return acc;
    };
    for (int it = 0; it < 200 && hi - lo > 1e-16 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (h(mid) > 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

/// Approximate critical pair of the p-Rayleigh quotient
///   Q(u) = p_energy(u, p) / min_c sum_i mu_i |u_i - c|^p
/// over nonconstant u. Its critical points satisfy -Delta_p w = lambda w|w|^{p-2};
/// for p = 2 the minimum is the first nonzero eigenvalue of -L.
///
/// Method: gradient descent in the mu-metric with Barzilai-Borwein steps and
/// Armijo backtracking. Each iterate is shifted by its p-center (which leaves Q
/// unchanged) and rescaled to unit p-mass.
inline PEigenpair p_eigenpair(const WeightedDomain& domain, double p, const PEigenOptions& opts = {}) {
    if (!(p > 1.0)) throw Error(ErrorKind::parameter, "p_eigenpair needs p > 1");
    if (domain.n() < 2) throw Error(ErrorKind::parameter, "p_eigenpair needs at least two vertices");
    const std::size_t n = domain.n();

    auto random_field = [&](std::uint64_t seed) {
        Rng rng(seed);
        ScalarField r(n);
        for (std::size_t i = 0; i < n; ++i) r[i] = rng.uniform(-1.0, 1.0);
        return r;
    };

    auto normalize = [&](ScalarField u, std::uint64_t reseed) {
        for (int attempt = 0; attempt < 8; ++attempt) {
            u.array() -= detail::p_center(domain, u, p);
            const double mass = mu_power_sum(domain, u, p);
            if (mass > 1e-24 && std::isfinite(mass)) return ScalarField(u / std::pow(mass, 1.0 / p));
            // constant (or vanishing) data carry no direction: restart from noise
            u = random_field(derive_seed(reseed, {static_cast<std::uint64_t>(attempt)}));
        }
        throw Error(ErrorKind::convergence, "p_eigenpair could not build a nonconstant iterate");
    };

    // mu-metric gradient direction: -Delta_p u - Q u|u|^{p-2}; Q since mass is 1
    auto gradient = [&](const ScalarField& u, double q) {
        return ScalarField(-apply_p_operator(domain, u, p, 0.0) - q * detail::signed_power(u, p - 1.0));
    };

    if (opts.initial_guess) require_length(*opts.initial_guess, n, "p_eigenpair initial guess");
    ScalarField u = normalize(opts.initial_guess.value_or(random_field(opts.seed)), opts.seed);
    double q = p_energy(domain, u, p);
    ScalarField g = gradient(u, q);
    double step = 1.0 / std::max(1.0, q);

    for (int it = 0; it < opts.max_iters; ++it) {
        const double res = mu_norm(domain, g);
        if (res <= opts.step_tol) return {q, u, res, it};

        const double slope = p * res * res;
        double alpha = step;
        ScalarField trial;
        double q_trial = q;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving) {
            trial = normalize(u - alpha * g, derive_seed(opts.seed, {static_cast<std::uint64_t>(it), 7}));
            q_trial = p_energy(domain, trial, p);
            if (q_trial <= q - 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // no decrease at rounding level; accept only if we are already close
            if (res <= 1e3 * opts.step_tol) return {q, u, res, it};
            throw ConvergenceError("p_eigenpair line search stalled", u, res);
        }
        ScalarField g_trial = gradient(trial, q_trial);
        const ScalarField s = trial - u;
        const ScalarField y = g_trial - g;
        const double sy = mu_inner(domain, s, y);
        const double ss = mu_inner(domain, s, s);
        step = (sy > 0.0 && std::isfinite(ss / sy)) ? std::clamp(ss / sy, 1e-12, 1e12) : 2.0 * alpha;
        u = std::move(trial);
        g = std::move(g_trial);
        q = q_trial;
    }
    throw ConvergenceError("p_eigenpair did not reach the residual target", u, mu_norm(domain, g));
}

} // namespace parafreq

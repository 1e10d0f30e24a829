#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "parafreq/operators.hpp"
#include "parafreq/time_function.hpp"

namespace parafreq {

/// exp(A) by Taylor series with scaling and squaring. Independent of the
/// eigensolver, so it can cross-check spectral propagation.
inline Eigen::MatrixXd expm_taylor(const Eigen::MatrixXd& a) {
    const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Eigen::MatrixXd b = a / std::ldexp(1.0, squarings);

    const int n = static_cast<int>(a.rows());
    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
    for (int k = 1; k <= 40; ++k) {
        term = term * b / static_cast<double>(k);
        result += term;
        if (term.cwiseAbs().maxCoeff() < 1e-20 * result.cwiseAbs().maxCoeff()) break;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

/// u(t) = exp(int_a^t phi) exp((t - a) L) u0 with a dense matrix exponential.
inline ScalarField propagate_expm(const WeightedDomain& domain, const ScalarField& u0, const TimeFunction& phi,
                                  double a, double t) {
    require_length(u0, domain.n(), "propagate_expm");
    const Eigen::MatrixXd l = Eigen::MatrixXd(assemble_operator(domain).matrix);
    return std::exp(phi.integral(a, t)) * (expm_taylor((t - a) * l) * u0);
}

/// The same propagation sampled on a uniform grid: exp(dt L) is formed once and
/// applied step by step, with the exact phi factor per step.
inline std::vector<ScalarField> propagate_expm_grid(const WeightedDomain& domain, const ScalarField& u0,
                                                    const TimeFunction& phi, double a, double b, std::size_t K) {
    require_length(u0, domain.n(), "propagate_expm_grid");
    const double dt = (b - a) / static_cast<double>(K);
    const Eigen::MatrixXd l = Eigen::MatrixXd(assemble_operator(domain).matrix);
    const Eigen::MatrixXd step = expm_taylor(dt * l);
    std::vector<ScalarField> out{u0};
    for (std::size_t k = 0; k < K; ++k) {
        const double t0 = a + (b - a) * static_cast<double>(k) / static_cast<double>(K);
        const double t1 = a + (b - a) * static_cast<double>(k + 1) / static_cast<double>(K);
        out.push_back(std::exp(phi.integral(t0, t1)) * (step * out.back()));
    }
    return out;
}

} // namespace parafreq

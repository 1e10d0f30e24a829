#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "parafreq/domain.hpp"

namespace parafreq {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Matrix form of the drift diffusion operator
///   (L u)_i = (1/mu_i) sum_{e=(i,j)} w_e c_e (u_j - u_i).
/// Constants lie in its kernel and mu_i L_ij = mu_j L_ji.
struct DriftOperator {
    SparseMatrix matrix;
    std::vector<double> measure;

    ScalarField operator*(const ScalarField& u) const { return matrix * u; }
};

inline DriftOperator assemble_operator(const WeightedDomain& domain) {
    const std::size_t n = domain.n();
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n + 2 * domain.edges().size());
    const auto edges = domain.edges();
    for (std::size_t i = 0; i < n; ++i) {
        const double inv_mu = 1.0 / domain.measure(i);
        double diag = 0.0;
        for (const auto& inc : domain.incident(i)) {
            const double k = edges[inc.edge].coupling();
            diag += k;
            triplets.emplace_back(static_cast<int>(i), static_cast<int>(inc.neighbor), k * inv_mu);
        }
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), -diag * inv_mu);
    }
    DriftOperator op;
    op.matrix.resize(static_cast<int>(n), static_cast<int>(n));
    op.matrix.setFromTriplets(triplets.begin(), triplets.end());
    op.measure = domain.measure();
    return op;
}

/// Symmetric positive semidefinite stiffness K = -M L (graph Laplacian with
/// couplings w_e c_e). Used by the implicit solvers.
inline SparseMatrix stiffness_matrix(const WeightedDomain& domain) {
    const std::size_t n = domain.n();
    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<double> diag(n, 0.0);
    for (const Edge& e : domain.edges()) {
        const double k = e.coupling();
        triplets.emplace_back(static_cast<int>(e.i), static_cast<int>(e.j), -k);
        triplets.emplace_back(static_cast<int>(e.j), static_cast<int>(e.i), -k);
        diag[e.i] += k;
        diag[e.j] += k;
    }
    for (std::size_t i = 0; i < n; ++i) triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), diag[i]);
    SparseMatrix k(static_cast<int>(n), static_cast<int>(n));
    k.setFromTriplets(triplets.begin(), triplets.end());
    return k;
}

/// Matrix-free (L u)_i.
inline ScalarField apply_operator(const WeightedDomain& domain, const ScalarField& u) {
    require_length(u, domain.n(), "apply_operator");
    ScalarField out(domain.n());
    const auto edges = domain.edges();
    for (std::size_t i = 0; i < domain.n(); ++i) {
        double acc = 0.0;
        for (const auto& inc : domain.incident(i)) acc += edges[inc.edge].coupling() * (u[inc.neighbor] - u[i]);
        out[i] = acc / domain.measure(i);
    }
    return out;
}

/// Regularized weighted p-Laplacian
///   (1/mu_i) sum_e w_e c_e ((u_j-u_i)^2 + eps^2)^((p-2)/2) (u_j - u_i).
/// With eps = 0 and p < 2 the factor at a zero difference is taken as 0.
inline ScalarField apply_p_operator(const WeightedDomain& domain, const ScalarField& u, double p, double eps) {
    require_length(u, domain.n(), "apply_p_operator");
    if (!(p > 1.0)) throw Error(ErrorKind::parameter, "apply_p_operator needs p > 1");
    if (!(eps >= 0.0)) throw Error(ErrorKind::parameter, "apply_p_operator needs eps >= 0");
    const double half_exp = 0.5 * (p - 2.0);
    const double eps2 = eps * eps;
    ScalarField out(domain.n());
    const auto edges = domain.edges();
    for (std::size_t i = 0; i < domain.n(); ++i) {
        double acc = 0.0;
        for (const auto& inc : domain.incident(i)) {
            const double d = u[inc.neighbor] - u[i];
            const double r2 = d * d + eps2;
            const double factor = (r2 == 0.0 && p < 2.0) ? 0.0 : std::pow(r2, half_exp);
            acc += edges[inc.edge].coupling() * factor * d;
        }
        out[i] = acc / domain.measure(i);
    }
    return out;
}

/// E_T(u, v) = sum_e w_e c_e (u_j - u_i)(v_j - v_i).
inline double dirichlet_form(const WeightedDomain& domain, const ScalarField& u, const ScalarField& v) {
    require_length(u, domain.n(), "dirichlet_form");
    require_length(v, domain.n(), "dirichlet_form");
    double acc = 0.0;
    for (const Edge& e : domain.edges()) acc += e.coupling() * (u[e.j] - u[e.i]) * (v[e.j] - v[e.i]);
    return acc;
}

/// sum_e w_e c_e |u_j - u_i|^p.
inline double p_energy(const WeightedDomain& domain, const ScalarField& u, double p) {
    require_length(u, domain.n(), "p_energy");
    if (!(p >= 1.0)) throw Error(ErrorKind::parameter, "p_energy needs p >= 1");
    double acc = 0.0;
    for (const Edge& e : domain.edges()) {
        const double d = std::abs(u[e.j] - u[e.i]);
        acc += e.coupling() * (p == 2.0 ? d * d : std::pow(d, p));
    }
    return acc;
}

inline double mu_inner(const WeightedDomain& domain, const ScalarField& u, const ScalarField& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < domain.n(); ++i) acc += domain.measure(i) * u[i] * v[i];
    return acc;
}

inline double mu_norm(const WeightedDomain& domain, const ScalarField& u) { return std::sqrt(mu_inner(domain, u, u)); }

inline double mu_power_sum(const WeightedDomain& domain, const ScalarField& u, double p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < domain.n(); ++i) {
        const double a = std::abs(u[i]);
        acc += domain.measure(i) * (p == 2.0 ? a * a : std::pow(a, p));
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Spectrum

/// Eigenpairs of -L, ascending, with mu-orthonormal eigenvectors as columns.
struct Spectrum {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    double residual_norm = 0.0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
    ScalarField mode(std::size_t k) const { return eigenvectors.col(static_cast<int>(k)); }
};

inline constexpr std::size_t default_dense_cap = 2000;

/// Dense eigensolve of the mu-symmetric problem. The substitution y = mu^{1/2} u
/// turns -L into the symmetric matrix M^{-1/2} K M^{-1/2}.
/// Eigenvector signs are fixed so the first entry of non-negligible size is positive.
inline Spectrum eigendecompose(const WeightedDomain& domain, std::optional<std::size_t> k = std::nullopt,
                               std::size_t dense_cap = default_dense_cap) {
    const std::size_t n = domain.n();
    if (n > dense_cap) {
        throw Error(ErrorKind::capacity, "eigendecompose: n = " + std::to_string(n) + " exceeds the dense cap " +
                                             std::to_string(dense_cap) + "; raise the cap");
    }
    const std::size_t count = k.value_or(n);
    if (count == 0 || count > n) throw Error(ErrorKind::parameter, "eigendecompose: requested count out of range");

    Eigen::VectorXd inv_sqrt_mu(n);
    for (std::size_t i = 0; i < n; ++i) inv_sqrt_mu[i] = 1.0 / std::sqrt(domain.measure(i));
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(static_cast<int>(n), static_cast<int>(n));
    for (const Edge& e : domain.edges()) {
        const double kc = e.coupling();
        const double off = -kc * inv_sqrt_mu[e.i] * inv_sqrt_mu[e.j];
        s(e.i, e.j) += off;
        s(e.j, e.i) += off;
        s(e.i, e.i) += kc * inv_sqrt_mu[e.i] * inv_sqrt_mu[e.i];
        s(e.j, e.j) += kc * inv_sqrt_mu[e.j] * inv_sqrt_mu[e.j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
    if (solver.info() != Eigen::Success) throw Error(ErrorKind::convergence, "dense eigensolver failed");

    Spectrum out;
    out.eigenvalues = solver.eigenvalues().head(static_cast<int>(count));
    out.eigenvectors = inv_sqrt_mu.asDiagonal() * solver.eigenvectors().leftCols(static_cast<int>(count));
    for (int c = 0; c < out.eigenvectors.cols(); ++c) {
        auto col = out.eigenvectors.col(c);
        const double threshold = 1e-8 * col.cwiseAbs().maxCoeff();
        for (int i = 0; i < col.size(); ++i) {
            if (std::abs(col[i]) > threshold) {
                if (col[i] < 0.0) col *= -1.0;
                break;
            }
        }
    }
    double worst = 0.0;
    for (std::size_t c = 0; c < count; ++c) {
        const ScalarField phi = out.mode(c);
        const ScalarField r = apply_operator(domain, phi) + out.eigenvalues[static_cast<int>(c)] * phi;
        worst = std::max(worst, mu_norm(domain, r));
    }
    out.residual_norm = worst;
    return out;
}

} // namespace parafreq

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseCholesky>

#include "parafreq/operators.hpp"
#include "parafreq/time_function.hpp"

namespace parafreq {

enum class EquationKind { linear, p_heat, linear_perturbed, p_perturbed };

enum class Integrator { automatic, spectral, implicit_euler, newton_implicit, newton_richardson };

inline const char* to_string(EquationKind k) noexcept {
    switch (k) {
        case EquationKind::linear: return "linear";
        case EquationKind::p_heat: return "p_heat";
        case EquationKind::linear_perturbed: return "linear_perturbed";
        case EquationKind::p_perturbed: return "p_perturbed";
    }
    return "?";
}

inline const char* to_string(Integrator k) noexcept {
    switch (k) {
        case Integrator::automatic: return "auto";
        case Integrator::spectral: return "spectral";
        case Integrator::implicit_euler: return "implicit_euler";
        case Integrator::newton_implicit: return "newton_implicit";
        case Integrator::newton_richardson: return "newton_richardson";
    }
    return "?";
}

struct SolverOptions {
    double newton_tol = 1e-12;  // relative residual, see PStepResult
    int max_iters = 50;
    int max_halvings = 30;
    int fallback_iters = 500;
};

/// Which flow to run. `drive` is phi for the linear kind and eta for p_heat;
/// perturbed kinds have no drive and use `psi` as the envelope scale.
struct EquationSpec {
    EquationKind kind = EquationKind::linear;
    double p = 2.0;
    TimeFunction drive = TimeFunction::constant(0.0);
    TimeFunction psi = TimeFunction::constant(0.0);
    std::uint64_t perturbation_seed = 0;
    double eps = 1e-8;
    SolverOptions solver;

    bool is_p_kind() const noexcept { return kind == EquationKind::p_heat || kind == EquationKind::p_perturbed; }
    bool is_perturbed() const noexcept {
        return kind == EquationKind::linear_perturbed || kind == EquationKind::p_perturbed;
    }
    /// Homogeneity exponent of the frequency functionals: p for p-kinds, 2 otherwise.
    double exponent() const noexcept { return is_p_kind() ? p : 2.0; }
};

struct TimeGrid {
    double a = 0.0;
    double b = 1.0;
    std::size_t K = 1;

    double dt() const noexcept { return (b - a) / static_cast<double>(K); }
    double t(std::size_t k) const noexcept { return k == K ? b : a + static_cast<double>(k) * dt(); }
};

struct Trajectory {
    TimeGrid grid;
    std::vector<double> times;
    std::vector<ScalarField> states;
    EquationSpec equation;
    Integrator integrator = Integrator::automatic;
    std::vector<double> step_residuals;        // one per step
    std::vector<ScalarField> perturbations;    // rho_k, perturbed kinds only
    std::vector<double> drive_samples;
    std::vector<double> psi_samples;

    std::size_t steps() const noexcept { return grid.K; }
};

namespace detail {

inline void validate_equation(const EquationSpec& eq) {
    if (eq.is_p_kind()) {
        if (!(eq.p > 1.0)) throw Error(ErrorKind::parameter, "p-kinds need p > 1");
        if (eq.p != 2.0 && !(eq.eps > 0.0)) throw Error(ErrorKind::parameter, "eps > 0 is required when p != 2");
    }
    if (!(eq.eps >= 0.0)) throw Error(ErrorKind::parameter, "eps must be nonnegative");
    if (eq.is_perturbed() && !eq.drive.is_identically_zero()) {
        throw Error(ErrorKind::parameter, "perturbed kinds take no phi/eta drive");
    }
    if (!(eq.solver.newton_tol > 0.0) || eq.solver.max_iters < 1) {
        throw Error(ErrorKind::parameter, "solver tolerance and iteration cap must be positive");
    }
}

inline double mu_sq_sum(const WeightedDomain& domain, const ScalarField& u) { return mu_inner(domain, u, u); }

} // namespace detail

// ---------------------------------------------------------------------------
// Linear flow

/// Exact solution of u_t = L u + phi(t) u through the eigenbasis:
///   u(t) = exp(int_a^t phi) sum_m exp(-lambda_m (t - a)) <u0, phi_m>_mu phi_m.
inline Trajectory propagate_spectral(const WeightedDomain& domain, const Spectrum& spectrum, const ScalarField& u0,
                                     const TimeFunction& phi, const TimeGrid& grid) {
    require_length(u0, domain.n(), "propagate_spectral");
    if (spectrum.size() != domain.n()) {
        throw Error(ErrorKind::parameter, "propagate_spectral needs the full spectrum");
    }
    Trajectory traj;
    traj.grid = grid;
    traj.integrator = Integrator::spectral;
    traj.equation.kind = EquationKind::linear;
    traj.equation.drive = phi;

    const Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(domain.measure().data(), static_cast<int>(domain.n()));
    const Eigen::VectorXd coeff = spectrum.eigenvectors.transpose() * mu.cwiseProduct(u0);
    for (std::size_t k = 0; k <= grid.K; ++k) {
        const double t = grid.t(k);
        const double growth = phi.integral(grid.a, t);
        Eigen::VectorXd c(coeff.size());
        for (int m = 0; m < coeff.size(); ++m) c[m] = coeff[m] * std::exp(growth - spectrum.eigenvalues[m] * (t - grid.a));
        traj.times.push_back(t);
        traj.states.push_back(spectrum.eigenvectors * c);
        traj.drive_samples.push_back(phi(t));
        traj.psi_samples.push_back(0.0);
        if (k > 0) traj.step_residuals.push_back(0.0);
    }
    return traj;
}

/// Backward Euler for u_t = L u + phi u:
///   ((1 - dt phi) M + dt K) u' = M u,  with K = -M L symmetric positive semidefinite.
class LinearImplicitStepper {
public:
    explicit LinearImplicitStepper(const WeightedDomain& domain)
        : mu_(Eigen::Map<const Eigen::VectorXd>(domain.measure().data(), static_cast<int>(domain.n()))),
          stiffness_(stiffness_matrix(domain)) {}

    ScalarField step(const ScalarField& u, double dt, double phi_val) {
        require_length(u, static_cast<std::size_t>(mu_.size()), "step_linear_implicit");
        if (!(dt > 0.0)) throw Error(ErrorKind::step_size, "dt must be positive");
        if (dt * phi_val >= 1.0) {
            throw Error(ErrorKind::step_size, "dt * phi = " + format_number(dt * phi_val) +
                                                  " >= 1 makes the implicit system indefinite; reduce dt");
        }
        if (!cached_ || dt != cached_dt_ || phi_val != cached_phi_) factorize(dt, phi_val);
        const Eigen::VectorXd rhs = mu_.cwiseProduct(u);
        ScalarField next = solver_.solve(rhs);
        const Eigen::VectorXd r = system_ * next - rhs;
        const double scale = rhs.lpNorm<Eigen::Infinity>() + system_diag_max_ * next.lpNorm<Eigen::Infinity>();
        last_residual_ = scale > 0.0 ? r.lpNorm<Eigen::Infinity>() / scale : 0.0;
        if (!(last_residual_ <= 1e-12)) {
            throw Error(ErrorKind::convergence, "implicit linear solve residual " + format_number(last_residual_));
        }
        return next;
    }

    double last_residual() const noexcept { return last_residual_; }

private:
    void factorize(double dt, double phi_val) {
        system_ = dt * stiffness_;
        for (int i = 0; i < mu_.size(); ++i) system_.coeffRef(i, i) += (1.0 - dt * phi_val) * mu_[i];
        system_.makeCompressed();
        system_diag_max_ = 0.0;
        for (int i = 0; i < mu_.size(); ++i) system_diag_max_ = std::max(system_diag_max_, 2.0 * std::abs(system_.coeff(i, i)));
        solver_.compute(system_);
        if (solver_.info() != Eigen::Success) throw Error(ErrorKind::step_size, "implicit system is not positive definite");
        cached_ = true;
        cached_dt_ = dt;
        cached_phi_ = phi_val;
    }

    Eigen::VectorXd mu_;
    Eigen::SparseMatrix<double> stiffness_;
    Eigen::SparseMatrix<double> system_;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver_;
    double system_diag_max_ = 0.0;
    bool cached_ = false;
    double cached_dt_ = 0.0;
    double cached_phi_ = 0.0;
    double last_residual_ = 0.0;
};

inline ScalarField step_linear_implicit(const WeightedDomain& domain, const ScalarField& u, double dt, double phi_val) {
    LinearImplicitStepper stepper(domain);
    return stepper.step(u, dt, phi_val);
}

// ---------------------------------------------------------------------------
// p-flow

struct PStepResult {
    ScalarField v;
    /// ||F(v)||_mu / ||s||_mu where F is the implicit residual and s_i sums the
    /// absolute values of the terms making up F_i.
    double residual = 0.0;
    int newton_iterations = 0;
    bool used_fallback = false;
};

/// Implicit step of |u|^{p-2} u_t - Delta_p u = eta |u|^{p-2} u + rho written
/// through W(x) = (x^2 + eps^2)^{(p-2)/2} x, using |u|^{p-2} u_t = W(u)_t / (p - 1):
///   F(v) = (W(v) - W(u)) / ((p - 1) dt) - Delta_p v - eta W(v) - rho.
/// F is the mu-gradient of a strictly convex functional whenever
/// (p - 1) dt eta < 1, so the step has a unique solution and the Newton matrix
/// is symmetric positive definite. For p = 2 this is backward Euler.
/// Damped Newton first; lagged-coefficient fixed point if Newton fails.
class PImplicitStepper {
public:
    PImplicitStepper(const WeightedDomain& domain, double p, double eps)
        : domain_(domain), p_(p), eps_(eps),
          mu_(Eigen::Map<const Eigen::VectorXd>(domain.measure().data(), static_cast<int>(domain.n()))) {
        if (!(p > 1.0)) throw Error(ErrorKind::parameter, "p-step needs p > 1");
        if (p != 2.0 && !(eps > 0.0)) throw Error(ErrorKind::parameter, "p-step needs eps > 0 when p != 2");
        pattern_ = stiffness_matrix(domain);
        pattern_.makeCompressed();
    }

    PStepResult step(const ScalarField& u, double dt, double eta_val, const ScalarField* rho,
                     const SolverOptions& opts) {
        require_length(u, domain_.n(), "step_p_implicit");
        if (!(dt > 0.0)) throw Error(ErrorKind::step_size, "dt must be positive");
        if (rho != nullptr) require_length(*rho, domain_.n(), "step_p_implicit perturbation");
        const double c = 1.0 / ((p_ - 1.0) * dt);
        if (!(c - eta_val > 0.0)) {
            throw Error(ErrorKind::step_size, "(p - 1) * dt * eta = " + format_number(eta_val / c) +
                                                  " >= 1 makes the implicit step non-convex; reduce dt");
        }
        Eigen::VectorXd wu(u.size());
        for (int i = 0; i < u.size(); ++i) wu[i] = W(u[i]);
        const Problem pr{u, wu, c, eta_val, rho};

        PStepResult out;
        ScalarField v = u;
        ScalarField f;
        double res = residual(pr, v, &f);
        ScalarField best = v;
        double best_res = res;

        bool newton_ok = true;
        for (int it = 0; it < opts.max_iters && res > opts.newton_tol; ++it) {
            ScalarField delta;
            if (!newton_direction(pr, v, f, delta)) {
                newton_ok = false;
                break;
            }
            const Eigen::VectorXd grad = mu_.cwiseProduct(f);
            const double slope = grad.dot(delta);
            const double phi0 = objective(pr, v);
            const double f_norm = weighted_norm(f);
            double alpha = 1.0;
            bool accepted = false;
            for (int h = 0; h <= opts.max_halvings; ++h) {
                ScalarField trial = v + alpha * delta;
                ScalarField f_trial;
                const double trial_res = residual(pr, trial, &f_trial);
                const bool decrease = objective(pr, trial) <= phi0 + 1e-4 * alpha * slope ||
                                      weighted_norm(f_trial) <= (1.0 - 1e-4 * alpha) * f_norm;
                if (std::isfinite(trial_res) && decrease) {
                    v = std::move(trial);
                    f = std::move(f_trial);
                    res = trial_res;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            ++out.newton_iterations;
            if (res < best_res) {
                best = v;
                best_res = res;
            }
            if (!accepted) {
                newton_ok = false;
                break;
            }
        }
        if (newton_ok && res <= opts.newton_tol) {
            out.v = std::move(v);
            out.residual = res;
            return out;
        }

        out.used_fallback = true;
        v = best;
        for (int it = 0; it < opts.fallback_iters; ++it) {
            v = lagged_solve(pr, v);
            res = residual(pr, v, nullptr);
            if (res < best_res) {
                best = v;
                best_res = res;
            }
            if (res <= opts.newton_tol) {
                out.v = std::move(v);
                out.residual = res;
                return out;
            }
        }
        throw ConvergenceError("p-step: Newton and fixed-point iterations exhausted (best relative residual " +
                                   format_number(best_res) + ")",
                               best, best_res);
    }

private:
    struct Problem {
        const ScalarField& u;
        const Eigen::VectorXd& wu;  // W(u)
        double c;                   // 1 / ((p - 1) dt)
        double eta;
        const ScalarField* rho;
    };

    double r2_pow(double x, double e) const { return std::pow(x * x + eps_ * eps_, e); }
    double m(double x) const { return p_ == 2.0 ? 1.0 : r2_pow(x, 0.5 * (p_ - 2.0)); }
    double W(double x) const { return m(x) * x; }
    double dW(double x) const {
        return p_ == 2.0 ? 1.0 : r2_pow(x, 0.5 * (p_ - 4.0)) * ((p_ - 1.0) * x * x + eps_ * eps_);
    }
    // antiderivative of W (and of the edge flux g = W)
    double G(double x) const { return p_ == 2.0 ? 0.5 * x * x : r2_pow(x, 0.5 * p_) / p_; }

    double weighted_norm(const ScalarField& f) const { return std::sqrt((mu_.array() * f.array().square()).sum()); }

    double objective(const Problem& pr, const ScalarField& v) const {
        double acc = 0.0;
        for (int i = 0; i < v.size(); ++i) {
            const double r = pr.rho ? (*pr.rho)[i] : 0.0;
            acc += mu_[i] * ((pr.c - pr.eta) * G(v[i]) - pr.c * pr.wu[i] * v[i] - r * v[i]);
        }
        for (const Edge& e : domain_.edges()) acc += e.coupling() * G(v[e.j] - v[e.i]);
        return acc;
    }

    double residual(const Problem& pr, const ScalarField& v, ScalarField* f_out) const {
        const std::size_t n = domain_.n();
        ScalarField f(n), s(n);
        const auto edges = domain_.edges();
        for (std::size_t i = 0; i < n; ++i) {
            double lap = 0.0, lap_abs = 0.0;
            for (const auto& inc : domain_.incident(i)) {
                const double term = edges[inc.edge].coupling() * W(v[inc.neighbor] - v[i]);
                lap += term;
                lap_abs += std::abs(term);
            }
            lap /= mu_[i];
            lap_abs /= mu_[i];
            const double wv = W(v[i]);
            const double r = pr.rho ? (*pr.rho)[i] : 0.0;
            f[i] = pr.c * (wv - pr.wu[i]) - lap - pr.eta * wv - r;
            s[i] = pr.c * (std::abs(wv) + std::abs(pr.wu[i])) + lap_abs + std::abs(pr.eta * wv) + std::abs(r);
        }
        const double fn = weighted_norm(f);
        const double sn = weighted_norm(s);
        if (f_out) *f_out = std::move(f);
        return sn > 0.0 ? fn / sn : fn;
    }

    // Solves J delta = -mu .* F with J = diag(mu_i W'(v_i)(c - eta)) + K_g.
    bool newton_direction(const Problem& pr, const ScalarField& v, const ScalarField& f, ScalarField& delta) {
        Eigen::SparseMatrix<double> jac = pattern_;
        for (int k = 0; k < jac.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator itr(jac, k); itr; ++itr) itr.valueRef() = 0.0;
        for (const Edge& e : domain_.edges()) {
            const double kg = e.coupling() * dW(v[e.j] - v[e.i]);
            const int i = static_cast<int>(e.i), j = static_cast<int>(e.j);
            jac.coeffRef(i, i) += kg;
            jac.coeffRef(j, j) += kg;
            jac.coeffRef(i, j) -= kg;
            jac.coeffRef(j, i) -= kg;
        }
        for (int i = 0; i < jac.rows(); ++i) jac.coeffRef(i, i) += mu_[i] * dW(v[i]) * (pr.c - pr.eta);
        if (!analyzed_) {
            ldlt_.analyzePattern(jac);
            analyzed_ = true;
        }
        ldlt_.factorize(jac);
        if (ldlt_.info() != Eigen::Success) return false;
        delta = ldlt_.solve(Eigen::VectorXd(-mu_.cwiseProduct(f)));
        return ldlt_.info() == Eigen::Success && delta.allFinite();
    }

    // One Picard sweep with m(v) and the edge factors frozen at the current iterate.
    ScalarField lagged_solve(const Problem& pr, const ScalarField& v) {
        const std::size_t n = domain_.n();
        std::vector<Eigen::Triplet<double>> trip;
        std::vector<double> diag(n, 0.0);
        for (const Edge& e : domain_.edges()) {
            const double kw = e.coupling() * m(v[e.j] - v[e.i]);
            trip.emplace_back(static_cast<int>(e.i), static_cast<int>(e.j), -kw);
            trip.emplace_back(static_cast<int>(e.j), static_cast<int>(e.i), -kw);
            diag[e.i] += kw;
            diag[e.j] += kw;
        }
        Eigen::VectorXd rhs(n);
        for (std::size_t i = 0; i < n; ++i) {
            trip.emplace_back(static_cast<int>(i), static_cast<int>(i), diag[i] + mu_[i] * m(v[i]) * (pr.c - pr.eta));
            rhs[i] = mu_[i] * (pr.c * pr.wu[i] + (pr.rho ? (*pr.rho)[i] : 0.0));
        }
        Eigen::SparseMatrix<double> a(static_cast<int>(n), static_cast<int>(n));
        a.setFromTriplets(trip.begin(), trip.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
        if (solver.info() != Eigen::Success) throw Error(ErrorKind::convergence, "lagged p-step factorization failed");
        return solver.solve(rhs);
    }

    const WeightedDomain& domain_;
    double p_;
    double eps_;
    Eigen::VectorXd mu_;
    Eigen::SparseMatrix<double> pattern_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
    bool analyzed_ = false;
};

inline PStepResult step_p_implicit(const WeightedDomain& domain, const ScalarField& u, double dt, double p,
                                   double eta_val, const SolverOptions& solver = {}, double eps = 1e-8,
                                   const ScalarField* rho = nullptr) {
    PImplicitStepper stepper(domain, p, eps);
    return stepper.step(u, dt, eta_val, rho, solver);
}

// ---------------------------------------------------------------------------
// Perturbations

enum class PerturbationKind { linear, p };

/// Pointwise envelope of the admissible perturbation:
///   linear: |u_i| + sqrt(e_i),                       e = vertex_energy_density(u, 2)
///   p:      |u_i|^{p-1} + |u_i|^{p/2-1} sqrt(e_i),   e = vertex_energy_density(u, p)
/// with |u_i|^{p/2-1} taken as 0 when u_i = 0 and p < 2.
inline ScalarField perturbation_envelope(const WeightedDomain& domain, const ScalarField& u, PerturbationKind kind,
                                         double p = 2.0) {
    require_length(u, domain.n(), "perturbation_envelope");
    ScalarField env(domain.n());
    if (kind == PerturbationKind::linear) {
        const ScalarField e = vertex_energy_density(domain, u, 2.0);
        for (std::size_t i = 0; i < domain.n(); ++i) env[i] = std::abs(u[i]) + std::sqrt(e[i]);
        return env;
    }
    const ScalarField e = vertex_energy_density(domain, u, p);
    for (std::size_t i = 0; i < domain.n(); ++i) {
        const double a = std::abs(u[i]);
        const double lead = std::pow(a, p - 1.0);
        const double weight = (a == 0.0 && p < 2.0) ? 0.0 : std::pow(a, 0.5 * p - 1.0);
        env[i] = lead + weight * std::sqrt(e[i]);
    }
    return env;
}

/// rho_i = psi * theta_i * envelope_i with theta_i seeded-uniform in [-1, 1].
inline ScalarField make_perturbation(const WeightedDomain& domain, const ScalarField& u, double psi_val,
                                     std::uint64_t seed, PerturbationKind kind, double p = 2.0) {
    if (!(psi_val >= 0.0)) throw Error(ErrorKind::parameter, "perturbation scale psi must be nonnegative");
    if (psi_val == 0.0) {
        require_length(u, domain.n(), "make_perturbation");
        return ScalarField::Zero(static_cast<int>(domain.n()));
    }
    const ScalarField env = perturbation_envelope(domain, u, kind, p);
    Rng rng(seed);
    ScalarField rho(domain.n());
    for (std::size_t i = 0; i < domain.n(); ++i) rho[i] = psi_val * rng.uniform(-1.0, 1.0) * env[i];
    return rho;
}

// ---------------------------------------------------------------------------
// Driver

struct FlowOptions {
    Integrator integrator = Integrator::automatic;
    std::size_t dense_cap = default_dense_cap;
    const Spectrum* spectrum = nullptr;  // reused by the spectral path when given
};

inline constexpr double underflow_guard = 1e-280;

namespace detail {

[[noreturn]] inline void rethrow_at_step(std::size_t k) {
    try {
        throw;
    } catch (const ConvergenceError& e) {
        throw ConvergenceError("step " + std::to_string(k) + ": " + e.message(), e.best_iterate(), e.residual());
    } catch (const Error& e) {
        throw Error(e.kind(), "step " + std::to_string(k) + ": " + e.message());
    }
}

inline void check_state(const WeightedDomain& domain, const ScalarField& u, std::size_t k) {
    if (!u.allFinite()) throw Error(ErrorKind::convergence, "step " + std::to_string(k) + ": non-finite state");
    const double mass = mu_sq_sum(domain, u);
    if (mass < underflow_guard) {
        throw Error(ErrorKind::underflow, "step " + std::to_string(k) + ": I = " + format_number(mass) +
                                              " fell below the underflow guard");
    }
}

} // namespace detail

/// Runs one flow on the uniform grid a = t_0 < ... < t_K = b.
///
/// linear            spectral when n fits the dense cap, else implicit Euler
/// linear_perturbed  implicit step, then + dt * rho_k (explicit source)
/// p_heat            damped Newton implicit Euler, or its Richardson extrapolation
/// p_perturbed       damped Newton with rho_k inside the residual
///
/// phi, eta, psi and rho are all sampled at the left endpoint of each step.
inline Trajectory run_flow(const WeightedDomain& domain, const EquationSpec& eq, const ScalarField& u0,
                           const TimeGrid& grid, const FlowOptions& opts = {}) {
    detail::validate_equation(eq);
    require_length(u0, domain.n(), "run_flow");
    if (grid.K < 1) throw Error(ErrorKind::parameter, "time grid needs K >= 1");
    if (!(grid.b > grid.a)) throw Error(ErrorKind::parameter, "time grid needs b > a");
    if (!u0.allFinite()) throw Error(ErrorKind::precondition, "initial field has non-finite entries");
    if (u0.cwiseAbs().maxCoeff() == 0.0) throw Error(ErrorKind::precondition, "initial field is identically zero");
    if (eq.is_perturbed()) {
        if (eq.psi.inf(grid.a, grid.b) < 0.0) throw Error(ErrorKind::validation, "psi must be nonnegative on [a, b]");
    }

    Integrator integ = opts.integrator;
    switch (eq.kind) {
        case EquationKind::linear:
            if (integ == Integrator::automatic) {
                integ = domain.n() <= opts.dense_cap ? Integrator::spectral : Integrator::implicit_euler;
            }
            if (integ != Integrator::spectral && integ != Integrator::implicit_euler) {
                throw Error(ErrorKind::parameter, "linear flow supports spectral or implicit_euler");
            }
            break;
        case EquationKind::linear_perturbed:
            if (integ == Integrator::automatic) integ = Integrator::implicit_euler;
            if (integ != Integrator::implicit_euler) {
                throw Error(ErrorKind::parameter, "linear_perturbed flow uses implicit_euler");
            }
            break;
        case EquationKind::p_heat:
            if (integ == Integrator::automatic) integ = Integrator::newton_implicit;
            if (integ != Integrator::newton_implicit && integ != Integrator::newton_richardson) {
                throw Error(ErrorKind::parameter, "p_heat flow supports newton_implicit or newton_richardson");
            }
            break;
        case EquationKind::p_perturbed:
            if (integ == Integrator::automatic) integ = Integrator::newton_implicit;
            if (integ != Integrator::newton_implicit) throw Error(ErrorKind::parameter, "p_perturbed flow uses newton_implicit");
            break;
    }

    if (integ == Integrator::spectral) {
        Spectrum local;
        const Spectrum* spec = opts.spectrum;
        if (spec == nullptr) {
            local = eigendecompose(domain, std::nullopt, opts.dense_cap);
            spec = &local;
        }
        Trajectory traj = propagate_spectral(domain, *spec, u0, eq.drive, grid);
        traj.equation = eq;
        for (std::size_t k = 1; k <= grid.K; ++k) detail::check_state(domain, traj.states[k], k);
        return traj;
    }

    Trajectory traj;
    traj.grid = grid;
    traj.equation = eq;
    traj.integrator = integ;
    traj.times.push_back(grid.t(0));
    traj.states.push_back(u0);
    const double dt = grid.dt();

    std::optional<LinearImplicitStepper> lin;
    std::optional<PImplicitStepper> pstep;
    if (eq.is_p_kind()) pstep.emplace(domain, eq.p, eq.eps); else lin.emplace(domain);

    for (std::size_t k = 0; k < grid.K; ++k) {
        const double t = grid.t(k);
        const ScalarField& u = traj.states.back();
        const double drive = eq.drive(t);
        const double psi = eq.is_perturbed() ? eq.psi(t) : 0.0;
        if (psi < 0.0) throw Error(ErrorKind::validation, "psi is negative at t = " + format_number(t));
        traj.drive_samples.push_back(drive);
        traj.psi_samples.push_back(psi);

        ScalarField next;
        double residual = 0.0;
        try {
            switch (eq.kind) {
                case EquationKind::linear:
                    next = lin->step(u, dt, drive);
                    residual = lin->last_residual();
                    break;
                case EquationKind::linear_perturbed: {
                    ScalarField rho = make_perturbation(domain, u, psi, derive_seed(eq.perturbation_seed, {k}),
                                                        PerturbationKind::linear);
                    next = lin->step(u, dt, 0.0);
                    residual = lin->last_residual();
                    if (psi != 0.0) next += dt * rho;
                    traj.perturbations.push_back(std::move(rho));
                    break;
                }
                case EquationKind::p_heat:
                    if (integ == Integrator::newton_richardson) {
                        PStepResult full = pstep->step(u, dt, drive, nullptr, eq.solver);
                        PStepResult half = pstep->step(u, 0.5 * dt, drive, nullptr, eq.solver);
                        PStepResult half2 = pstep->step(half.v, 0.5 * dt, eq.drive(t + 0.5 * dt), nullptr, eq.solver);
                        next = 2.0 * half2.v - full.v;
                        residual = std::max({full.residual, half.residual, half2.residual});
                    } else {
                        PStepResult r = pstep->step(u, dt, drive, nullptr, eq.solver);
                        next = std::move(r.v);
                        residual = r.residual;
                    }
                    break;
                case EquationKind::p_perturbed: {
                    ScalarField rho = make_perturbation(domain, u, psi, derive_seed(eq.perturbation_seed, {k}),
                                                        PerturbationKind::p, eq.p);
                    PStepResult r = pstep->step(u, dt, 0.0, &rho, eq.solver);
                    next = std::move(r.v);
                    residual = r.residual;
                    traj.perturbations.push_back(std::move(rho));
                    break;
                }
            }
        } catch (const Error&) {
            detail::rethrow_at_step(k);
        }
        detail::check_state(domain, next, k + 1);
        traj.step_residuals.push_back(residual);
        traj.times.push_back(grid.t(k + 1));
        traj.states.push_back(std::move(next));
    }
    traj.drive_samples.push_back(eq.drive(grid.b));
    traj.psi_samples.push_back(eq.is_perturbed() ? eq.psi(grid.b) : 0.0);
    return traj;
}

} // namespace parafreq

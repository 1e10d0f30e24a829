#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "parafreq/flow.hpp"
#include "parafreq/p_eigen.hpp"

namespace parafreq {

struct Functionals {
    double I = 0.0;
    double D = 0.0;
    double U = 0.0;
};

/// I = sum mu u^2, D = -E_T(u, u), U = D / I.
inline Functionals functionals_linear(const WeightedDomain& domain, const ScalarField& u) {
    require_length(u, domain.n(), "functionals_linear");
    const double I = mu_power_sum(domain, u, 2.0);
    if (!(I > 0.0)) throw Error(ErrorKind::undefined_frequency, "frequency is undefined for the zero field");
    const double D = -dirichlet_form(domain, u, u);
    return {I, D, D / I};
}

/// I_p = sum mu |u|^p, D_p = -sum w c |du|^p, U_p = D_p / I_p.
inline Functionals functionals_p(const WeightedDomain& domain, const ScalarField& u, double p) {
    require_length(u, domain.n(), "functionals_p");
    if (!(p > 1.0)) throw Error(ErrorKind::parameter, "functionals_p needs p > 1");
    if (p == 2.0) return functionals_linear(domain, u);
    const double I = mu_power_sum(domain, u, p);
    if (!(I > 0.0)) throw Error(ErrorKind::undefined_frequency, "frequency is undefined for the zero field");
    const double D = -p_energy(domain, u, p);
    return {I, D, D / I};
}

struct FrequencySeries {
    std::vector<double> t, I, D, U;
    std::vector<double> drive;  // phi or eta samples
    std::vector<double> psi;
    double p = 2.0;
    TimeGrid grid;
    EquationSpec equation;
    Integrator integrator = Integrator::automatic;

    std::size_t size() const noexcept { return t.size(); }
    double dt() const noexcept { return grid.dt(); }
};

inline FrequencySeries frequency_series(const WeightedDomain& domain, const Trajectory& traj) {
    FrequencySeries s;
    s.p = traj.equation.exponent();
    s.grid = traj.grid;
    s.equation = traj.equation;
    s.integrator = traj.integrator;
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        Functionals f;
        try {
            f = functionals_p(domain, traj.states[k], s.p);
        } catch (const Error& e) {
            throw Error(e.kind(), "step " + std::to_string(k) + ": " + e.message());
        }
        s.t.push_back(traj.times[k]);
        s.I.push_back(f.I);
        s.D.push_back(f.D);
        s.U.push_back(f.U);
        s.drive.push_back(k < traj.drive_samples.size() ? traj.drive_samples[k] : 0.0);
        s.psi.push_back(k < traj.psi_samples.size() ? traj.psi_samples[k] : 0.0);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Check results

struct CheckResult {
    std::string name;
    std::string anchor;
    bool pass = false;
    double worst_violation = 0.0;
    double tolerance = 0.0;
    long location = -1;  // step index of the worst violation, -1 when not step-based
    std::string note;
};

inline CheckResult make_check(std::string name, std::string anchor, double worst, double tol, long location,
                              std::string note = {}) {
    CheckResult r;
    r.name = std::move(name);
    r.anchor = std::move(anchor);
    r.worst_violation = worst;
    r.tolerance = tol;
    r.pass = worst <= tol;  // NaN fails
    r.location = location;
    r.note = std::move(note);
    return r;
}

namespace detail {

// Running maximum that remembers where it happened; NaN always wins.
struct Worst {
    double value = -std::numeric_limits<double>::infinity();
    long at = -1;
    void update(double v, std::size_t k) {
        if (std::isnan(value)) return;
        if (std::isnan(v) || v > value) {
            value = v;
            at = static_cast<long>(k);
        }
    }
};

inline void require_points(const FrequencySeries& s, std::size_t count, const char* what) {
    if (s.size() < count) {
        throw Error(ErrorKind::input, std::string(what) + " needs a series of at least " + std::to_string(count) +
                                          " points");
    }
}

inline double drive_integral(const FrequencySeries& s) { return s.equation.drive.integral(s.grid.a, s.grid.b); }

// 1 - I_K / bound evaluated as 1 - exp(log I_K - log bound), so huge or tiny
// exponents do not overflow before the comparison.
inline double relative_shortfall(double I_end, double I_start, double exponent) {
    return -std::expm1(std::log(I_end) - std::log(I_start) - exponent);
}

} // namespace detail

/// I_k > 0, D_k <= 1e-14, U_k <= 1e-14 at every step. U <= 0 also keeps
/// log(1 - U) well defined for the perturbed checks.
inline CheckResult check_frequency_invariants(const FrequencySeries& s) {
    detail::Worst w;
    for (std::size_t k = 0; k < s.size(); ++k) {
        w.update(std::max(s.D[k], s.U[k]), k);
        if (!(s.I[k] > 0.0)) w.update(std::numeric_limits<double>::infinity(), k);
    }
    return make_check("frequency_invariants", "frequency-sign", w.value, 1e-14, w.at);
}

/// max_k (U_k - U_{k+1}) <= tol.
inline CheckResult check_monotonicity(const FrequencySeries& s, double tol) {
    detail::require_points(s, 2, "check_monotonicity");
    if (!(tol >= 0.0)) throw Error(ErrorKind::parameter, "monotonicity tolerance must be nonnegative");
    detail::Worst w;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) w.update(s.U[k] - s.U[k + 1], k);
    return make_check("monotonicity", "frequency-monotonicity", w.value, tol, w.at);
}

/// Default tolerance for discrete monotonicity: exact for the spectral path,
/// c*dt + 1e-8 for time-stepped trajectories.
inline double default_monotonicity_tolerance(const FrequencySeries& s, double c = 10.0) {
    return s.integrator == Integrator::spectral ? 1e-10 : c * s.dt() + 1e-8;
}

/// Violation shrinkage between a run and its dt/2 companion. Passes when the
/// coarse run has no violation or when the shrink factor lies in [lo, hi].
inline CheckResult check_monotonicity_refinement(const FrequencySeries& coarse, const FrequencySeries& fine,
                                                 double lo = 1.5, double hi = 3.0) {
    detail::require_points(coarse, 2, "check_monotonicity_refinement");
    detail::require_points(fine, 2, "check_monotonicity_refinement");
    const double vc = check_monotonicity(coarse, 0.0).worst_violation;
    const double vf = check_monotonicity(fine, 0.0).worst_violation;
    if (!(vc > 0.0)) {
        return make_check("monotonicity_refinement", "frequency-monotonicity", 0.0, 0.0, -1,
                          "no violation at the coarse step");
    }
    const double ratio = vf > 0.0 ? vc / vf : std::numeric_limits<double>::infinity();
    const double miss = std::max({0.0, lo - ratio, ratio - hi});
    return make_check("monotonicity_refinement", "frequency-monotonicity", std::isnan(ratio) ? ratio : miss, 0.0, -1,
                      "shrink factor " + format_number(ratio));
}

namespace detail {

// |central difference of log I - (p drive + p U)| at interior nodes.
inline std::vector<double> log_derivative_errors(const FrequencySeries& s) {
    std::vector<double> err(s.size(), 0.0);
    const double h = s.dt();
    for (std::size_t k = 1; k + 1 < s.size(); ++k) {
        const double fd = (std::log(s.I[k + 1]) - std::log(s.I[k - 1])) / (2.0 * h);
        err[k] = std::abs(fd - s.p * (s.drive[k] + s.U[k]));
    }
    return err;
}

inline void require_unperturbed(const FrequencySeries& s, const char* what) {
    if (s.equation.is_perturbed()) throw Error(ErrorKind::input, std::string(what) + " applies to unperturbed runs");
}

} // namespace detail

/// Central differences of log I against p * drive + p * U at interior nodes,
/// with tolerance tol_factor * dt^2 * max(1, max|(log I)'''|). The third
/// derivative is estimated from the series with the five-point stencil; the
/// central-difference truncation error is dt^2 |(log I)'''| / 6.
/// With a dt/2 companion, also checks that the error shrinks by a factor in
/// [3, 5] at the shared nodes.
inline std::vector<CheckResult> check_log_derivative(const FrequencySeries& s, double tol_factor,
                                                     const FrequencySeries* companion = nullptr,
                                                     bool require_ratio = false) {
    detail::require_unperturbed(s, "check_log_derivative");
    detail::require_points(s, 5, "check_log_derivative");
    if (require_ratio && companion == nullptr) {
        throw Error(ErrorKind::input, "log-derivative ratio check needs a dt/2 companion series");
    }
    const double h = s.dt();
    double scale = 1.0;
    for (std::size_t k = 2; k + 2 < s.size(); ++k) {
        auto l = [&](std::size_t j) { return std::log(s.I[j]); };
        const double third = (l(k + 2) - 2.0 * l(k + 1) + 2.0 * l(k - 1) - l(k - 2)) / (2.0 * h * h * h);
        scale = std::max(scale, std::abs(third));
    }
    const double tol = tol_factor * h * h * scale;
    const auto err = detail::log_derivative_errors(s);
    detail::Worst w;
    for (std::size_t k = 1; k + 1 < s.size(); ++k) w.update(err[k], k);

    std::vector<CheckResult> out;
    out.push_back(make_check("log_derivative", "log-mass-derivative", w.value, tol, w.at));
    if (companion == nullptr) return out;

    const FrequencySeries& f = *companion;
    detail::require_unperturbed(f, "check_log_derivative");
    if (f.size() != 2 * s.size() - 1 || std::abs(f.grid.a - s.grid.a) > 0.0 || std::abs(f.grid.b - s.grid.b) > 0.0) {
        throw Error(ErrorKind::input, "companion series must cover the same interval with half the step");
    }
    const auto ferr = detail::log_derivative_errors(f);
    double coarse = 0.0, fine = 0.0;
    for (std::size_t k = 1; k + 1 < s.size(); ++k) {
        coarse = std::max(coarse, err[k]);
        fine = std::max(fine, ferr[2 * k]);
    }
    const double ratio = coarse / fine;
    const double miss = std::isnan(ratio) ? ratio : std::max({0.0, 3.0 - ratio, ratio - 5.0});
    out.push_back(make_check("log_derivative_ratio", "log-mass-derivative", miss, 0.0, -1,
                             "error ratio " + format_number(ratio)));
    return out;
}

/// Second differences of log I >= -tol. Refuses to run when the drive is not
/// nondecreasing on [a, b].
inline CheckResult check_log_convexity(const FrequencySeries& s, double tol) {
    detail::require_unperturbed(s, "check_log_convexity");
    detail::require_points(s, 3, "check_log_convexity");
    if (!s.equation.drive.nondecreasing_on(s.grid.a, s.grid.b)) {
        throw Error(ErrorKind::hypothesis_violation, "log-convexity needs a nondecreasing phi/eta");
    }
    detail::Worst w;
    for (std::size_t k = 1; k + 1 < s.size(); ++k) {
        const double second = std::log(s.I[k + 1]) - 2.0 * std::log(s.I[k]) + std::log(s.I[k - 1]);
        w.update(-second, k);
    }
    return make_check("log_convexity", "log-convexity", w.value, tol, w.at);
}

/// I(b) >= I(a) exp(p int drive + p U(a)(b - a)). With expect_equality the
/// two-sided gap must be within 1e-8.
inline CheckResult check_growth_bound(const FrequencySeries& s, bool expect_equality = false) {
    detail::require_unperturbed(s, "check_growth_bound");
    detail::require_points(s, 2, "check_growth_bound");
    const double exponent = s.p * detail::drive_integral(s) + s.p * s.U.front() * (s.grid.b - s.grid.a);
    const double shortfall = detail::relative_shortfall(s.I.back(), s.I.front(), exponent);
    const double worst = expect_equality ? std::abs(shortfall) : shortfall;
    return make_check(expect_equality ? "growth_bound_equality" : "growth_bound", "terminal-growth-bound", worst, 1e-8,
                      static_cast<long>(s.size() - 1), "gap " + format_number(-shortfall));
}

// ---------------------------------------------------------------------------
// Rigidity

/// Flips v so that its mu-inner product with the reference is nonnegative.
inline ScalarField align_sign(const WeightedDomain& domain, const ScalarField& reference, const ScalarField& v) {
    return mu_inner(domain, reference, v) < 0.0 ? ScalarField(-v) : v;
}

/// Linear eigen-data: U_k = -lambda and u(t) = exp(-lambda (t - a) + int phi) u(a).
inline std::vector<CheckResult> check_rigidity(const WeightedDomain& domain, const FrequencySeries& s,
                                               const Trajectory& traj, double lambda, double tol_frequency = 1e-9,
                                               double tol_field = 1e-8) {
    if (traj.equation.kind != EquationKind::linear) throw Error(ErrorKind::input, "linear rigidity needs a linear run");
    const ScalarField& u0 = traj.states.front();
    const double residual = mu_norm(domain, apply_operator(domain, u0) + lambda * u0);
    if (residual > 1e-8 * std::max(1.0, lambda) * mu_norm(domain, u0)) {
        throw Error(ErrorKind::precondition, "initial data is not an eigenfunction (residual " +
                                                 format_number(residual) + ")");
    }
    detail::Worst wf, wu;
    const double u_scale = std::max(1.0, u0.cwiseAbs().maxCoeff());
    for (std::size_t k = 0; k < s.size(); ++k) {
        wf.update(std::abs(s.U[k] + lambda), k);
        const double factor = std::exp(-lambda * (traj.times[k] - traj.grid.a) +
                                       traj.equation.drive.integral(traj.grid.a, traj.times[k]));
        wu.update((traj.states[k] - factor * u0).cwiseAbs().maxCoeff() / u_scale, k);
    }
    return {make_check("rigidity_frequency", "eigenfunction-rigidity", wf.value, tol_frequency, wf.at),
            make_check("rigidity_field", "eigenfunction-rigidity", wu.value, tol_field, wu.at)};
}

/// p-eigen-data: w(t) = u|u|^{p-2} satisfies w(t) = exp((p-1)(-lambda_p (t - a) + int eta)) w(a).
inline std::vector<CheckResult> check_rigidity_p(const WeightedDomain& domain, const FrequencySeries& s,
                                                 const Trajectory& traj, double lambda_p, double tol_field = 1e-3,
                                                 double eigen_tol = 1e-6) {
    if (traj.equation.kind != EquationKind::p_heat) throw Error(ErrorKind::input, "p rigidity needs a p_heat run");
    const double p = traj.equation.p;
    const ScalarField& u0 = traj.states.front();
    const ScalarField w0 = detail::signed_power(u0, p - 1.0);
    const double residual = mu_norm(domain, apply_p_operator(domain, u0, p, 0.0) + lambda_p * w0);
    if (residual > eigen_tol * std::max(1.0, lambda_p) * std::max(mu_norm(domain, w0), 1e-300)) {
        throw Error(ErrorKind::precondition, "initial data is not a p-eigenfunction (residual " +
                                                 format_number(residual) + ")");
    }
    detail::Worst wf, wu;
    const double w_scale = std::max(1.0, w0.cwiseAbs().maxCoeff());
    for (std::size_t k = 0; k < s.size(); ++k) {
        wf.update(std::abs(s.U[k] + lambda_p), k);
        const double factor = std::exp((p - 1.0) * (-lambda_p * (traj.times[k] - traj.grid.a) +
                                                    traj.equation.drive.integral(traj.grid.a, traj.times[k])));
        const ScalarField wk = detail::signed_power(traj.states[k], p - 1.0);
        wu.update((wk - factor * w0).cwiseAbs().maxCoeff() / w_scale, k);
    }
    return {make_check("rigidity_p_frequency", "p-eigenfunction-rigidity", wf.value, tol_field, wf.at),
            make_check("rigidity_p_field", "p-eigenfunction-rigidity", wu.value, tol_field, wu.at)};
}

// ---------------------------------------------------------------------------
// Perturbed inequalities and terminal bounds

namespace detail {

struct PsiSummary {
    double sup = 0.0;
    double square_integral = 0.0;
};

inline PsiSummary psi_summary(const FrequencySeries& s) {
    if (!s.equation.is_perturbed()) return {};
    return {std::max(0.0, s.equation.psi.sup(s.grid.a, s.grid.b)),
            s.equation.psi.integral_of_square(s.grid.a, s.grid.b)};
}

} // namespace detail

/// Exponent of the terminal bound for perturbed linear runs:
///   (b - a)[(2 + sup psi) exp(int psi^2)(U(a) - 1) + 2 - sup psi].
inline double perturbed_linear_exponent(const FrequencySeries& s) {
    const auto ps = detail::psi_summary(s);
    return (s.grid.b - s.grid.a) *
           ((2.0 + ps.sup) * std::exp(ps.square_integral) * (s.U.front() - 1.0) + 2.0 - ps.sup);
}

/// Exponent of the terminal bound for perturbed p runs, obtained by feeding the
/// lower bound U_p(t) >= 1 - E(1 - U_p(a)), E = exp((p/2) int psi^2), into
/// (log I_p)' >= p(1 + psi/2) U_p - (3p/2) psi:
///   (p (b - a) / 2) [(2 + s)(E (U_p(a) - 1) + 1) - 3 s],  s = sup psi.
/// Reduces to p U_p(a)(b - a) when psi = 0.
inline double perturbed_p_exponent(const FrequencySeries& s) {
    const auto ps = detail::psi_summary(s);
    const double E = std::exp(0.5 * s.p * ps.square_integral);
    return 0.5 * s.p * (s.grid.b - s.grid.a) * ((2.0 + ps.sup) * (E * (s.U.front() - 1.0) + 1.0) - 3.0 * ps.sup);
}

/// The alternative closed form
///   (p (b - a) / 2) [(U_p(a) - 1) exp((2 + s)(p/2) int psi^2) + 1 - 3 s].
/// At psi = 0 it claims exp((p/2) U_p(a)(b - a)), which exceeds the exact decay
/// of a p-eigenfunction, so it is only reported as a diagnostic.
inline double alternative_p_exponent(const FrequencySeries& s) {
    const auto ps = detail::psi_summary(s);
    return 0.5 * s.p * (s.grid.b - s.grid.a) *
           ((s.U.front() - 1.0) * std::exp((2.0 + ps.sup) * 0.5 * s.p * ps.square_integral) + 1.0 - 3.0 * ps.sup);
}

/// Relative shortfall of I(b) against the alternative form; positive means it is violated.
inline double alternative_p_bound_shortfall(const FrequencySeries& s) {
    return detail::relative_shortfall(s.I.back(), s.I.front(), alternative_p_exponent(s));
}

/// Forward differences (U_{k+1} - U_k)/dt >= psi_k^2 (U_k - 1) - tol with
/// tol = c dt + floor, plus the terminal bound.
inline std::vector<CheckResult> check_perturbed_linear(const FrequencySeries& s, double c = 10.0, double floor = 1e-8) {
    if (s.equation.is_p_kind()) throw Error(ErrorKind::input, "check_perturbed_linear needs a linear-kind series");
    detail::require_points(s, 2, "check_perturbed_linear");
    const double dt = s.dt();
    detail::Worst w;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        const double lhs = (s.U[k + 1] - s.U[k]) / dt;
        w.update(s.psi[k] * s.psi[k] * (s.U[k] - 1.0) - lhs, k);
    }
    const double shortfall = detail::relative_shortfall(s.I.back(), s.I.front(), perturbed_linear_exponent(s));
    return {make_check("perturbed_frequency_inequality", "perturbed-frequency-inequality", w.value, c * dt + floor, w.at),
            make_check("perturbed_growth_bound", "perturbed-terminal-bound", shortfall, 1e-8,
                       static_cast<long>(s.size() - 1))};
}

/// Discrete forms of
///   U_p' >= (p/2) psi^2 (U_p - 1),
///   psi^2 >= (2/p) [log(1 - U_p)]',
///   [log I_p]' >= p (1 + psi/2) U_p - (3p/2) psi,
/// each within c dt + floor, plus the terminal bound.
inline std::vector<CheckResult> check_perturbed_p(const FrequencySeries& s, double c = 10.0, double floor = 1e-8) {
    if (!s.equation.is_p_kind()) throw Error(ErrorKind::input, "check_perturbed_p needs a p-kind series");
    detail::require_points(s, 2, "check_perturbed_p");
    const double dt = s.dt();
    const double p = s.p;
    detail::Worst w1, w2, w3;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        const double psi = s.psi[k];
        const double dU = (s.U[k + 1] - s.U[k]) / dt;
        w1.update(0.5 * p * psi * psi * (s.U[k] - 1.0) - dU, k);
        const double dlog1mu = (std::log1p(-s.U[k + 1]) - std::log1p(-s.U[k])) / dt;
        w2.update((2.0 / p) * dlog1mu - psi * psi, k);
        const double dlogI = (std::log(s.I[k + 1]) - std::log(s.I[k])) / dt;
        w3.update(p * (1.0 + 0.5 * psi) * s.U[k] - 1.5 * p * psi - dlogI, k);
    }
    const double tol = c * dt + floor;
    const long last = static_cast<long>(s.size() - 1);
    const double shortfall = detail::relative_shortfall(s.I.back(), s.I.front(), perturbed_p_exponent(s));
    return {make_check("p_frequency_inequality", "perturbed-p-frequency-inequality", w1.value, tol, w1.at),
            make_check("p_log_frequency_inequality", "perturbed-p-log-frequency-inequality", w2.value, tol, w2.at),
            make_check("p_log_mass_inequality", "perturbed-p-log-mass-inequality", w3.value, tol, w3.at),
            make_check("p_terminal_bound", "perturbed-p-terminal-bound", shortfall, 1e-8, last)};
}

/// Contrapositive of backward uniqueness: I(b) is at least a positive lower
/// bound determined by the equation kind.
inline CheckResult check_backward_uniqueness(const FrequencySeries& s) {
    detail::require_points(s, 2, "check_backward_uniqueness");
    double exponent = 0.0;
    switch (s.equation.kind) {
        case EquationKind::linear:
        case EquationKind::p_heat:
            exponent = s.p * detail::drive_integral(s) + s.p * s.U.front() * (s.grid.b - s.grid.a);
            break;
        case EquationKind::linear_perturbed: exponent = perturbed_linear_exponent(s); break;
        case EquationKind::p_perturbed: exponent = perturbed_p_exponent(s); break;
    }
    const double bound = s.I.front() * std::exp(exponent);
    const double shortfall = bound > 0.0 ? detail::relative_shortfall(s.I.back(), s.I.front(), exponent)
                                         : std::numeric_limits<double>::infinity();
    return make_check("backward_uniqueness", "backward-uniqueness", shortfall, 1e-8, static_cast<long>(s.size() - 1),
                      "bound " + format_number(bound));
}

} // namespace parafreq

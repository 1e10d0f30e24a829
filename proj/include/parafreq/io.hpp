#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "parafreq/frequency.hpp"

namespace parafreq {

using ordered_json = nlohmann::ordered_json;

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << content;
    out.close();
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw Error(ErrorKind::io, "cannot create output directory " + dir.string() +
                                       (ec ? ": " + ec.message() : std::string{}));
    }
}

// ---------------------------------------------------------------------------
// CSV

/// t,I,D,U,phi_or_eta,psi
inline std::string frequency_csv(const FrequencySeries& s) {
    std::string out = "t,I,D,U,phi_or_eta,psi\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        out += format_number(s.t[k]) + ',' + format_number(s.I[k]) + ',' + format_number(s.D[k]) + ',' +
               format_number(s.U[k]) + ',' + format_number(s.drive[k]) + ',' + format_number(s.psi[k]) + '\n';
    }
    return out;
}

/// t,vertex_0,...,vertex_{n-1}
inline std::string trajectory_csv(const Trajectory& traj) {
    std::string out = "t";
    const auto n = traj.states.empty() ? 0 : traj.states.front().size();
    for (Eigen::Index i = 0; i < n; ++i) out += ",vertex_" + std::to_string(i);
    out += '\n';
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        out += format_number(traj.times[k]);
        for (Eigen::Index i = 0; i < n; ++i) out += ',' + format_number(traj.states[k][i]);
        out += '\n';
    }
    return out;
}

/// k,lambda
inline std::string spectrum_csv(const Spectrum& spec) {
    std::string out = "k,lambda\n";
    for (std::size_t k = 0; k < spec.size(); ++k) {
        out += std::to_string(k) + ',' + format_number(spec.eigenvalues[static_cast<Eigen::Index>(k)]) + '\n';
    }
    return out;
}

/// One row per vertex, one column per eigenvector.
inline std::string eigenvectors_csv(const Spectrum& spec) {
    std::string out;
    for (Eigen::Index c = 0; c < spec.eigenvectors.cols(); ++c) out += (c ? ",phi_" : "phi_") + std::to_string(c);
    out += '\n';
    for (Eigen::Index i = 0; i < spec.eigenvectors.rows(); ++i) {
        for (Eigen::Index c = 0; c < spec.eigenvectors.cols(); ++c) {
            if (c) out += ',';
            out += format_number(spec.eigenvectors(i, c));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON echo

inline ordered_json to_json(const TimeFunction& f) {
    ordered_json j;
    switch (f.kind()) {
        case TimeFunction::Kind::constant:
            j["kind"] = "constant";
            j["value"] = f.value();
            break;
        case TimeFunction::Kind::linear:
            j["kind"] = "linear";
            j["slope"] = f.slope();
            j["intercept"] = f.intercept();
            break;
        case TimeFunction::Kind::sinusoid:
            j["kind"] = "sinusoid";
            j["amplitude"] = f.amplitude();
            j["omega"] = f.omega();
            j["phase"] = f.phase();
            break;
        case TimeFunction::Kind::piecewise_linear: {
            j["kind"] = "piecewise_linear";
            auto knots = ordered_json::array();
            for (const auto& [t, v] : f.knots()) knots.push_back({t, v});
            j["knots"] = std::move(knots);
            break;
        }
    }
    return j;
}

inline ordered_json to_json(const EquationSpec& eq) {
    ordered_json j;
    j["kind"] = to_string(eq.kind);
    if (eq.is_p_kind()) j["p"] = eq.p;
    if (eq.kind == EquationKind::linear) j["phi"] = to_json(eq.drive);
    if (eq.kind == EquationKind::p_heat) j["eta"] = to_json(eq.drive);
    if (eq.is_perturbed()) {
        j["psi"] = to_json(eq.psi);
        j["perturbation_seed"] = eq.perturbation_seed;
    }
    j["eps"] = eq.eps;
    j["solver"] = {{"newton_tol", eq.solver.newton_tol},
                   {"max_iters", eq.solver.max_iters},
                   {"max_halvings", eq.solver.max_halvings},
                   {"fallback_iters", eq.solver.fallback_iters}};
    return j;
}

/// Sidecar for trajectory.csv: equation, grid, integrator, seeds and residual maxima.
inline ordered_json trajectory_metadata(const Trajectory& traj) {
    ordered_json j;
    j["equation"] = to_json(traj.equation);
    j["integrator"] = to_string(traj.integrator);
    j["time"] = {{"a", traj.grid.a}, {"b", traj.grid.b}, {"K", traj.grid.K}, {"dt", traj.grid.dt()}};
    j["vertices"] = traj.states.empty() ? 0 : traj.states.front().size();
    double worst = 0.0;
    for (double r : traj.step_residuals) worst = std::max(worst, r);
    j["max_step_residual"] = worst;
    j["perturbation_steps"] = traj.perturbations.size();
    return j;
}

inline ordered_json to_json(const CheckResult& r) {
    ordered_json j;
    j["name"] = r.name;
    j["anchor"] = r.anchor;
    j["pass"] = r.pass;
    j["worst_violation"] = r.worst_violation;
    j["tolerance"] = r.tolerance;
    j["location"] = r.location;
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

} // namespace parafreq

#pragma once

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "parafreq/identities.hpp"
#include "parafreq/oracles.hpp"
#include "parafreq/scenario.hpp"

namespace parafreq {

enum class SuiteSize { small, full };

struct SuiteOptions {
    std::uint64_t seed = 42;
    SuiteSize size = SuiteSize::small;
    std::filesystem::path out_dir = "verify-out";
    std::map<std::string, double> overrides;  // check name -> replacement tolerance
    unsigned jobs = 1;
    bool write_runs = true;  // per-run frequency CSVs under out_dir/runs
};

/// One check evaluated on one scenario.
struct SuiteRow {
    std::string scenario;
    CheckResult check;
};

/// A series kept for the criteria that aggregate over other criteria's runs.
struct SuiteRun {
    std::string label;
    FrequencySeries series;
    bool eigen_data = false;  // linear eigenfunction initial data on the spectral path
};

struct CriterionResult {
    int id = 0;
    std::string title;
    std::vector<SuiteRow> rows;
    std::vector<SuiteRun> runs;
    double seconds = 0.0;

    bool pass() const {
        if (rows.empty()) return false;
        return std::all_of(rows.begin(), rows.end(), [](const SuiteRow& r) { return r.check.pass; });
    }
};

/// Worst row per check name within a criterion. The reported row is the one
/// with the largest margin worst_violation - tolerance.
struct SummaryRow {
    int criterion = 0;
    std::string check;
    std::string anchor;
    std::size_t scenarios = 0;
    std::size_t failures = 0;
    double worst_violation = 0.0;
    double tolerance = 0.0;
    std::string worst_scenario;
    std::string note;
    bool pass() const { return failures == 0; }
};

struct SuiteResult {
    std::vector<CriterionResult> criteria;  // ordered by id
    std::vector<SummaryRow> summary;

    bool pass() const {
        return std::all_of(criteria.begin(), criteria.end(), [](const CriterionResult& c) { return c.pass(); });
    }
};

namespace detail {

// Seed counters: (master, criterion, scenario, stream).
enum Stream : std::uint64_t { domain_stream = 0, init_stream = 1, perturbation_stream = 2, drive_stream = 5 };

inline std::uint64_t suite_seed(std::uint64_t master, int criterion, std::size_t scenario, Stream stream) {
    return derive_seed(master, {static_cast<std::uint64_t>(criterion), scenario, stream});
}

inline std::string scenario_label(int criterion, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%02d_s%03zu", criterion, index);
    return buf;
}

inline WeightedDomain suite_random_domain(std::size_t n, std::uint64_t seed) {
    DomainSpec ds;
    RandomGraphSpec rg;
    rg.n = n;
    rg.target_degree = 4.0;
    rg.seed = seed;
    rg.weight_low = 0.5;
    rg.weight_high = 1.5;
    rg.conductance_low = 0.5;
    rg.conductance_high = 2.0;
    ds.shape = rg;
    ds.measure.kind = MeasureSpec::Kind::f_uniform;
    ds.measure.low = -0.5;
    ds.measure.high = 0.5;
    ds.measure.seed = derive_seed(seed, {1});
    return build_domain(ds);
}

inline ScalarField suite_random_field(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    ScalarField u(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) u[static_cast<Eigen::Index>(i)] = rng.uniform(lo, hi);
    return u;
}

// kind 0: zero, 1: constant, 2: linear, 3: sinusoid; parameters drawn from seed.
inline TimeFunction suite_drive(std::size_t kind, std::uint64_t seed) {
    Rng rng(seed);
    switch (kind % 4) {
        case 0: return TimeFunction::constant(0.0);
        case 1: return TimeFunction::constant(rng.uniform(-1.0, 1.0));
        case 2: {
            const double slope = rng.uniform(-1.0, 1.0);
            return TimeFunction::linear(slope, rng.uniform(-0.5, 0.5));
        }
        default: {
            const double amp = rng.uniform(0.2, 1.0);
            const double omega = rng.uniform(1.0, 8.0);
            return TimeFunction::sinusoid(amp, omega, rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
    }
}

inline std::size_t pick(SuiteSize size, std::size_t small, std::size_t full) {
    return size == SuiteSize::full ? full : small;
}

class CriterionBuilder {
public:
    CriterionBuilder(int id, std::string title, const SuiteOptions& opts) : opts_(opts) {
        result_.id = id;
        result_.title = std::move(title);
    }

    void add(const std::string& scenario, const CheckResult& r) { result_.rows.push_back({scenario, r}); }
    void add(const std::string& scenario, const std::vector<CheckResult>& rs) {
        for (const auto& r : rs) add(scenario, r);
    }

    /// Runs body and turns library errors into a failed row for that scenario.
    void guarded(const std::string& scenario, const std::string& what, const std::function<void()>& body) {
        try {
            body();
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::io) throw;
            add(scenario, make_check(what, "execution", std::numeric_limits<double>::quiet_NaN(), 0.0, -1,
                                     std::string(to_string(e.kind())) + ": " + e.message()));
        }
    }

    void keep(const std::string& label, const FrequencySeries& s, bool eigen_data = false) {
        if (opts_.write_runs) write_text_file(opts_.out_dir / "runs" / (label + ".frequency.csv"), frequency_csv(s));
        result_.runs.push_back({label, s, eigen_data});
    }

    CriterionResult finish() { return std::move(result_); }

private:
    const SuiteOptions& opts_;
    CriterionResult result_;
};

// ---------------------------------------------------------------------------
// Criteria

inline CriterionResult criterion_identities(const SuiteOptions& o) {
    CriterionBuilder c(1, "operator identities", o);
    const std::size_t graphs = pick(o.size, 10, 50);
    for (std::size_t g = 0; g < graphs; ++g) {
        const std::string label = scenario_label(1, g);
        c.guarded(label, "identities", [&] {
            Rng rng(suite_seed(o.seed, 1, g, drive_stream));
            const auto n = static_cast<std::size_t>(5 + std::floor(rng.uniform(0.0, 196.0)));
            const WeightedDomain d = suite_random_domain(std::min<std::size_t>(n, 200), suite_seed(o.seed, 1, g, domain_stream));
            c.add(label, check_identities(d, 20, suite_seed(o.seed, 1, g, init_stream), 1e-12));
        });
    }
    return c.finish();
}

inline CriterionResult criterion_product_rule(const SuiteOptions& o) {
    CriterionBuilder c(2, "product-rule consistency", o);
    std::vector<ProductRuleSetup> setups(3);
    setups[0].u = {1.0, 0.0, 0.0};
    setups[0].v = {0.0, 1.0, 0.5 * std::numbers::pi};
    setups[1].u = {1.0, 1.0, 0.3};
    setups[1].v = {2.0, -1.0, 1.1};
    setups[1].f_amplitude = 0.4;
    setups[2] = setups[1];
    setups[2].grid.txx = 1.5;
    setups[2].grid.tyy = 0.7;
    setups[2].grid.ax = 0.3;
    setups[2].grid.ay = -0.2;
    for (std::size_t i = 0; i < setups.size(); ++i) {
        const std::string label = scenario_label(2, i);
        c.guarded(label, "product_rule_trend", [&] { c.add(label, check_product_rule_trend(setups[i], {8, 16, 32})); });
    }
    return c.finish();
}

inline CriterionResult criterion_oracle(const SuiteOptions& o) {
    CriterionBuilder c(3, "spectral propagation against the matrix exponential", o);
    const std::size_t count = pick(o.size, 4, 10);
    for (std::size_t s = 0; s < count; ++s) {
        const std::string label = scenario_label(3, s);
        c.guarded(label, "spectral_vs_expm", [&] {
            const std::size_t n = 200 * (s + 1) / count;
            const WeightedDomain d = suite_random_domain(n, suite_seed(o.seed, 3, s, domain_stream));
            const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 3, s, init_stream));
            EquationSpec eq;
            eq.drive = suite_drive(s, suite_seed(o.seed, 3, s, drive_stream));
            const TimeGrid grid{0.0, 1.0, 50};
            FlowOptions fo;
            fo.integrator = Integrator::spectral;
            const Trajectory traj = run_flow(d, eq, u0, grid, fo);
            const auto oracle = propagate_expm_grid(d, u0, eq.drive, grid.a, grid.b, grid.K);
            detail::Worst w;
            for (std::size_t k = 0; k <= grid.K; ++k) w.update((traj.states[k] - oracle[k]).cwiseAbs().maxCoeff(), k);
            c.add(label, make_check("spectral_vs_expm", "spectral-propagation", w.value, 1e-10, w.at,
                                    "n " + std::to_string(n)));
        });
    }
    return c.finish();
}

inline CriterionResult criterion_monotonicity(const SuiteOptions& o) {
    CriterionBuilder c(4, "linear frequency monotonicity", o);
    const std::size_t count = pick(o.size, 25, 100);
    for (std::size_t s = 0; s < count; ++s) {
        const std::string label = scenario_label(4, s);
        c.guarded(label, "monotonicity", [&] {
            Rng rng(suite_seed(o.seed, 4, s, drive_stream));
            const auto n = static_cast<std::size_t>(5 + std::floor(rng.uniform(0.0, 56.0)));
            const WeightedDomain d = suite_random_domain(n, suite_seed(o.seed, 4, s, domain_stream));
            const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 4, s, init_stream));
            EquationSpec eq;
            eq.drive = suite_drive(s, derive_seed(suite_seed(o.seed, 4, s, drive_stream), {1}));
            FlowOptions fo;
            fo.integrator = Integrator::spectral;
            const FrequencySeries series = frequency_series(d, run_flow(d, eq, u0, TimeGrid{0.0, 1.0, 100}, fo));
            c.add(label, check_monotonicity(series, 1e-10));
            c.keep(label, series);
        });
    }
    return c.finish();
}

inline CriterionResult criterion_log_derivative(const SuiteOptions& o) {
    CriterionBuilder c(5, "log-mass derivative identity", o);
    const std::size_t pairs = pick(o.size, 4, 10);
    for (std::size_t s = 0; s < pairs; ++s) {
        const std::size_t n = 10 + 3 * s;
        const WeightedDomain d = suite_random_domain(n, suite_seed(o.seed, 5, s, domain_stream));
        const TimeFunction drive = suite_drive(s, suite_seed(o.seed, 5, s, drive_stream));
        const TimeGrid coarse{0.0, 0.2, 200}, fine{0.0, 0.2, 400};

        const std::string lin_label = scenario_label(5, 2 * s);
        c.guarded(lin_label, "log_derivative", [&] {
            EquationSpec eq;
            eq.drive = drive;
            const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 5, 2 * s, init_stream));
            const FrequencySeries s1 = frequency_series(d, run_flow(d, eq, u0, coarse));
            const FrequencySeries s2 = frequency_series(d, run_flow(d, eq, u0, fine));
            c.add(lin_label, check_log_derivative(s1, 1.0, &s2, true));
            c.keep(lin_label, s1);
        });

        const std::string p_label = scenario_label(5, 2 * s + 1);
        c.guarded(p_label, "log_derivative", [&] {
            EquationSpec eq;
            eq.kind = EquationKind::p_heat;
            eq.p = s % 2 ? 3.0 : 1.5;
            eq.drive = drive;
            const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 5, 2 * s + 1, init_stream), 0.5, 1.5);
            FlowOptions fo;
            fo.integrator = Integrator::newton_richardson;
            const FrequencySeries s1 = frequency_series(d, run_flow(d, eq, u0, coarse, fo));
            const FrequencySeries s2 = frequency_series(d, run_flow(d, eq, u0, fine, fo));
            c.add(p_label, check_log_derivative(s1, 1.0, &s2, true));
            c.keep(p_label, s1);
        });
    }
    return c.finish();
}

inline CriterionResult criterion_p_monotonicity(const SuiteOptions& o) {
    CriterionBuilder c(8, "p-frequency monotonicity", o);
    const std::vector<std::size_t> sizes = o.size == SuiteSize::full ? std::vector<std::size_t>{20, 40, 70, 100}
                                                                     : std::vector<std::size_t>{20, 60};
    const double exponents[] = {1.5, 3.0, 4.0};
    std::size_t index = 0;
    for (double p : exponents) {
        for (std::size_t g = 0; g < sizes.size(); ++g, ++index) {
            const std::string label = scenario_label(8, index);
            c.guarded(label, "p_monotonicity", [&] {
                const std::size_t n = sizes[g];
                const WeightedDomain d = suite_random_domain(n, suite_seed(o.seed, 8, index, domain_stream));
                const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 8, index, init_stream));
                EquationSpec eq;
                eq.kind = EquationKind::p_heat;
                eq.p = p;
                // eta: zero, constant, increasing linear
                Rng rng(suite_seed(o.seed, 8, index, drive_stream));
                if (index % 3 == 1) eq.drive = TimeFunction::constant(rng.uniform(-1.0, 1.0));
                if (index % 3 == 2) eq.drive = TimeFunction::linear(rng.uniform(0.0, 1.0), rng.uniform(-0.5, 0.5));
                const TimeGrid coarse{0.0, 1.0, 100}, fine{0.0, 1.0, 200};
                const FrequencySeries s1 = frequency_series(d, run_flow(d, eq, u0, coarse));
                const FrequencySeries s2 = frequency_series(d, run_flow(d, eq, u0, fine));
                CheckResult m1 = check_monotonicity(s1, 10.0 * s1.dt());
                CheckResult m2 = check_monotonicity(s2, 10.0 * s2.dt());
                m1.name = "p_monotonicity";
                m2.name = "p_monotonicity_refined";
                c.add(label, m1);
                c.add(label, m2);
                c.add(label, check_monotonicity_refinement(s1, s2));
                c.keep(label, s1);
            });
        }
    }
    return c.finish();
}

inline CriterionResult criterion_p2_crosscheck(const SuiteOptions& o) {
    CriterionBuilder c(9, "p = 2 against the linear flow", o);
    const std::size_t count = pick(o.size, 4, 10);
    for (std::size_t s = 0; s < count; ++s) {
        const std::string label = scenario_label(9, s);
        c.guarded(label, "p2_crosscheck", [&] {
            const std::size_t n = 10 + 5 * s;
            const WeightedDomain d = suite_random_domain(n, suite_seed(o.seed, 9, s, domain_stream));
            const ScalarField u0 = suite_random_field(n, suite_seed(o.seed, 9, s, init_stream));
            const TimeFunction eta = suite_drive(s, suite_seed(o.seed, 9, s, drive_stream));
            const TimeGrid grid{0.0, 1.0, 100};
            EquationSpec pe;
            pe.kind = EquationKind::p_heat;
            pe.p = 2.0;
            pe.drive = eta;
            EquationSpec le;
            le.drive = eta;
            FlowOptions lin;
            lin.integrator = Integrator::implicit_euler;
            const Trajectory tp = run_flow(d, pe, u0, grid);
            const Trajectory tl = run_flow(d, le, u0, grid, lin);
            detail::Worst w;
            for (std::size_t k = 0; k <= grid.K; ++k) w.update((tp.states[k] - tl.states[k]).cwiseAbs().maxCoeff(), k);
            c.add(label, make_check("p2_crosscheck", "p2-reduction", w.value, 1e-6, w.at));
            c.keep(label, frequency_series(d, tp));
        });
    }
    return c.finish();
}

inline WeightedDomain two_vertex_domain() {
    DomainSpec ds;
    ds.shape = ExplicitSpec{{Edge{0, 1, 1.0, 1.0}}};
    ds.measure.kind = MeasureSpec::Kind::list;
    ds.measure.values = {1.0, 1.0};
    ds.label = "two-vertex";
    return build_domain(ds);
}

inline CriterionResult criterion_rigidity(const SuiteOptions& o) {
    CriterionBuilder c(10, "eigenfunction rigidity", o);
    struct LinearCase {
        DomainSpec domain;
        std::size_t mode;
        TimeFunction phi;
    };
    std::vector<LinearCase> cases;
    {
        DomainSpec cyc;
        cyc.shape = CycleSpec{8, 1.0, 1.0};
        cases.push_back({cyc, 1, TimeFunction::constant(0.0)});
        DomainSpec grid;
        grid.shape = PeriodicGridSpec{6, 6, 0.1, 0.1, 0.0, 0.0};
        cases.push_back({grid, 2, TimeFunction::constant(0.5)});
        DomainSpec rnd;
        RandomGraphSpec rg;
        rg.n = 30;
        rg.target_degree = 4.0;
        rg.seed = suite_seed(o.seed, 10, 2, domain_stream);
        rnd.shape = rg;
        rnd.measure.kind = MeasureSpec::Kind::f_uniform;
        rnd.measure.low = -0.5;
        rnd.measure.high = 0.5;
        rnd.measure.seed = derive_seed(rg.seed, {1});
        cases.push_back({rnd, 3, TimeFunction::sinusoid(0.5, 3.0, 0.2)});
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const std::string label = scenario_label(10, i);
        c.guarded(label, "rigidity", [&] {
            const WeightedDomain d = build_domain(cases[i].domain);
            const Spectrum spec = eigendecompose(d);
            EquationSpec eq;
            eq.drive = cases[i].phi;
            FlowOptions fo;
            fo.integrator = Integrator::spectral;
            fo.spectrum = &spec;
            const Trajectory traj = run_flow(d, eq, spec.mode(cases[i].mode), TimeGrid{0.0, 1.0, 100}, fo);
            const FrequencySeries s = frequency_series(d, traj);
            c.add(label, check_rigidity(d, s, traj, spec.eigenvalues[static_cast<Eigen::Index>(cases[i].mode)]));
            c.keep(label, s, true);
        });
    }
    const std::string label = scenario_label(10, cases.size());
    c.guarded(label, "rigidity_p", [&] {
        const WeightedDomain d = two_vertex_domain();
        PEigenOptions po;
        po.seed = suite_seed(o.seed, 10, cases.size(), init_stream);
        const PEigenpair pair = p_eigenpair(d, 3.0, po);
        EquationSpec eq;
        eq.kind = EquationKind::p_heat;
        eq.p = 3.0;
        const Trajectory traj = run_flow(d, eq, pair.w, TimeGrid{0.0, 1.0, 2000});
        const FrequencySeries s = frequency_series(d, traj);
        c.add(label, check_rigidity_p(d, s, traj, pair.lambda));
        c.keep(label, s);
    });
    return c.finish();
}

inline std::vector<TimeFunction> suite_psi_set(bool include_zero) {
    std::vector<TimeFunction> out;
    if (include_zero) out.push_back(TimeFunction::constant(0.0));
    out.push_back(TimeFunction::constant(0.1));
    out.push_back(TimeFunction::constant(0.5));
    out.push_back(TimeFunction::sinusoid(0.5, std::numbers::pi, 0.0));
    return out;
}

inline CheckResult envelope_check(const WeightedDomain& d, const Trajectory& traj) {
    detail::Worst w;
    const auto kind = traj.equation.is_p_kind() ? PerturbationKind::p : PerturbationKind::linear;
    for (std::size_t k = 0; k < traj.perturbations.size(); ++k) {
        const ScalarField env = perturbation_envelope(d, traj.states[k], kind, traj.equation.p);
        const ScalarField excess = traj.perturbations[k].cwiseAbs() - traj.psi_samples[k] * env;
        w.update(excess.maxCoeff() / std::max(1.0, env.maxCoeff()), k);
    }
    return make_check("perturbation_envelope", "perturbation-envelope", w.value, 1e-14, w.at);
}

inline CriterionResult criterion_perturbed_linear(const SuiteOptions& o) {
    CriterionBuilder c(11, "perturbed linear frequency inequality", o);
    const std::size_t graphs = pick(o.size, 2, 4);
    const auto psis = suite_psi_set(true);
    std::size_t index = 0;
    for (std::size_t g = 0; g < graphs; ++g) {
        const WeightedDomain d = suite_random_domain(20, suite_seed(o.seed, 11, g, domain_stream));
        const ScalarField u0 = suite_random_field(20, suite_seed(o.seed, 11, g, init_stream));
        const TimeGrid grid{0.0, 1.0, 200};
        for (const TimeFunction& psi : psis) {
            const std::string label = scenario_label(11, index++);
            c.guarded(label, "perturbed_linear", [&] {
                EquationSpec eq;
                eq.kind = EquationKind::linear_perturbed;
                eq.psi = psi;
                eq.perturbation_seed = suite_seed(o.seed, 11, index, perturbation_stream);
                const Trajectory traj = run_flow(d, eq, u0, grid);
                const FrequencySeries s = frequency_series(d, traj);
                c.add(label, check_perturbed_linear(s));
                c.add(label, envelope_check(d, traj));
                if (psi.is_identically_zero()) {
                    FlowOptions lin;
                    lin.integrator = Integrator::implicit_euler;
                    const Trajectory plain = run_flow(d, EquationSpec{}, u0, grid, lin);
                    double mismatched = 0.0;
                    for (std::size_t k = 0; k <= grid.K; ++k) {
                        for (Eigen::Index i = 0; i < u0.size(); ++i) {
                            if (std::bit_cast<std::uint64_t>(traj.states[k][i]) !=
                                std::bit_cast<std::uint64_t>(plain.states[k][i])) {
                                mismatched += 1.0;
                            }
                        }
                    }
                    c.add(label, make_check("psi_zero_reduction", "perturbed-reduction", mismatched, 0.0, -1));
                }
                c.keep(label, s);
            });
        }
    }
    return c.finish();
}

inline CriterionResult criterion_perturbed_p(const SuiteOptions& o) {
    CriterionBuilder c(12, "perturbed p-frequency inequalities", o);
    const std::size_t graphs = pick(o.size, 2, 4);
    const auto psis = suite_psi_set(false);
    std::size_t index = 0;
    for (std::size_t g = 0; g < graphs; ++g) {
        const WeightedDomain d = suite_random_domain(20, suite_seed(o.seed, 12, g, domain_stream));
        const ScalarField u0 = suite_random_field(20, suite_seed(o.seed, 12, g, init_stream));
        for (double p : {1.5, 3.0}) {
            for (const TimeFunction& psi : psis) {
                const std::string label = scenario_label(12, index++);
                c.guarded(label, "perturbed_p", [&] {
                    EquationSpec eq;
                    eq.kind = EquationKind::p_perturbed;
                    eq.p = p;
                    eq.psi = psi;
                    eq.perturbation_seed = suite_seed(o.seed, 12, index, perturbation_stream);
                    const Trajectory traj = run_flow(d, eq, u0, TimeGrid{0.0, 1.0, 200});
                    const FrequencySeries s = frequency_series(d, traj);
                    auto rows = check_perturbed_p(s);
                    rows.back().note = "alternative closed-form shortfall " + format_number(alternative_p_bound_shortfall(s));
                    c.add(label, rows);
                    c.add(label, envelope_check(d, traj));
                    c.keep(label, s);
                });
            }
        }
    }
    return c.finish();
}

// Criteria 6, 7 and 13 re-examine the series kept by the others.

inline const std::vector<SuiteRun>& runs_of(const std::vector<CriterionResult>& done, int id) {
    static const std::vector<SuiteRun> none;
    for (const auto& c : done) {
        if (c.id == id) return c.runs;
    }
    return none;
}

inline CriterionResult criterion_log_convexity(const SuiteOptions& o, const std::vector<CriterionResult>& done) {
    CriterionBuilder c(6, "log-convexity of the mass", o);
    for (int source : {4, 8}) {
        for (const SuiteRun& run : runs_of(done, source)) {
            const FrequencySeries& s = run.series;
            if (!s.equation.drive.nondecreasing_on(s.grid.a, s.grid.b)) continue;
            c.guarded(run.label, "log_convexity", [&] { c.add(run.label, check_log_convexity(s, 1e-8)); });
        }
    }
    return c.finish();
}

inline CriterionResult criterion_growth_bound(const SuiteOptions& o, const std::vector<CriterionResult>& done) {
    CriterionBuilder c(7, "terminal growth bound", o);
    for (int source : {4, 5, 8, 9, 10}) {
        for (const SuiteRun& run : runs_of(done, source)) {
            c.guarded(run.label, "growth_bound", [&] {
                c.add(run.label, check_growth_bound(run.series, false));
                if (run.eigen_data) c.add(run.label, check_growth_bound(run.series, true));
            });
        }
    }
    return c.finish();
}

inline CriterionResult criterion_backward_uniqueness(const SuiteOptions& o, const std::vector<CriterionResult>& done) {
    CriterionBuilder c(13, "backward uniqueness lower bound", o);
    for (const auto& crit : done) {
        for (const SuiteRun& run : crit.runs) {
            c.guarded(run.label, "backward_uniqueness", [&] {
                c.add(run.label, check_backward_uniqueness(run.series));
                detail::Worst w;
                for (std::size_t k = 0; k < run.series.size(); ++k) w.update(underflow_guard - run.series.I[k], k);
                c.add(run.label, make_check("underflow_guard", "backward-uniqueness", w.value, 0.0, w.at));
            });
        }
    }
    return c.finish();
}

inline void apply_overrides(std::vector<CriterionResult>& criteria, const std::map<std::string, double>& overrides) {
    for (const auto& [name, tol] : overrides) {
        bool found = false;
        for (auto& crit : criteria) {
            for (auto& row : crit.rows) {
                if (row.check.name != name) continue;
                found = true;
                row.check.tolerance = tol;
                row.check.pass = row.check.worst_violation <= tol;
            }
        }
        if (!found) throw Error(ErrorKind::validation, "tolerance override names no check: '" + name + "'");
    }
}

inline std::vector<SummaryRow> summarize(const std::vector<CriterionResult>& criteria) {
    std::vector<SummaryRow> out;
    for (const auto& crit : criteria) {
        std::map<std::string, SummaryRow> by_name;
        std::map<std::string, double> margin;
        for (const auto& row : crit.rows) {
            auto [it, fresh] = by_name.try_emplace(row.check.name);
            SummaryRow& r = it->second;
            const double m = row.check.worst_violation - row.check.tolerance;
            const bool nan = std::isnan(row.check.worst_violation);
            if (fresh || nan || (!std::isnan(margin[row.check.name]) && m > margin[row.check.name])) {
                r.criterion = crit.id;
                r.check = row.check.name;
                r.anchor = row.check.anchor;
                r.worst_violation = row.check.worst_violation;
                r.tolerance = row.check.tolerance;
                r.worst_scenario = row.scenario;
                r.note = row.check.note;
                margin[row.check.name] = nan ? std::numeric_limits<double>::quiet_NaN() : m;
            }
            ++r.scenarios;
            if (!row.check.pass) ++r.failures;
        }
        if (by_name.empty()) {
            SummaryRow r;
            r.criterion = crit.id;
            r.check = "no_scenarios";
            r.anchor = "execution";
            r.failures = 1;
            out.push_back(r);
        }
        for (auto& [name, row] : by_name) out.push_back(row);
    }
    return out;
}

} // namespace detail

/// criterion,check,anchor,scenarios,failures,worst_violation,tolerance,pass,worst_scenario
inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "criterion,check,anchor,scenarios,failures,worst_violation,tolerance,pass,worst_scenario\n";
    for (const auto& r : rows) {
        out += std::to_string(r.criterion) + ',' + r.check + ',' + r.anchor + ',' + std::to_string(r.scenarios) + ',' +
               std::to_string(r.failures) + ',' + format_number(r.worst_violation) + ',' + format_number(r.tolerance) +
               ',' + (r.pass() ? "pass" : "FAIL") + ',' + r.worst_scenario + '\n';
    }
    return out;
}

inline std::string summary_table(const SuiteResult& result) {
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::string out = pad("crit", 6) + pad("check", 32) + pad("anchor", 38) + pad("worst_violation", 24) +
                      pad("tolerance", 24) + "result\n";
    std::size_t failed = 0;
    for (const auto& r : result.summary) {
        if (!r.pass()) ++failed;
        out += pad(std::to_string(r.criterion), 6) + pad(r.check, 32) + pad(r.anchor, 38) +
               pad(format_number(r.worst_violation), 24) + pad(format_number(r.tolerance), 24) +
               (r.pass() ? "pass" : "FAIL  <-- " + std::to_string(r.failures) + "/" + std::to_string(r.scenarios) +
                                        " scenarios, worst " + r.worst_scenario) +
               "\n";
        if (!r.pass() && !r.note.empty()) out += "      " + r.note + "\n";
    }
    out += "\n";
    for (const auto& c : result.criteria) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "criterion %2d  %-52s %-4s  %.2f s\n", c.id, c.title.c_str(),
                      c.pass() ? "pass" : "FAIL", c.seconds);
        out += buf;
    }
    out += failed == 0 ? "ALL CHECKS PASSED\n" : std::to_string(failed) + " FAILED\n";
    return out;
}

/// Runs criteria 1-13. Independent criteria are spread over opts.jobs worker
/// threads; 6, 7 and 13 then aggregate over the kept series. Results do not
/// depend on the number of workers. Throws on I/O failure.
inline SuiteResult run_suite(const SuiteOptions& opts) {
    ensure_directory(opts.out_dir);
    if (opts.write_runs) ensure_directory(opts.out_dir / "runs");

    using Task = std::function<CriterionResult(const SuiteOptions&)>;
    const std::vector<Task> tasks{detail::criterion_identities,      detail::criterion_product_rule,
                                  detail::criterion_oracle,          detail::criterion_monotonicity,
                                  detail::criterion_log_derivative,  detail::criterion_p_monotonicity,
                                  detail::criterion_p2_crosscheck,   detail::criterion_rigidity,
                                  detail::criterion_perturbed_linear, detail::criterion_perturbed_p};
    std::vector<CriterionResult> done(tasks.size());
    std::vector<std::exception_ptr> failures(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                done[i] = tasks[i](opts);
            } catch (...) {
                failures[i] = std::current_exception();
            }
            done[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(opts.jobs, static_cast<unsigned>(tasks.size())));
    std::vector<std::thread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    auto timed = [&](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        CriterionResult r = fn(opts, done);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
    };
    CriterionResult c6 = timed(detail::criterion_log_convexity);
    CriterionResult c7 = timed(detail::criterion_growth_bound);
    CriterionResult c13 = timed(detail::criterion_backward_uniqueness);
    done.push_back(std::move(c6));
    done.push_back(std::move(c7));
    done.push_back(std::move(c13));
    std::sort(done.begin(), done.end(), [](const CriterionResult& a, const CriterionResult& b) { return a.id < b.id; });

    detail::apply_overrides(done, opts.overrides);
    SuiteResult result;
    result.criteria = std::move(done);
    result.summary = detail::summarize(result.criteria);
    return result;
}

/// Exit code 0 when every check passes, 1 on any failed check, 2 on an
/// execution error (I/O, bad override). Prints the summary table to out.
inline int verify_suite(const SuiteOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        const SuiteResult result = run_suite(opts);
        write_text_file(opts.out_dir / "summary.csv", summary_csv(result.summary));
        out << summary_table(result);
        return result.pass() ? 0 : 1;
    } catch (const std::exception& e) {
        err << "verify: " << e.what() << "\n";
        return 2;
    }
}

} // namespace parafreq

#include <bit>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "parafreq/flow.hpp"
#include "parafreq/oracles.hpp"

using namespace parafreq;

namespace {

WeightedDomain cycle4() {
    DomainSpec s;
    s.shape = CycleSpec{4, 1.0, 1.0};
    return build_domain(s);
}

WeightedDomain two_vertex() { return WeightedDomain({1.0, 1.0}, {Edge{0, 1, 1.0, 1.0}}); }

WeightedDomain random_domain(std::size_t n, std::uint64_t seed) {
    DomainSpec s;
    RandomGraphSpec rg;
    rg.n = n;
    rg.target_degree = 4.0;
    rg.seed = seed;
    rg.weight_low = 0.5;
    rg.weight_high = 1.5;
    rg.conductance_low = 0.5;
    rg.conductance_high = 2.0;
    s.shape = rg;
    s.measure.kind = MeasureSpec::Kind::f_uniform;
    s.measure.low = -0.5;
    s.measure.high = 0.5;
    s.measure.seed = seed + 3;
    return build_domain(s);
}

ScalarField random_field(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    ScalarField u(n);
    for (auto& x : u) x = dist(gen);
    return u;
}

ScalarField vec(std::initializer_list<double> xs) {
    ScalarField v(xs.size());
    std::size_t i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

double max_abs(const ScalarField& v) { return v.cwiseAbs().maxCoeff(); }

EquationSpec p_heat(double p, TimeFunction eta = TimeFunction::constant(0.0)) {
    EquationSpec eq;
    eq.kind = EquationKind::p_heat;
    eq.p = p;
    eq.drive = eta;
    return eq;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorKind::io;
}

} // namespace

TEST(Spectral, EigenmodeDecaysExactly) {
    const WeightedDomain d = cycle4();
    const ScalarField u0 = vec({1, 0, -1, 0});
    const Trajectory traj = propagate_spectral(d, eigendecompose(d), u0, TimeFunction::constant(0.0), {0.0, 1.0, 100});
    ASSERT_EQ(traj.states.size(), 101u);
    for (std::size_t k = 0; k <= 100; ++k) {
        const double t = traj.times[k];
        EXPECT_LE(max_abs(traj.states[k] - std::exp(-2.0 * t) * u0), 1e-14);
        EXPECT_NEAR(mu_inner(d, traj.states[k], traj.states[k]), 2.0 * std::exp(-4.0 * t), 1e-14);
    }
}

TEST(Spectral, ConstantIsStationary) {
    const WeightedDomain d = random_domain(20, 1);
    const ScalarField u0 = ScalarField::Constant(20, 0.7);
    const Trajectory traj = propagate_spectral(d, eigendecompose(d), u0, TimeFunction::constant(0.0), {0.0, 2.0, 20});
    for (const auto& s : traj.states) EXPECT_LE(max_abs(s - u0), 1e-13);
}

TEST(Spectral, MixedModeMatchesMatrixExponential) {
    const WeightedDomain d = cycle4();
    const ScalarField u0 = vec({2, -1, 0, -1});
    const Trajectory traj = propagate_spectral(d, eigendecompose(d), u0, TimeFunction::constant(0.0), {0.0, 1.0, 10});
    for (std::size_t k = 0; k <= 10; ++k) {
        const double t = traj.times[k];
        // (1, 0, -1, 0) carries lambda = 2 and (1, -1, 1, -1) carries lambda = 4
        const ScalarField closed = std::exp(-2.0 * t) * vec({1, 0, -1, 0}) + std::exp(-4.0 * t) * vec({1, -1, 1, -1});
        EXPECT_LE(max_abs(traj.states[k] - closed), 1e-13);
        EXPECT_LE(max_abs(traj.states[k] - propagate_expm(d, u0, TimeFunction::constant(0.0), 0.0, t)), 1e-10);
    }
}

TEST(Spectral, DrivenFlowMatchesMatrixExponential) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const WeightedDomain d = random_domain(40 + 40 * seed, seed);
        const ScalarField u0 = random_field(d.n(), seed + 9);
        const TimeFunction phi = TimeFunction::sinusoid(0.8, 3.0, 0.4);
        EquationSpec eq;
        eq.drive = phi;
        const Trajectory traj = run_flow(d, eq, u0, {0.0, 1.0, 25});
        ASSERT_EQ(traj.integrator, Integrator::spectral);
        const auto oracle = propagate_expm_grid(d, u0, phi, 0.0, 1.0, 25);
        for (std::size_t k = 0; k <= 25; ++k) EXPECT_LE(max_abs(traj.states[k] - oracle[k]), 1e-10);
    }
}

TEST(LinearStep, Examples) {
    const WeightedDomain d = cycle4();
    const ScalarField c = ScalarField::Constant(4, 3.0);
    EXPECT_LE(max_abs(step_linear_implicit(d, c, 0.1, 0.0) - c), 1e-15);
    const ScalarField u = vec({1, 0, -1, 0});
    EXPECT_LE(max_abs(step_linear_implicit(d, u, 0.1, 0.0) - u / 1.2), 1e-15);
}

TEST(LinearStep, RejectsLargeDrive) {
    EXPECT_EQ(kind_of([] { step_linear_implicit(cycle4(), vec({1, 0, 0, 0}), 0.5, 2.0); }), ErrorKind::step_size);
}

TEST(LinearStep, LocalErrorIsSecondOrder) {
    const WeightedDomain d = random_domain(30, 4);
    const ScalarField u = random_field(30, 5);
    auto local = [&](double dt) {
        const ScalarField explicit_step = u + dt * (apply_operator(d, u) + 0.3 * u);
        return max_abs(step_linear_implicit(d, u, dt, 0.3) - explicit_step);
    };
    const double ratio = local(1e-3) / local(5e-4);
    EXPECT_GT(ratio, 3.8);
    EXPECT_LT(ratio, 4.2);
}

TEST(PStep, ConstantIsFixed) {
    const WeightedDomain d = random_domain(12, 6);
    const ScalarField c = ScalarField::Constant(12, -2.0);
    for (double p : {1.5, 3.0}) {
        const PStepResult r = step_p_implicit(d, c, 0.01, p, 0.0, {});
        EXPECT_LE(max_abs(r.v - c), 1e-12);
    }
}

TEST(PStep, TwoVertexCubicReduction) {
    // v = s (1, -1), W(x) = |x| x: (s^2 - 1) / (2 dt) = -4 s^2, so s = (1 + 8 dt)^{-1/2}.
    for (double dt : {0.01, 0.05}) {
        const PStepResult r = step_p_implicit(two_vertex(), vec({1, -1}), dt, 3.0, 0.0, {});
        const double s = 1.0 / std::sqrt(1.0 + 8.0 * dt);
        EXPECT_NEAR(r.v[0], s, 1e-6);
        EXPECT_NEAR(r.v[1], -s, 1e-6);
        EXPECT_LE(r.residual, 1e-12);
    }
}

TEST(PStep, QuadraticCaseIsBackwardEuler) {
    const WeightedDomain d = random_domain(25, 7);
    const ScalarField u = random_field(25, 8);
    const PStepResult r = step_p_implicit(d, u, 0.02, 2.0, 0.4, {});
    EXPECT_LE(max_abs(r.v - step_linear_implicit(d, u, 0.02, 0.4)), 1e-12);
}

TEST(PStep, ConvergesOnSignChangingData) {
    for (double p : {1.5, 3.0, 4.0}) {
        const WeightedDomain d = random_domain(40, 9);
        const ScalarField u = random_field(40, 10);
        const PStepResult r = step_p_implicit(d, u, 0.01, p, 0.0, {});
        EXPECT_LE(r.residual, 1e-12) << "p " << p;
        EXPECT_TRUE(r.v.allFinite());
    }
}

TEST(Perturbation, ZeroScaleGivesZeroField) {
    const WeightedDomain d = cycle4();
    EXPECT_EQ(max_abs(make_perturbation(d, vec({1, 2, 3, 4}), 0.0, 11, PerturbationKind::linear)), 0.0);
}

TEST(Perturbation, ConstantFieldEnvelopeIsMagnitude) {
    const WeightedDomain d = cycle4();
    const ScalarField u = ScalarField::Constant(4, -1.5);
    const ScalarField rho = make_perturbation(d, u, 0.3, 11, PerturbationKind::linear);
    for (int i = 0; i < 4; ++i) EXPECT_LE(std::abs(rho[i]), 0.3 * 1.5);
    EXPECT_EQ(perturbation_envelope(d, u, PerturbationKind::linear), ScalarField::Constant(4, 1.5));
}

TEST(Perturbation, SeededAndDeterministic) {
    const WeightedDomain d = cycle4();
    const ScalarField u = vec({1, 0, -1, 0.5});
    const ScalarField a = make_perturbation(d, u, 0.2, 11, PerturbationKind::linear);
    const ScalarField b = make_perturbation(d, u, 0.2, 11, PerturbationKind::linear);
    const ScalarField c = make_perturbation(d, u, 0.2, 12, PerturbationKind::linear);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

// Property: |rho_i| <= psi * envelope_i for both kinds, with the envelope recomputed here.
TEST(Perturbation, RespectsEnvelope) {
    const WeightedDomain d = random_domain(30, 12);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ScalarField u = random_field(30, 100 + seed);
        for (double p : {1.5, 2.0, 3.0}) {
            const ScalarField e = vertex_energy_density(d, u, p);
            const ScalarField rho = make_perturbation(d, u, 0.5, seed, PerturbationKind::p, p);
            for (int i = 0; i < 30; ++i) {
                const double a = std::abs(u[i]);
                const double env = std::pow(a, p - 1.0) + std::pow(a, p / 2.0 - 1.0) * std::sqrt(e[i]);
                EXPECT_LE(std::abs(rho[i]), 0.5 * env * (1.0 + 1e-14));
            }
        }
    }
}

TEST(RunFlow, LinearEigenmodeUsesSpectralPath) {
    const WeightedDomain d = cycle4();
    const ScalarField u0 = vec({1, 0, -1, 0});
    const Trajectory traj = run_flow(d, EquationSpec{}, u0, {0.0, 1.0, 100});
    EXPECT_EQ(traj.integrator, Integrator::spectral);
    EXPECT_LE(max_abs(traj.states.back() - std::exp(-2.0) * u0), 1e-14);
}

TEST(RunFlow, QuadraticPHeatMatchesLinear) {
    const WeightedDomain d = random_domain(30, 13);
    const ScalarField u0 = random_field(30, 14);
    const TimeFunction eta = TimeFunction::linear(0.5, -0.2);
    EquationSpec lin;
    lin.drive = eta;
    FlowOptions opts;
    opts.integrator = Integrator::implicit_euler;
    const Trajectory a = run_flow(d, p_heat(2.0, eta), u0, {0.0, 1.0, 100});
    const Trajectory b = run_flow(d, lin, u0, {0.0, 1.0, 100}, opts);
    for (std::size_t k = 0; k <= 100; ++k) EXPECT_LE(max_abs(a.states[k] - b.states[k]), 1e-6);
}

TEST(RunFlow, ZeroPerturbationIsBitwiseUnperturbed) {
    const WeightedDomain d = random_domain(20, 15);
    const ScalarField u0 = random_field(20, 16);
    EquationSpec pert;
    pert.kind = EquationKind::linear_perturbed;
    pert.psi = TimeFunction::constant(0.0);
    FlowOptions opts;
    opts.integrator = Integrator::implicit_euler;
    const Trajectory a = run_flow(d, pert, u0, {0.0, 1.0, 50});
    const Trajectory b = run_flow(d, EquationSpec{}, u0, {0.0, 1.0, 50}, opts);
    for (std::size_t k = 0; k <= 50; ++k) {
        for (int i = 0; i < 20; ++i) {
            EXPECT_EQ(std::bit_cast<std::uint64_t>(a.states[k][i]), std::bit_cast<std::uint64_t>(b.states[k][i]));
        }
    }
}

TEST(RunFlow, Errors) {
    const WeightedDomain d = cycle4();
    EXPECT_EQ(kind_of([&] { run_flow(d, EquationSpec{}, ScalarField::Zero(4), {0.0, 1.0, 10}); }), ErrorKind::precondition);
    EquationSpec eq;
    eq.drive = TimeFunction::constant(50.0);
    FlowOptions opts;
    opts.integrator = Integrator::implicit_euler;
    try {
        run_flow(d, eq, vec({1, 0, 0, 0}), {0.0, 1.0, 10}, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::step_size);
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    }
    EquationSpec bad;
    bad.kind = EquationKind::linear_perturbed;
    bad.psi = TimeFunction::constant(-0.1);
    EXPECT_EQ(kind_of([&] { run_flow(d, bad, vec({1, 0, 0, 0}), {0.0, 1.0, 10}); }), ErrorKind::validation);
}

// Property: linear flows are homogeneous of degree one.
TEST(RunFlow, LinearScaling) {
    const WeightedDomain d = random_domain(25, 17);
    const ScalarField u0 = random_field(25, 18);
    EquationSpec eq;
    eq.drive = TimeFunction::constant(0.3);
    for (Integrator integ : {Integrator::spectral, Integrator::implicit_euler}) {
        FlowOptions opts;
        opts.integrator = integ;
        const Trajectory a = run_flow(d, eq, u0, {0.0, 1.0, 40}, opts);
        const Trajectory b = run_flow(d, eq, 3.5 * u0, {0.0, 1.0, 40}, opts);
        for (std::size_t k = 0; k <= 40; ++k) {
            EXPECT_LE(max_abs(b.states[k] - 3.5 * a.states[k]), 1e-12 * max_abs(b.states[k]) + 1e-300);
        }
    }
}

// Property: p-heat trajectories scale and flip with the initial data.
TEST(RunFlow, PHeatScalingAndOddSymmetry) {
    const WeightedDomain d = random_domain(20, 19);
    const ScalarField u0 = random_field(20, 20);
    for (double p : {1.5, 3.0}) {
        const Trajectory a = run_flow(d, p_heat(p), u0, {0.0, 0.5, 50});
        const Trajectory b = run_flow(d, p_heat(p), 2.0 * u0, {0.0, 0.5, 50});
        const Trajectory c = run_flow(d, p_heat(p), -u0, {0.0, 0.5, 50});
        for (std::size_t k = 0; k <= 50; ++k) {
            EXPECT_LE(max_abs(b.states[k] - 2.0 * a.states[k]), 1e-8 * max_abs(a.states[k])) << "p " << p;
            EXPECT_LE(max_abs(c.states[k] + a.states[k]), 1e-12 * max_abs(a.states[k])) << "p " << p;
        }
    }
}

// Property: implicit Euler converges to the spectral solution at first order.
TEST(RunFlow, ImplicitEulerIsFirstOrder) {
    const WeightedDomain d = random_domain(20, 21);
    const ScalarField u0 = random_field(20, 22);
    EquationSpec eq;
    eq.drive = TimeFunction::constant(0.2);
    const ScalarField exact = run_flow(d, eq, u0, {0.0, 1.0, 1}).states.back();
    FlowOptions opts;
    opts.integrator = Integrator::implicit_euler;
    std::vector<double> errors;
    for (std::size_t K : {50, 100, 200, 400}) errors.push_back(max_abs(run_flow(d, eq, u0, {0.0, 1.0, K}, opts).states.back() - exact));
    for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
        const double ratio = errors[i] / errors[i + 1];
        EXPECT_GE(ratio, 1.8);
        EXPECT_LE(ratio, 2.2);
    }
}

TEST(RunFlow, RichardsonIsSecondOrder) {
    const WeightedDomain d = random_domain(15, 23);
    const ScalarField u0 = random_field(15, 24, 0.5, 1.5);
    FlowOptions rich;
    rich.integrator = Integrator::newton_richardson;
    const ScalarField reference = run_flow(d, p_heat(3.0), u0, {0.0, 0.2, 1600}, rich).states.back();
    const double e1 = max_abs(run_flow(d, p_heat(3.0), u0, {0.0, 0.2, 50}, rich).states.back() - reference);
    const double e2 = max_abs(run_flow(d, p_heat(3.0), u0, {0.0, 0.2, 100}, rich).states.back() - reference);
    EXPECT_GT(e1 / e2, 3.0);
}

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "parafreq/identities.hpp"
#include "parafreq/oracles.hpp"
#include "parafreq/p_eigen.hpp"

using namespace parafreq;

namespace {

WeightedDomain cycle(std::size_t n) {
    DomainSpec s;
    s.shape = CycleSpec{n, 1.0, 1.0};
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
    s.measure.seed = seed + 17;
    return build_domain(s);
}

ScalarField random_field(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
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

} // namespace

TEST(Operator, TwoVertexMatrix) {
    const Eigen::MatrixXd l = Eigen::MatrixXd(assemble_operator(two_vertex()).matrix);
    Eigen::Matrix2d expected;
    expected << -1, 1, 1, -1;
    EXPECT_EQ((l - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Operator, CycleStencil) {
    const Eigen::MatrixXd l = Eigen::MatrixXd(assemble_operator(cycle(4)).matrix);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const int gap = std::abs(i - j);
            const double expected = i == j ? -2.0 : (gap == 1 || gap == 3) ? 1.0 : 0.0;
            EXPECT_EQ(l(i, j), expected) << i << "," << j;
        }
    }
}

TEST(Operator, RowSumsVanish) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Eigen::MatrixXd l = Eigen::MatrixXd(assemble_operator(random_domain(30, seed)).matrix);
        const Eigen::VectorXd sums = l.rowwise().sum();
        EXPECT_LE(sums.cwiseAbs().maxCoeff(), 1e-13 * l.cwiseAbs().maxCoeff());
    }
}

TEST(Operator, ApplyExamples) {
    const ScalarField lu = apply_operator(cycle(4), vec({1, 0, -1, 0}));
    EXPECT_EQ(lu, vec({-2, 0, 2, 0}));
    EXPECT_EQ(apply_operator(two_vertex(), vec({1, -1})), vec({-2, 2}));
    const WeightedDomain d = random_domain(20, 1);
    EXPECT_EQ(apply_operator(d, ScalarField::Constant(20, 3.0)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Operator, ApplyMatchesAssembledMatrix) {
    const WeightedDomain d = random_domain(40, 2);
    const ScalarField u = random_field(40, 3);
    const ScalarField a = apply_operator(d, u);
    const ScalarField b = assemble_operator(d).matrix * u;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-13 * std::max(1.0, a.cwiseAbs().maxCoeff()));
}

TEST(POperator, TwoVertexCubic) {
    EXPECT_EQ(apply_p_operator(two_vertex(), vec({1, -1}), 3.0, 0.0), vec({-4, 4}));
}

TEST(POperator, ReducesToLinearBitwise) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const WeightedDomain d = random_domain(25, seed);
        const ScalarField u = random_field(25, seed + 50);
        const ScalarField a = apply_p_operator(d, u, 2.0, 0.0);
        const ScalarField b = apply_operator(d, u);
        for (int i = 0; i < 25; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
    }
}

TEST(POperator, ConstantGivesZeroAndSingularLimitIsFinite) {
    const WeightedDomain d = random_domain(15, 4);
    for (double p : {1.2, 1.5, 3.0}) {
        EXPECT_EQ(apply_p_operator(d, ScalarField::Constant(15, -1.0), p, 0.0).cwiseAbs().maxCoeff(), 0.0);
    }
    ScalarField u = random_field(15, 8);
    u[3] = u[4] = u[5] = 0.25;
    EXPECT_TRUE(apply_p_operator(d, u, 1.3, 0.0).allFinite());
    EXPECT_TRUE(apply_p_operator(d, u, 1.3, 1e-8).allFinite());
}

TEST(POperator, RejectsExponentAtMostOne) {
    try {
        apply_p_operator(two_vertex(), vec({1, 0}), 1.0, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
}

TEST(Forms, Examples) {
    const ScalarField u = vec({1, 0, -1, 0});
    EXPECT_DOUBLE_EQ(dirichlet_form(cycle(4), u, u), 4.0);
    EXPECT_DOUBLE_EQ(dirichlet_form(cycle(4), u, ScalarField::Constant(4, 7.0)), 0.0);
    EXPECT_DOUBLE_EQ(p_energy(two_vertex(), vec({1, -1}), 3.0), 8.0);
    EXPECT_DOUBLE_EQ(p_energy(cycle(4), u, 2.0), 4.0);
    EXPECT_DOUBLE_EQ(p_energy(cycle(4), ScalarField::Constant(4, 2.0), 3.0), 0.0);
}

TEST(Forms, PEnergyAtTwoMatchesDirichletForm) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const WeightedDomain d = random_domain(30, seed);
        const ScalarField u = random_field(30, seed + 7);
        const double a = p_energy(d, u, 2.0), b = dirichlet_form(d, u, u);
        EXPECT_LE(std::abs(a - b), 1e-13 * b);
    }
}

TEST(Spectrum, CycleMatchesClosedForm) {
    for (std::size_t n = 3; n <= 12; ++n) {
        std::vector<double> expected;
        for (std::size_t k = 0; k < n; ++k) expected.push_back(2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * k / n));
        std::sort(expected.begin(), expected.end());
        const Spectrum s = eigendecompose(cycle(n));
        ASSERT_EQ(s.size(), n);
        for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(s.eigenvalues[k], expected[k], 1e-12) << "n " << n;
    }
    const Spectrum c4 = eigendecompose(cycle(4));
    EXPECT_NEAR(c4.eigenvalues[1], 2.0, 1e-12);
    EXPECT_NEAR(c4.eigenvalues[2], 2.0, 1e-12);
    EXPECT_NEAR(c4.eigenvalues[3], 4.0, 1e-12);
    const Spectrum two = eigendecompose(two_vertex());
    EXPECT_NEAR(two.eigenvalues[0], 0.0, 1e-14);
    EXPECT_NEAR(two.eigenvalues[1], 2.0, 1e-14);
}

TEST(Spectrum, EigenpairsOnRandomGraphs) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const WeightedDomain d = random_domain(60, seed + 30);
        const Spectrum s = eigendecompose(d);
        EXPECT_LE(s.residual_norm, 1e-9);
        EXPECT_NEAR(s.eigenvalues[0], 0.0, 1e-10);
        EXPECT_GE(s.eigenvalues.minCoeff(), -1e-10);
        const ScalarField v0 = s.mode(0);
        EXPECT_LE(v0.maxCoeff() - v0.minCoeff(), 1e-10 * v0.cwiseAbs().maxCoeff());
        // mu-orthonormal columns, checked with an explicit weighted Gram matrix
        Eigen::MatrixXd gram = s.eigenvectors.transpose() *
                               Eigen::VectorXd::Map(d.measure().data(), 60).asDiagonal() * s.eigenvectors;
        EXPECT_LE((gram - Eigen::MatrixXd::Identity(60, 60)).cwiseAbs().maxCoeff(), 1e-10);
        for (std::size_t k = 0; k < 60; ++k) {
            const ScalarField r = apply_operator(d, s.mode(k)) + s.eigenvalues[k] * s.mode(k);
            EXPECT_LE(mu_norm(d, r), 1e-9);
        }
    }
}

TEST(Spectrum, CapacityError) {
    try {
        eigendecompose(cycle(10), std::nullopt, 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capacity);
    }
}

TEST(PEigen, TwoVertexCubicClosedForm) {
    // w = (a, -a): Delta_3 w = (-4a^2, 4a^2) and lambda |w| w = lambda (a^2, -a^2), so lambda = 4.
    const PEigenpair pair = p_eigenpair(two_vertex(), 3.0);
    EXPECT_NEAR(pair.lambda, 4.0, 1e-8);
    EXPECT_NEAR(pair.w[0], -pair.w[1], 1e-8);
    EXPECT_NEAR(std::pow(std::abs(pair.w[0]), 3) + std::pow(std::abs(pair.w[1]), 3), 1.0, 1e-12);
    const ScalarField r = apply_p_operator(two_vertex(), pair.w, 3.0, 0.0) +
                          pair.lambda * pair.w.cwiseAbs().cwiseProduct(pair.w);
    EXPECT_LE(mu_norm(two_vertex(), r), 1e-8);
}

TEST(PEigen, QuadraticCaseMatchesSpectrum) {
    const PEigenpair pair = p_eigenpair(cycle(4), 2.0);
    EXPECT_NEAR(pair.lambda, 2.0, 1e-6);
}

TEST(PEigen, ConstantGuessIsDeflated) {
    PEigenOptions opts;
    opts.initial_guess = ScalarField::Constant(4, 1.0);
    const PEigenpair pair = p_eigenpair(cycle(4), 3.0, opts);
    EXPECT_GT(pair.lambda, 0.0);
    EXPECT_GT(pair.w.maxCoeff() - pair.w.minCoeff(), 0.1);
    EXPECT_LE(pair.residual, 1e-8);
}

TEST(Identities, HoldOnRandomGraphs) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const WeightedDomain d = random_domain(5 + 19 * seed, seed + 200);
        for (const CheckResult& r : check_identities(d, 20, seed, 1e-12)) EXPECT_TRUE(r.pass) << r.name << " " << r.worst_violation;
    }
}

TEST(Identities, ExactForConstants) {
    const WeightedDomain d = random_domain(20, 5);
    const ScalarField c = ScalarField::Constant(20, 1.5);
    EXPECT_EQ(apply_operator(d, c).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(dirichlet_form(d, c, c), 0.0);
    EXPECT_EQ(mu_inner(d, apply_operator(d, c), c), 0.0);
}

TEST(ProductRule, ResidualDecreasesOnRefinement) {
    ProductRuleSetup setup;
    setup.u = {1.0, 0.0, 0.0};
    setup.v = {0.0, 1.0, 0.5 * std::numbers::pi};
    std::vector<double> residuals;
    const CheckResult r = check_product_rule_trend(setup, {8, 16, 32}, &residuals);
    EXPECT_TRUE(r.pass) << r.note;
    ASSERT_EQ(residuals.size(), 3u);
    // second-order stencil: roughly a factor 4 per halving
    EXPECT_GT(residuals[0] / residuals[1], 3.0);
    EXPECT_GT(residuals[1] / residuals[2], 3.0);
}

TEST(ProductRule, AnisotropicTensorAndWeightedMeasure) {
    ProductRuleSetup setup;
    setup.grid.txx = 1.5;
    setup.grid.tyy = 0.7;
    setup.grid.ax = 0.3;
    setup.grid.ay = -0.2;
    setup.f_amplitude = 0.4;
    setup.u = {1.0, 2.0, 0.3};
    setup.v = {1.0, 1.0, 1.1};
    EXPECT_TRUE(check_product_rule_trend(setup, {8, 16, 32, 64}).pass);
}

TEST(Oracle, MatrixExponentialOnTwoVertices) {
    // exp(tL) for L = [[-1, 1], [1, -1]] has entries (1 +- e^{-2t}) / 2.
    for (double t : {0.0, 0.1, 1.0, 7.5}) {
        const Eigen::MatrixXd e = expm_taylor(t * Eigen::MatrixXd(assemble_operator(two_vertex()).matrix));
        const double a = 0.5 * (1.0 + std::exp(-2.0 * t)), b = 0.5 * (1.0 - std::exp(-2.0 * t));
        EXPECT_NEAR(e(0, 0), a, 1e-14);
        EXPECT_NEAR(e(0, 1), b, 1e-14);
        EXPECT_NEAR(e(1, 0), b, 1e-14);
        EXPECT_NEAR(e(1, 1), a, 1e-14);
    }
}

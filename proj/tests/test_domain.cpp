#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "parafreq/domain.hpp"

using namespace parafreq;

namespace {

WeightedDomain cycle4() {
    DomainSpec s;
    s.shape = CycleSpec{4, 1.0, 1.0};
    return build_domain(s);
}

WeightedDomain two_vertex() {
    return WeightedDomain({1.0, 1.0}, {Edge{0, 1, 1.0, 1.0}});
}

WeightedDomain random_domain(std::size_t n, std::uint64_t seed) {
    DomainSpec s;
    RandomGraphSpec rg;
    rg.n = n;
    rg.target_degree = 8.0;
    rg.seed = seed;
    rg.weight_low = 0.5;
    rg.weight_high = 2.0;
    rg.conductance_low = 0.25;
    rg.conductance_high = 3.0;
    s.shape = rg;
    s.measure.kind = MeasureSpec::Kind::f_uniform;
    s.measure.low = -1.0;
    s.measure.high = 1.0;
    s.measure.seed = seed + 1;
    return build_domain(s);
}

// Brute force over the edge list: sum_e w c |u_j - u_i|^p.
double edge_sum(const WeightedDomain& d, const ScalarField& u, double p) {
    double s = 0.0;
    for (const Edge& e : d.edges()) s += e.weight * e.conductance * std::pow(std::abs(u[e.j] - u[e.i]), p);
    return s;
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

TEST(Domain, CycleHasCanonicalEdges) {
    const WeightedDomain d = cycle4();
    ASSERT_EQ(d.n(), 4u);
    ASSERT_EQ(d.edges().size(), 4u);
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const Edge& e : d.edges()) {
        pairs.insert({e.i, e.j});
        EXPECT_EQ(e.weight, 1.0);
        EXPECT_EQ(e.conductance, 1.0);
    }
    const std::set<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
    EXPECT_EQ(pairs, expected);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.measure(i), 1.0);
}

TEST(Domain, TwoVertexExplicit) {
    DomainSpec s;
    s.shape = ExplicitSpec{{Edge{1, 0, 1.0, 1.0}}};
    s.measure.kind = MeasureSpec::Kind::list;
    s.measure.values = {1.0, 1.0};
    const WeightedDomain d = build_domain(s);
    EXPECT_EQ(d.n(), 2u);
    ASSERT_EQ(d.edges().size(), 1u);
    EXPECT_EQ(d.edges()[0].i, 0u);
    EXPECT_EQ(d.edges()[0].j, 1u);
}

TEST(Domain, PeriodicGridShapeAndMeasure) {
    DomainSpec s;
    s.shape = PeriodicGridSpec{5, 4, 1.0, 2.0, 0.0, 0.0};
    const WeightedDomain d = build_domain(s);
    EXPECT_EQ(d.n(), 20u);
    EXPECT_EQ(d.edges().size(), 40u);
    EXPECT_NEAR(d.total_measure(), 1.0, 1e-14);
}

TEST(Domain, RandomGraphIsReproducible) {
    DomainSpec s;
    RandomGraphSpec rg;
    rg.n = 50;
    rg.edge_probability = 0.1;
    rg.seed = 7;
    s.shape = rg;
    const std::string first = to_json(build_domain(s)).dump();
    const std::string second = to_json(build_domain(s)).dump();
    EXPECT_EQ(first, second);
    std::get<RandomGraphSpec>(s.shape).seed = 8;
    EXPECT_NE(first, to_json(build_domain(s)).dump());
}

TEST(Domain, JsonRoundTrip) {
    const WeightedDomain d = random_domain(30, 3);
    const WeightedDomain back = domain_from_json(nlohmann::json::parse(to_json(d).dump()));
    EXPECT_TRUE(back == d);
}

TEST(Domain, InvalidSpecsAreRejected) {
    EXPECT_EQ(kind_of([] {
                  DomainSpec s;
                  s.shape = CycleSpec{2, 1.0, 1.0};
                  build_domain(s);
              }),
              ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] {
                  DomainSpec s;
                  s.shape = PeriodicGridSpec{2, 5, 1.0, 1.0, 0.0, 0.0};
                  build_domain(s);
              }),
              ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] { WeightedDomain({1.0, 0.0}, {Edge{0, 1, 1.0, 1.0}}); }), ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] { WeightedDomain({1.0, 1.0}, {Edge{0, 1, -1.0, 1.0}}); }), ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] {
                  DomainSpec s;
                  RandomGraphSpec rg;
                  rg.n = 40;
                  rg.edge_probability = 1e-6;
                  rg.max_retries = 3;
                  s.shape = rg;
                  build_domain(s);
              }),
              ErrorKind::construction_failure);
}

TEST(EnergyDensity, CycleAlternatingField) {
    const WeightedDomain d = cycle4();
    ScalarField u(4);
    u << 1, 0, -1, 0;
    const ScalarField e = vertex_energy_density(d, u, 2.0);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(e[i], 1.0);
    double total = 0.0;
    for (int i = 0; i < 4; ++i) total += d.measure(i) * e[i];
    EXPECT_DOUBLE_EQ(total, 4.0);
    EXPECT_DOUBLE_EQ(total, edge_sum(d, u, 2.0));
}

TEST(EnergyDensity, TwoVertexCubic) {
    ScalarField u(2);
    u << 1, -1;
    const ScalarField e = vertex_energy_density(two_vertex(), u, 3.0);
    EXPECT_DOUBLE_EQ(e[0], 4.0);
    EXPECT_DOUBLE_EQ(e[1], 4.0);
}

TEST(EnergyDensity, ConstantFieldHasNoEnergy) {
    const WeightedDomain d = random_domain(25, 11);
    for (double p : {1.0, 1.5, 2.0, 3.0}) {
        const ScalarField e = vertex_energy_density(d, ScalarField::Constant(25, 2.5), p);
        EXPECT_EQ(e.cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(EnergyDensity, LengthMismatchIsShapeError) {
    EXPECT_EQ(kind_of([] { vertex_energy_density(cycle4(), ScalarField::Zero(3), 2.0); }), ErrorKind::shape);
}

// Property: sum_i mu_i e_i equals the edge sum for any field and exponent.
TEST(EnergyDensity, MeasureWeightedTotalMatchesEdgeSum) {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const WeightedDomain d = random_domain(10 + 4 * seed, 100 + seed);
        ScalarField u(d.n());
        for (auto& x : u) x = dist(gen);
        for (double p : {1.0, 1.5, 2.0, 3.0, 4.5}) {
            const ScalarField e = vertex_energy_density(d, u, p);
            double total = 0.0;
            for (std::size_t i = 0; i < d.n(); ++i) total += d.measure(i) * e[i];
            const double oracle = edge_sum(d, u, p);
            EXPECT_LE(std::abs(total - oracle), 1e-13 * oracle) << "seed " << seed << " p " << p;
        }
    }
}

// Property: edge storage order does not change any result bit.
TEST(Domain, EdgeOrderDoesNotMatter) {
    const WeightedDomain d = random_domain(40, 5);
    std::vector<Edge> shuffled(d.edges().begin(), d.edges().end());
    std::mt19937_64 gen(9);
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    for (Edge& e : shuffled) {
        if (gen() % 2) std::swap(e.i, e.j);
    }
    const WeightedDomain other(d.measure(), shuffled, d.label());
    EXPECT_TRUE(other == d);
    ScalarField u(d.n());
    for (auto& x : u) x = std::uniform_real_distribution<double>(-1.0, 1.0)(gen);
    const ScalarField a = vertex_energy_density(d, u, 3.0);
    const ScalarField b = vertex_energy_density(other, u, 3.0);
    for (std::size_t i = 0; i < d.n(); ++i) EXPECT_EQ(a[i], b[i]);
}

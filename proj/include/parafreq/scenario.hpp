#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "parafreq/io.hpp"
#include "parafreq/version.hpp"

namespace parafreq {

struct InitSpec {
    enum class Kind { eigenmode, random, constant, explicit_values, p_eigenpair };
    Kind kind = Kind::random;
    std::size_t k = 1;
    std::optional<std::uint64_t> seed;
    double low = -1.0;
    double high = 1.0;
    double c = 1.0;
    std::vector<double> values;
};

struct CheckRequest {
    std::string name;
    std::optional<double> tolerance;  // meaning depends on the check, see known_checks()
    std::optional<double> floor;
};

struct Scenario {
    DomainSpec domain;
    EquationSpec equation;
    Integrator integrator = Integrator::automatic;
    TimeGrid time;
    int refinement_levels = 1;
    InitSpec init;
    std::vector<CheckRequest> checks;
    std::string output;
    std::uint64_t seed = 0;
    std::string self_test;
    ordered_json echo;  // the configuration as parsed
};

/// Check name -> meaning of its "tolerance" override (empty when it takes none).
inline const std::map<std::string, std::string>& known_checks() {
    static const std::map<std::string, std::string> checks{
        {"backward_uniqueness", ""},
        {"frequency_invariants", ""},
        {"growth_bound", ""},
        {"growth_bound_equality", ""},
        {"log_convexity", "second-difference tolerance (default 1e-8)"},
        {"log_derivative", "tol_factor (default 1)"},
        {"monotonicity", "tolerance (default 1e-10 spectral, 10 dt + 1e-8 otherwise)"},
        {"monotonicity_refinement", ""},
        {"perturbation_envelope", "absolute slack (default 1e-14)"},
        {"perturbed_linear", "c in c dt + floor (default 10)"},
        {"perturbed_p", "c in c dt + floor (default 10)"},
        {"rigidity", "field tolerance (default 1e-8 linear, 1e-3 p)"},
        {"step_residuals", "residual bound (default newton_tol, 1e-12 linear)"},
    };
    return checks;
}

// ---------------------------------------------------------------------------
// Strict config reading

namespace detail {

[[noreturn]] inline void invalid(const std::string& path, const std::string& what) {
    throw Error(ErrorKind::validation, path + ": " + what);
}

/// Object reader that remembers which keys were consumed and rejects the rest.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) invalid(path_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const nlohmann::json& raw(const std::string& key) {
        if (!j_.contains(key)) invalid(path(key), "required key is missing");
        used_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_number()) invalid(path(key), "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) invalid(path(key), "expected a finite number");
        return x;
    }
    double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

    std::uint64_t unsigned_int(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
            invalid(path(key), "expected a nonnegative integer");
        }
        return v.get<std::uint64_t>();
    }
    std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
        return has(key) ? unsigned_int(key) : fallback;
    }

    long long integer(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_number_integer()) invalid(path(key), "expected an integer");
        return v.get<long long>();
    }

    std::string string(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_string()) invalid(path(key), "expected a string");
        return v.get<std::string>();
    }
    std::string string(const std::string& key, const std::string& fallback) { return has(key) ? string(key) : fallback; }

    std::vector<double> numbers(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_array()) invalid(path(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) invalid(path(key) + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) invalid(path(key), "unknown key");
        }
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline std::pair<double, double> read_range(StrictObject& o, const std::string& key, std::pair<double, double> fallback) {
    if (!o.has(key)) return fallback;
    const auto v = o.numbers(key);
    if (v.size() != 2 || !(v[0] <= v[1])) invalid(o.path(key), "expected [low, high] with low <= high");
    return {v[0], v[1]};
}

inline TimeFunction parse_time_function(const nlohmann::json& j, const std::string& path) {
    StrictObject o(j, path);
    const std::string kind = o.string("kind");
    TimeFunction f;
    if (kind == "constant") {
        f = TimeFunction::constant(o.number("value"));
    } else if (kind == "linear") {
        f = TimeFunction::linear(o.number("slope"), o.number("intercept", 0.0));
    } else if (kind == "sinusoid") {
        f = TimeFunction::sinusoid(o.number("amplitude"), o.number("omega"), o.number("phase", 0.0));
    } else if (kind == "piecewise_linear") {
        const auto& knots = o.raw("knots");
        if (!knots.is_array() || knots.empty()) invalid(o.path("knots"), "expected a non-empty array of [t, value]");
        std::vector<TimeFunction::Knot> list;
        for (std::size_t i = 0; i < knots.size(); ++i) {
            const auto& kn = knots[i];
            if (!kn.is_array() || kn.size() != 2 || !kn[0].is_number() || !kn[1].is_number()) {
                invalid(o.path("knots") + "[" + std::to_string(i) + "]", "expected [t, value]");
            }
            list.emplace_back(kn[0].get<double>(), kn[1].get<double>());
        }
        try {
            f = TimeFunction::piecewise_linear(std::move(list));
        } catch (const Error& e) {
            invalid(o.path("knots"), e.message());
        }
    } else {
        invalid(o.path("kind"), "unknown time function kind '" + kind + "'");
    }
    o.finish();
    return f;
}

inline MeasureSpec parse_measure(const nlohmann::json& j, const std::string& path, std::uint64_t master) {
    StrictObject o(j, path);
    const std::string kind = o.string("kind");
    MeasureSpec m;
    if (kind == "list") {
        m.kind = MeasureSpec::Kind::list;
        m.values = o.numbers("values");
    } else if (kind == "f_constant") {
        m.kind = MeasureSpec::Kind::f_constant;
        m.value = o.number("f", 0.0);
    } else if (kind == "f_uniform") {
        m.kind = MeasureSpec::Kind::f_uniform;
        m.low = o.number("low");
        m.high = o.number("high");
        if (!(m.low <= m.high)) invalid(o.path("high"), "must be >= low");
        m.seed = o.unsigned_int("seed", derive_seed(master, {0, 0, 3}));
    } else if (kind == "f_cosine") {
        m.kind = MeasureSpec::Kind::f_cosine;
        m.value = o.number("amplitude");
    } else {
        invalid(o.path("kind"), "unknown measure kind '" + kind + "'");
    }
    o.finish();
    return m;
}

inline DomainSpec parse_domain(const nlohmann::json& j, const std::string& path, std::uint64_t master) {
    StrictObject o(j, path);
    const std::string kind = o.string("kind");
    DomainSpec d;
    d.label = o.string("label", "");
    if (o.has("measure")) d.measure = parse_measure(o.raw("measure"), o.path("measure"), master);
    auto positive_count = [&](const std::string& key, long long minimum) {
        const long long v = o.integer(key);
        if (v < minimum) invalid(o.path(key), "must be >= " + std::to_string(minimum));
        return static_cast<std::size_t>(v);
    };
    if (kind == "cycle") {
        CycleSpec c;
        c.n = positive_count("n", 3);
        c.weight = o.number("weight", 1.0);
        c.conductance = o.number("conductance", 1.0);
        d.shape = c;
    } else if (kind == "periodic_grid") {
        PeriodicGridSpec g;
        g.nx = positive_count("nx", 3);
        g.ny = positive_count("ny", 3);
        g.txx = o.number("txx", 1.0);
        g.tyy = o.number("tyy", 1.0);
        g.ax = o.number("ax", 0.0);
        g.ay = o.number("ay", 0.0);
        d.shape = g;
    } else if (kind == "random_graph") {
        RandomGraphSpec r;
        r.n = positive_count("n", 2);
        if (o.has("edge_probability") == o.has("target_degree")) {
            invalid(path, "give exactly one of edge_probability or target_degree");
        }
        if (o.has("edge_probability")) {
            r.edge_probability = o.number("edge_probability");
            if (!(r.edge_probability > 0.0 && r.edge_probability <= 1.0)) invalid(o.path("edge_probability"), "must lie in (0, 1]");
        } else {
            r.target_degree = o.number("target_degree");
            if (!(r.target_degree > 0.0)) invalid(o.path("target_degree"), "must be positive");
        }
        r.seed = o.unsigned_int("seed", derive_seed(master, {0, 0, 0}));
        std::tie(r.weight_low, r.weight_high) = read_range(o, "weight_range", {1.0, 1.0});
        std::tie(r.conductance_low, r.conductance_high) = read_range(o, "conductance_range", {1.0, 1.0});
        if (o.has("max_retries")) r.max_retries = static_cast<int>(positive_count("max_retries", 0));
        d.shape = r;
    } else if (kind == "explicit") {
        ExplicitSpec e;
        const auto& edges = o.raw("edges");
        if (!edges.is_array()) invalid(o.path("edges"), "expected an array of [i, j, w, c]");
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const auto& row = edges[k];
            const std::string rp = o.path("edges") + "[" + std::to_string(k) + "]";
            if (!row.is_array() || row.size() != 4) invalid(rp, "expected [i, j, w, c]");
            if (!row[0].is_number_unsigned() || !row[1].is_number_unsigned()) invalid(rp, "vertex indices must be nonnegative integers");
            if (!row[2].is_number() || !row[3].is_number()) invalid(rp, "weight and conductance must be numbers");
            e.edges.push_back({row[0].get<std::size_t>(), row[1].get<std::size_t>(), row[2].get<double>(), row[3].get<double>()});
        }
        if (d.measure.kind != MeasureSpec::Kind::list) invalid(o.path("measure"), "explicit domains need a measure list");
        d.shape = e;
    } else {
        invalid(o.path("kind"), "unknown domain kind '" + kind + "'");
    }
    o.finish();
    return d;
}

inline Integrator parse_integrator(const std::string& s, const std::string& path) {
    if (s == "auto") return Integrator::automatic;
    if (s == "spectral") return Integrator::spectral;
    if (s == "implicit_euler") return Integrator::implicit_euler;
    if (s == "newton_implicit") return Integrator::newton_implicit;
    if (s == "newton_richardson") return Integrator::newton_richardson;
    invalid(path, "unknown integrator '" + s + "'");
}

inline EquationSpec parse_equation(const nlohmann::json& j, const std::string& path, std::uint64_t master,
                                   Integrator& integrator) {
    StrictObject o(j, path);
    const std::string kind = o.string("kind");
    EquationSpec eq;
    if (kind == "linear") eq.kind = EquationKind::linear;
    else if (kind == "p_heat") eq.kind = EquationKind::p_heat;
    else if (kind == "linear_perturbed") eq.kind = EquationKind::linear_perturbed;
    else if (kind == "p_perturbed") eq.kind = EquationKind::p_perturbed;
    else invalid(o.path("kind"), "unknown equation kind '" + kind + "'");

    if (eq.is_p_kind()) {
        eq.p = o.number("p");
        if (!(eq.p > 1.0)) invalid(o.path("p"), "must be > 1");
    } else if (o.has("p")) {
        invalid(o.path("p"), "only p_heat and p_perturbed take p");
    }
    if (o.has("phi")) {
        if (eq.kind != EquationKind::linear) invalid(o.path("phi"), "only the linear kind takes phi");
        eq.drive = parse_time_function(o.raw("phi"), o.path("phi"));
    }
    if (o.has("eta")) {
        if (eq.kind != EquationKind::p_heat) invalid(o.path("eta"), "only the p_heat kind takes eta");
        eq.drive = parse_time_function(o.raw("eta"), o.path("eta"));
    }
    if (eq.is_perturbed()) {
        eq.psi = parse_time_function(o.raw("psi"), o.path("psi"));
        eq.perturbation_seed = o.unsigned_int("perturbation_seed", derive_seed(master, {0, 0, 2}));
    } else {
        if (o.has("psi")) invalid(o.path("psi"), "only perturbed kinds take psi");
        if (o.has("perturbation_seed")) invalid(o.path("perturbation_seed"), "only perturbed kinds take a perturbation seed");
    }
    eq.eps = o.number("eps", 1e-8);
    if (!(eq.eps >= 0.0)) invalid(o.path("eps"), "must be nonnegative");
    if (eq.is_p_kind() && eq.p != 2.0 && !(eq.eps > 0.0)) invalid(o.path("eps"), "must be positive when p != 2");
    eq.solver.newton_tol = o.number("newton_tol", 1e-12);
    if (!(eq.solver.newton_tol > 0.0)) invalid(o.path("newton_tol"), "must be positive");
    if (o.has("max_iters")) {
        const long long v = o.integer("max_iters");
        if (v < 1) invalid(o.path("max_iters"), "must be >= 1");
        eq.solver.max_iters = static_cast<int>(v);
    }
    if (o.has("integrator")) integrator = parse_integrator(o.string("integrator"), o.path("integrator"));
    o.finish();
    return eq;
}

inline InitSpec parse_init(const nlohmann::json& j, const std::string& path) {
    StrictObject o(j, path);
    const std::string kind = o.string("kind");
    InitSpec s;
    if (kind == "eigenmode") {
        s.kind = InitSpec::Kind::eigenmode;
        const long long k = o.integer("k");
        if (k < 0) invalid(o.path("k"), "must be >= 0");
        s.k = static_cast<std::size_t>(k);
    } else if (kind == "random") {
        s.kind = InitSpec::Kind::random;
        if (o.has("seed")) s.seed = o.unsigned_int("seed");
        s.low = o.number("low", -1.0);
        s.high = o.number("high", 1.0);
        if (!(s.low <= s.high)) invalid(o.path("high"), "must be >= low");
    } else if (kind == "constant") {
        s.kind = InitSpec::Kind::constant;
        s.c = o.number("c");
    } else if (kind == "explicit") {
        s.kind = InitSpec::Kind::explicit_values;
        s.values = o.numbers("values");
    } else if (kind == "p_eigenpair") {
        s.kind = InitSpec::Kind::p_eigenpair;
        if (o.has("seed")) s.seed = o.unsigned_int("seed");
    } else {
        invalid(o.path("kind"), "unknown init kind '" + kind + "'");
    }
    o.finish();
    return s;
}

} // namespace detail

/// Parses and validates a scenario configuration. Unknown keys anywhere are
/// rejected; messages carry the dotted path of the offending key.
inline Scenario parse_config(const std::string& text, std::optional<std::uint64_t> seed_override = std::nullopt) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, "malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    detail::StrictObject root(j, "");
    Scenario s;
    s.seed = root.unsigned_int("seed", 0);
    if (seed_override) s.seed = *seed_override;
    s.domain = detail::parse_domain(root.raw("domain"), "domain", s.seed);
    s.equation = detail::parse_equation(root.raw("equation"), "equation", s.seed, s.integrator);

    {
        detail::StrictObject t(root.raw("time"), "time");
        s.time.a = t.number("a");
        s.time.b = t.number("b");
        if (!(s.time.b > s.time.a)) detail::invalid("time.b", "must be greater than time.a");
        const long long K = t.integer("K");
        if (K < 1) detail::invalid("time.K", "must be >= 1");
        s.time.K = static_cast<std::size_t>(K);
        if (t.has("refinement_levels")) {
            const long long r = t.integer("refinement_levels");
            if (r < 1 || r > 8) detail::invalid("time.refinement_levels", "must lie in [1, 8]");
            s.refinement_levels = static_cast<int>(r);
        }
        t.finish();
    }
    if (s.equation.is_perturbed() && s.equation.psi.inf(s.time.a, s.time.b) < 0.0) {
        detail::invalid("equation.psi", "must be nonnegative on [a, b]");
    }
    s.init = detail::parse_init(root.raw("init"), "init");

    const auto& checks = root.raw("checks");
    if (!checks.is_array()) detail::invalid("checks", "expected an array");
    for (std::size_t i = 0; i < checks.size(); ++i) {
        const std::string path = "checks[" + std::to_string(i) + "]";
        CheckRequest req;
        if (checks[i].is_string()) {
            req.name = checks[i].get<std::string>();
        } else {
            detail::StrictObject c(checks[i], path);
            req.name = c.string("name");
            if (c.has("tolerance")) req.tolerance = c.number("tolerance");
            if (c.has("floor")) req.floor = c.number("floor");
            c.finish();
        }
        const auto known = known_checks().find(req.name);
        if (known == known_checks().end()) detail::invalid(path, "unknown check '" + req.name + "'");
        if (req.tolerance && known->second.empty()) detail::invalid(path + ".tolerance", "check takes no tolerance");
        if (req.tolerance && *req.tolerance < 0.0) detail::invalid(path + ".tolerance", "must be nonnegative");
        if (req.floor && req.name != "perturbed_linear" && req.name != "perturbed_p") {
            detail::invalid(path + ".floor", "only perturbed checks take a floor");
        }

        const bool perturbed = s.equation.is_perturbed();
        if (req.name == "log_derivative" || req.name == "growth_bound" || req.name == "growth_bound_equality" ||
            req.name == "log_convexity") {
            if (perturbed) detail::invalid(path, "'" + req.name + "' applies to unperturbed equations");
        }
        if (req.name == "log_convexity" && !s.equation.drive.nondecreasing_on(s.time.a, s.time.b)) {
            detail::invalid(path, "hypothesis violation: log-convexity needs a nondecreasing phi/eta on [a, b]");
        }
        if (req.name == "monotonicity_refinement" && s.refinement_levels < 2) {
            detail::invalid(path, "monotonicity_refinement needs time.refinement_levels >= 2");
        }
        if (req.name == "perturbed_linear" && s.equation.is_p_kind()) detail::invalid(path, "needs a linear-kind equation");
        if (req.name == "perturbed_p" && !s.equation.is_p_kind()) detail::invalid(path, "needs a p-kind equation");
        if (req.name == "perturbation_envelope" && !perturbed) detail::invalid(path, "needs a perturbed equation");
        if (req.name == "rigidity") {
            const bool linear_ok = s.equation.kind == EquationKind::linear && s.init.kind == InitSpec::Kind::eigenmode;
            const bool p_ok = s.equation.kind == EquationKind::p_heat && s.init.kind == InitSpec::Kind::p_eigenpair;
            if (!linear_ok && !p_ok) {
                detail::invalid(path, "rigidity needs linear + eigenmode or p_heat + p_eigenpair initial data");
            }
        }
        s.checks.push_back(req);
    }
    s.output = root.string("output", "");
    s.self_test = root.string("self_test", "");
    if (!s.self_test.empty() && s.self_test != "decreasing_frequency") {
        detail::invalid("self_test", "unknown self-test '" + s.self_test + "'");
    }
    if (s.init.kind == InitSpec::Kind::eigenmode && s.equation.kind != EquationKind::linear &&
        s.equation.kind != EquationKind::linear_perturbed) {
        detail::invalid("init.kind", "eigenmode initial data applies to linear kinds; use p_eigenpair");
    }
    root.finish();
    s.echo = ordered_json::parse(j.dump());
    s.echo["seed"] = s.seed;
    return s;
}

// ---------------------------------------------------------------------------
// Running

struct Report {
    ordered_json scenario;
    std::vector<CheckResult> checks;
    std::vector<std::pair<std::string, std::string>> artifacts;  // role -> file name
    std::vector<std::pair<std::string, double>> timings;         // seconds
    std::string tool_version = version;

    std::size_t failures() const {
        return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const CheckResult& r) { return !r.pass; }));
    }
    bool pass() const { return failures() == 0; }
};

struct InitialData {
    ScalarField u0;
    std::optional<double> lambda;  // eigenvalue / p-eigenvalue when the data is eigen-data
};

inline InitialData build_initial_data(const WeightedDomain& domain, const Scenario& s) {
    InitialData out;
    const std::size_t n = domain.n();
    switch (s.init.kind) {
        case InitSpec::Kind::eigenmode: {
            if (s.init.k >= n) detail::invalid("init.k", "mode index exceeds the vertex count");
            const Spectrum spec = eigendecompose(domain);
            out.u0 = spec.mode(s.init.k);
            out.lambda = spec.eigenvalues[static_cast<Eigen::Index>(s.init.k)];
            break;
        }
        case InitSpec::Kind::random: {
            Rng rng(s.init.seed.value_or(derive_seed(s.seed, {0, 0, 1})));
            out.u0.resize(static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) out.u0[static_cast<Eigen::Index>(i)] = rng.uniform(s.init.low, s.init.high);
            break;
        }
        case InitSpec::Kind::constant:
            out.u0 = ScalarField::Constant(static_cast<Eigen::Index>(n), s.init.c);
            if (s.equation.kind == EquationKind::linear) out.lambda = 0.0;
            break;
        case InitSpec::Kind::explicit_values:
            if (s.init.values.size() != n) {
                detail::invalid("init.values", "has " + std::to_string(s.init.values.size()) + " entries, domain has " +
                                                   std::to_string(n) + " vertices");
            }
            out.u0 = Eigen::Map<const ScalarField>(s.init.values.data(), static_cast<Eigen::Index>(n));
            break;
        case InitSpec::Kind::p_eigenpair: {
            PEigenOptions opts;
            opts.seed = s.init.seed.value_or(derive_seed(s.seed, {0, 0, 4}));
            const PEigenpair pair = p_eigenpair(domain, s.equation.exponent(), opts);
            out.u0 = pair.w;
            out.lambda = pair.lambda;
            break;
        }
    }
    return out;
}

namespace detail {

inline CheckResult failed_check(const std::string& name, const std::string& note) {
    return make_check(name, "execution", std::numeric_limits<double>::quiet_NaN(), 0.0, -1, note);
}

inline std::vector<CheckResult> run_check(const CheckRequest& req, const WeightedDomain& domain,
                                          const std::vector<Trajectory>& trajs, const std::vector<FrequencySeries>& series,
                                          const InitialData& init) {
    const FrequencySeries& s = series.front();
    const Trajectory& traj = trajs.front();
    const std::string& n = req.name;
    if (n == "frequency_invariants") return {check_frequency_invariants(s)};
    if (n == "monotonicity") return {check_monotonicity(s, req.tolerance.value_or(default_monotonicity_tolerance(s)))};
    if (n == "monotonicity_refinement") {
        std::vector<CheckResult> out{check_monotonicity_refinement(series[0], series[1])};
        out.push_back(check_monotonicity(series[1], default_monotonicity_tolerance(series[1])));
        out.back().name = "monotonicity_refined";
        return out;
    }
    if (n == "log_derivative") {
        const FrequencySeries* companion = series.size() > 1 ? &series[1] : nullptr;
        return check_log_derivative(s, req.tolerance.value_or(1.0), companion, companion != nullptr);
    }
    if (n == "log_convexity") return {check_log_convexity(s, req.tolerance.value_or(1e-8))};
    if (n == "growth_bound") return {check_growth_bound(s, false)};
    if (n == "growth_bound_equality") return {check_growth_bound(s, true)};
    if (n == "rigidity") {
        if (!init.lambda) throw Error(ErrorKind::precondition, "rigidity needs eigen-data");
        if (traj.equation.kind == EquationKind::linear) {
            return check_rigidity(domain, s, traj, *init.lambda, 1e-9, req.tolerance.value_or(1e-8));
        }
        return check_rigidity_p(domain, s, traj, *init.lambda, req.tolerance.value_or(1e-3));
    }
    if (n == "perturbed_linear") return check_perturbed_linear(s, req.tolerance.value_or(10.0), req.floor.value_or(1e-8));
    if (n == "perturbed_p") {
        auto out = check_perturbed_p(s, req.tolerance.value_or(10.0), req.floor.value_or(1e-8));
        out.back().note = "alternative closed-form shortfall " + format_number(alternative_p_bound_shortfall(s));
        return out;
    }
    if (n == "backward_uniqueness") return {check_backward_uniqueness(s)};
    if (n == "perturbation_envelope") {
        const double slack = req.tolerance.value_or(1e-14);
        Worst w;
        const auto kind = traj.equation.is_p_kind() ? PerturbationKind::p : PerturbationKind::linear;
        for (std::size_t k = 0; k < traj.perturbations.size(); ++k) {
            const ScalarField env = perturbation_envelope(domain, traj.states[k], kind, traj.equation.p);
            const ScalarField excess = traj.perturbations[k].cwiseAbs() - traj.psi_samples[k] * env;
            w.update(excess.maxCoeff() / std::max(1.0, env.maxCoeff()), k);
        }
        if (traj.perturbations.empty()) w.update(0.0, 0);
        return {make_check("perturbation_envelope", "perturbation-envelope", w.value, slack, w.at)};
    }
    if (n == "step_residuals") {
        const double bound = req.tolerance.value_or(traj.equation.is_p_kind() ? traj.equation.solver.newton_tol : 1e-12);
        Worst w;
        for (std::size_t k = 0; k < traj.step_residuals.size(); ++k) w.update(traj.step_residuals[k], k);
        return {make_check("step_residuals", "solver-residual", w.value, bound, w.at)};
    }
    throw Error(ErrorKind::validation, "unknown check '" + n + "'");
}

} // namespace detail

/// Builds the domain, initial data and trajectories (one per refinement level),
/// runs the requested checks and writes CSV/JSON artifacts into out_dir.
/// Solver failures become a failed "integration" pseudo-check; configuration
/// and I/O problems are thrown.
inline Report run_scenario(const Scenario& s, const std::filesystem::path& out_dir) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    ensure_directory(out_dir);

    Report report;
    report.scenario = s.echo;

    const WeightedDomain domain = build_domain(s.domain);
    InitialData init;
    try {
        init = build_initial_data(domain, s);
    } catch (const ConvergenceError& e) {
        report.checks.push_back(detail::failed_check("initial_data", e.message()));
        return report;
    }

    std::vector<Trajectory> trajs;
    std::vector<FrequencySeries> series;
    const auto t_flow = clock::now();
    try {
        FlowOptions fo;
        fo.integrator = s.integrator;
        for (int level = 0; level < s.refinement_levels; ++level) {
            TimeGrid g = s.time;
            g.K = s.time.K << level;
            trajs.push_back(run_flow(domain, s.equation, init.u0, g, fo));
            series.push_back(frequency_series(domain, trajs.back()));
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::precondition || e.kind() == ErrorKind::parameter ||
            e.kind() == ErrorKind::validation || e.kind() == ErrorKind::capacity) {
            throw;
        }
        report.checks.push_back(detail::failed_check("integration", std::string(to_string(e.kind())) + ": " + e.message()));
    }
    const auto t_checks = clock::now();

    if (!series.empty()) {
        if (s.self_test == "decreasing_frequency") {
            for (std::size_t k = 0; k < series.front().size(); ++k) series.front().U[k] -= 0.1 * static_cast<double>(k);
        }
        for (const CheckRequest& req : s.checks) {
            try {
                auto results = detail::run_check(req, domain, trajs, series, init);
                report.checks.insert(report.checks.end(), results.begin(), results.end());
            } catch (const Error& e) {
                report.checks.push_back(detail::failed_check(req.name, std::string(to_string(e.kind())) + ": " + e.message()));
            }
        }
        std::stable_sort(report.checks.begin(), report.checks.end(),
                         [](const CheckResult& a, const CheckResult& b) { return a.name < b.name; });

        write_text_file(out_dir / "frequency.csv", frequency_csv(series.front()));
        write_text_file(out_dir / "trajectory.csv", trajectory_csv(trajs.front()));
        write_text_file(out_dir / "trajectory.meta.json", trajectory_metadata(trajs.front()).dump(2) + "\n");
        report.artifacts = {{"frequency", "frequency.csv"}, {"trajectory", "trajectory.csv"},
                            {"trajectory_metadata", "trajectory.meta.json"}};
        for (std::size_t level = 1; level < series.size(); ++level) {
            const std::string name = "frequency_level" + std::to_string(level) + ".csv";
            write_text_file(out_dir / name, frequency_csv(series[level]));
            report.artifacts.emplace_back("frequency_level" + std::to_string(level), name);
        }
    }
    write_text_file(out_dir / "domain.domain.json", to_json(domain).dump(2) + "\n");
    report.artifacts.emplace_back("domain", "domain.domain.json");
    report.artifacts.emplace_back("report", "report.json");

    const auto t_end = clock::now();
    auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    report.timings = {{"setup", secs(t_start, t_flow)}, {"integration", secs(t_flow, t_checks)},
                      {"checks", secs(t_checks, t_end)}, {"total", secs(t_start, t_end)}};
    return report;
}

// ---------------------------------------------------------------------------
// Report output

enum class ReportFormat { json, text };

inline ordered_json report_json(const Report& r) {
    ordered_json j;
    j["tool"] = "parafreq";
    j["version"] = r.tool_version;
    j["pass"] = r.pass();
    j["failures"] = r.failures();
    j["scenario"] = r.scenario;
    auto checks = ordered_json::array();
    for (const auto& c : r.checks) checks.push_back(to_json(c));
    j["checks"] = std::move(checks);
    ordered_json artifacts = ordered_json::object();
    for (const auto& [role, file] : r.artifacts) artifacts[role] = file;
    j["artifacts"] = std::move(artifacts);
    ordered_json timings = ordered_json::object();
    for (const auto& [what, sec] : r.timings) timings[what] = sec;
    j["timings_seconds"] = std::move(timings);
    return j;
}

/// Fixed-width table of check rows. Ends with "ALL CHECKS PASSED" or "N FAILED".
inline std::string check_table(std::vector<CheckResult> checks) {
    std::stable_sort(checks.begin(), checks.end(), [](const CheckResult& a, const CheckResult& b) { return a.name < b.name; });
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::string out = pad("check", 34) + pad("anchor", 38) + pad("worst_violation", 24) + pad("tolerance", 24) + "result\n";
    std::size_t failed = 0;
    for (const auto& c : checks) {
        if (!c.pass) ++failed;
        out += pad(c.name, 34) + pad(c.anchor, 38) + pad(format_number(c.worst_violation), 24) +
               pad(format_number(c.tolerance), 24) + (c.pass ? "pass" : "FAIL  <--") + "\n";
        if (!c.pass && !c.note.empty()) out += "    " + c.note + "\n";
    }
    out += failed == 0 ? "ALL CHECKS PASSED\n" : std::to_string(failed) + " FAILED\n";
    return out;
}

inline std::string emit_report(const Report& r, ReportFormat format) {
    if (format == ReportFormat::json) return report_json(r).dump(2) + "\n";
    return "parafreq " + r.tool_version + "\n" + check_table(r.checks);
}

/// run_scenario followed by writing report.json.
inline Report run_and_write(const Scenario& s, const std::filesystem::path& out_dir) {
    Report r = run_scenario(s, out_dir);
    write_text_file(out_dir / "report.json", emit_report(r, ReportFormat::json));
    return r;
}

} // namespace parafreq

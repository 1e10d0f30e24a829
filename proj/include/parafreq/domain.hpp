#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "parafreq/error.hpp"
#include "parafreq/random.hpp"

namespace parafreq {

/// Undirected edge with geometric weight w and conductance c. The conductance is
/// the per-edge stand-in for the diffusion tensor; only the product w*c enters
/// the operators.
struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double weight = 1.0;
    double conductance = 1.0;

    double coupling() const noexcept { return weight * conductance; }
};

/// Finite closed weighted domain: positive vertex measure, positive edge data,
/// connected, one record per unordered vertex pair.
///
/// Edges are canonicalized on construction (i < j, sorted by (i, j)), so every
/// edge sum below is independent of the order the caller listed edges in.
class WeightedDomain {
public:
    struct Incidence {
        std::size_t neighbor;
        std::size_t edge;
    };

    WeightedDomain(std::vector<double> measure, std::vector<Edge> edges, std::string label = {})
        : mu_(std::move(measure)), edges_(std::move(edges)), label_(std::move(label)) {
        validate_and_canonicalize();
        build_incidence();
        check_connected();
    }

    std::size_t n() const noexcept { return mu_.size(); }
    const std::vector<double>& measure() const noexcept { return mu_; }
    double measure(std::size_t i) const { return mu_[i]; }
    std::span<const Edge> edges() const noexcept { return edges_; }
    const std::string& label() const noexcept { return label_; }

    /// Incident edges of vertex i, ascending by edge index.
    std::span<const Incidence> incident(std::size_t i) const {
        return std::span<const Incidence>(incidence_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
    }

    double total_measure() const {
        double s = 0.0;
        for (double m : mu_) s += m;
        return s;
    }

    friend bool operator==(const WeightedDomain& a, const WeightedDomain& b) {
        if (a.mu_ != b.mu_ || a.label_ != b.label_ || a.edges_.size() != b.edges_.size()) return false;
        for (std::size_t e = 0; e < a.edges_.size(); ++e) {
            const Edge& x = a.edges_[e];
            const Edge& y = b.edges_[e];
            if (x.i != y.i || x.j != y.j || x.weight != y.weight || x.conductance != y.conductance) return false;
        }
        return true;
    }

private:
    void validate_and_canonicalize() {
        if (mu_.empty()) throw Error(ErrorKind::invalid_spec, "domain needs at least one vertex");
        for (std::size_t i = 0; i < mu_.size(); ++i) {
            if (!(mu_[i] > 0.0) || !std::isfinite(mu_[i])) {
                throw Error(ErrorKind::invalid_spec, "vertex measure at " + std::to_string(i) + " must be positive and finite");
            }
        }
        for (Edge& e : edges_) {
            if (e.i >= mu_.size() || e.j >= mu_.size()) {
                throw Error(ErrorKind::invalid_spec, "edge endpoint out of range");
            }
            if (e.i == e.j) throw Error(ErrorKind::invalid_spec, "self-loop at vertex " + std::to_string(e.i));
            if (!(e.weight > 0.0) || !std::isfinite(e.weight)) {
                throw Error(ErrorKind::invalid_spec, "edge weight must be positive and finite");
            }
            if (!(e.conductance > 0.0) || !std::isfinite(e.conductance)) {
                throw Error(ErrorKind::invalid_spec, "edge conductance must be positive and finite");
            }
            if (e.i > e.j) std::swap(e.i, e.j);
        }
        std::sort(edges_.begin(), edges_.end(),
                  [](const Edge& a, const Edge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
        for (std::size_t e = 1; e < edges_.size(); ++e) {
            if (edges_[e].i == edges_[e - 1].i && edges_[e].j == edges_[e - 1].j) {
                throw Error(ErrorKind::invalid_spec, "duplicate edge (" + std::to_string(edges_[e].i) + ", " +
                                                         std::to_string(edges_[e].j) + ")");
            }
        }
    }

    void build_incidence() {
        const std::size_t n = mu_.size();
        offsets_.assign(n + 1, 0);
        for (const Edge& e : edges_) {
            ++offsets_[e.i + 1];
            ++offsets_[e.j + 1];
        }
        std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
        incidence_.resize(2 * edges_.size());
        std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t k = 0; k < edges_.size(); ++k) {
            const Edge& e = edges_[k];
            incidence_[cursor[e.i]++] = {e.j, k};
            incidence_[cursor[e.j]++] = {e.i, k};
        }
    }

    void check_connected() const {
        const std::size_t n = mu_.size();
        std::vector<bool> seen(n, false);
        std::vector<std::size_t> stack{0};
        seen[0] = true;
        std::size_t count = 1;
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            for (const Incidence& inc : incident(v)) {
                if (!seen[inc.neighbor]) {
                    seen[inc.neighbor] = true;
                    ++count;
                    stack.push_back(inc.neighbor);
                }
            }
        }
        if (count != n) throw Error(ErrorKind::invalid_spec, "edge set does not connect all vertices");
    }

    std::vector<double> mu_;
    std::vector<Edge> edges_;
    std::string label_;
    std::vector<std::size_t> offsets_;
    std::vector<Incidence> incidence_;
};

// ---------------------------------------------------------------------------
// Construction specs

/// Vertex measure mu_i = exp(-f_i) * nu_i.
struct MeasureSpec {
    enum class Kind { list, f_constant, f_uniform, f_cosine };
    Kind kind = Kind::f_constant;
    std::vector<double> values;  // list
    double value = 0.0;          // f_constant: f; f_cosine: amplitude of cos(2 pi x) cos(2 pi y)
    double low = 0.0, high = 0.0;
    std::uint64_t seed = 0;
};

struct CycleSpec {
    std::size_t n = 3;
    double weight = 1.0;
    double conductance = 1.0;
};

/// Unit-square torus with nx*ny vertices. The diagonal tensor field is
/// T_xx = txx (1 + ax sin 2 pi y), T_yy = tyy (1 + ay sin 2 pi x).
struct PeriodicGridSpec {
    std::size_t nx = 3;
    std::size_t ny = 3;
    double txx = 1.0;
    double tyy = 1.0;
    double ax = 0.0;
    double ay = 0.0;
};

/// Erdos-Renyi draw. Exactly one of edge_probability / target_degree is used
/// (target_degree when positive).
struct RandomGraphSpec {
    std::size_t n = 2;
    double edge_probability = 0.0;
    double target_degree = 0.0;
    std::uint64_t seed = 0;
    double weight_low = 1.0, weight_high = 1.0;
    double conductance_low = 1.0, conductance_high = 1.0;
    int max_retries = 100;
};

struct ExplicitSpec {
    std::vector<Edge> edges;
};

struct DomainSpec {
    std::variant<CycleSpec, PeriodicGridSpec, RandomGraphSpec, ExplicitSpec> shape;
    MeasureSpec measure;
    std::string label;
};

namespace detail {

inline std::vector<double> vertex_f(const MeasureSpec& m, std::size_t n, const std::vector<std::pair<double, double>>* coords) {
    std::vector<double> f(n, 0.0);
    switch (m.kind) {
        case MeasureSpec::Kind::f_constant: std::fill(f.begin(), f.end(), m.value); break;
        case MeasureSpec::Kind::f_uniform: {
            if (!(m.high >= m.low)) throw Error(ErrorKind::invalid_spec, "f_uniform needs low <= high");
            Rng rng(m.seed);
            for (double& x : f) x = rng.uniform(m.low, m.high);
            break;
        }
        case MeasureSpec::Kind::f_cosine: {
            if (coords == nullptr) throw Error(ErrorKind::invalid_spec, "f_cosine measure is only defined on periodic grids");
            for (std::size_t i = 0; i < n; ++i) {
                const auto [x, y] = (*coords)[i];
                f[i] = m.value * std::cos(2.0 * std::numbers::pi * x) * std::cos(2.0 * std::numbers::pi * y);
            }
            break;
        }
        case MeasureSpec::Kind::list: break;
    }
    return f;
}

inline std::vector<double> measure_from_spec(const MeasureSpec& m, std::size_t n, double cell,
                                             const std::vector<std::pair<double, double>>* coords) {
    if (m.kind == MeasureSpec::Kind::list) {
        if (m.values.size() != n) {
            throw Error(ErrorKind::invalid_spec, "measure list has " + std::to_string(m.values.size()) +
                                                     " entries, expected " + std::to_string(n));
        }
        for (double v : m.values) {
            if (!(v > 0.0)) throw Error(ErrorKind::invalid_spec, "vertex measures must be positive");
        }
        return m.values;
    }
    const auto f = vertex_f(m, n, coords);
    std::vector<double> mu(n);
    for (std::size_t i = 0; i < n; ++i) mu[i] = std::exp(-f[i]) * cell;
    return mu;
}

inline bool connected(std::size_t n, const std::vector<Edge>& edges) {
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::size_t components = n;
    for (const Edge& e : edges) {
        const std::size_t a = find(e.i), b = find(e.j);
        if (a != b) {
            parent[a] = b;
            --components;
        }
    }
    return components == 1;
}

inline WeightedDomain build_cycle(const CycleSpec& s, const MeasureSpec& m, const std::string& label) {
    if (s.n < 3) throw Error(ErrorKind::invalid_spec, "cycle needs n >= 3");
    std::vector<Edge> edges;
    for (std::size_t k = 0; k < s.n; ++k) edges.push_back({k, (k + 1) % s.n, s.weight, s.conductance});
    return WeightedDomain(measure_from_spec(m, s.n, 1.0, nullptr), std::move(edges),
                          label.empty() ? "cycle" + std::to_string(s.n) : label);
}

inline WeightedDomain build_grid(const PeriodicGridSpec& s, const MeasureSpec& m, const std::string& label) {
    if (s.nx < 3 || s.ny < 3) throw Error(ErrorKind::invalid_spec, "periodic grid needs nx >= 3 and ny >= 3");
    if (!(s.txx > 0.0) || !(s.tyy > 0.0)) throw Error(ErrorKind::invalid_spec, "grid tensor entries must be positive");
    if (!(std::abs(s.ax) < 1.0) || !(std::abs(s.ay) < 1.0)) {
        throw Error(ErrorKind::invalid_spec, "grid tensor modulation amplitudes must lie in (-1, 1)");
    }
    const std::size_t n = s.nx * s.ny;
    const double hx = 1.0 / static_cast<double>(s.nx);
    const double hy = 1.0 / static_cast<double>(s.ny);
    std::vector<std::pair<double, double>> coords(n);
    for (std::size_t iy = 0; iy < s.ny; ++iy)
        for (std::size_t ix = 0; ix < s.nx; ++ix) coords[ix + s.nx * iy] = {ix * hx, iy * hy};

    const auto mu = measure_from_spec(m, n, hx * hy, &coords);
    // Edge density exp(-f) at the midpoint (geometric mean of the endpoints);
    // with an explicit list there is no f, so edges carry unit density.
    const bool have_f = m.kind != MeasureSpec::Kind::list;
    const auto f = have_f ? vertex_f(m, n, &coords) : std::vector<double>(n, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;

    std::vector<Edge> edges;
    edges.reserve(2 * n);
    for (std::size_t iy = 0; iy < s.ny; ++iy) {
        for (std::size_t ix = 0; ix < s.nx; ++ix) {
            const std::size_t i = ix + s.nx * iy;
            const std::size_t right = (ix + 1) % s.nx + s.nx * iy;
            const std::size_t up = ix + s.nx * ((iy + 1) % s.ny);
            const double y = coords[i].second, x = coords[i].first;
            const double rho_r = std::exp(-0.5 * (f[i] + f[right]));
            const double rho_u = std::exp(-0.5 * (f[i] + f[up]));
            edges.push_back({i, right, rho_r * hy / hx, s.txx * (1.0 + s.ax * std::sin(two_pi * y))});
            edges.push_back({i, up, rho_u * hx / hy, s.tyy * (1.0 + s.ay * std::sin(two_pi * x))});
        }
    }
    return WeightedDomain(mu, std::move(edges),
                          label.empty() ? "grid" + std::to_string(s.nx) + "x" + std::to_string(s.ny) : label);
}

inline WeightedDomain build_random(const RandomGraphSpec& s, const MeasureSpec& m, const std::string& label) {
    if (s.n < 2) throw Error(ErrorKind::invalid_spec, "random graph needs n >= 2");
    double prob = s.edge_probability;
    if (s.target_degree > 0.0) prob = std::min(1.0, s.target_degree / static_cast<double>(s.n - 1));
    if (!(prob > 0.0 && prob <= 1.0)) throw Error(ErrorKind::invalid_spec, "edge probability must lie in (0, 1]");
    if (!(s.weight_low > 0.0 && s.weight_high >= s.weight_low)) {
        throw Error(ErrorKind::invalid_spec, "weight range must be positive and ordered");
    }
    if (!(s.conductance_low > 0.0 && s.conductance_high >= s.conductance_low)) {
        throw Error(ErrorKind::invalid_spec, "conductance range must be positive and ordered");
    }
    for (int attempt = 0; attempt <= s.max_retries; ++attempt) {
        Rng rng(s.seed + static_cast<std::uint64_t>(attempt));
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < s.n; ++i) {
            for (std::size_t j = i + 1; j < s.n; ++j) {
                if (rng.uniform() < prob) {
                    const double w = rng.uniform(s.weight_low, s.weight_high);
                    const double c = rng.uniform(s.conductance_low, s.conductance_high);
                    edges.push_back({i, j, w, c});
                }
            }
        }
        if (connected(s.n, edges)) {
            return WeightedDomain(measure_from_spec(m, s.n, 1.0, nullptr), std::move(edges),
                                  label.empty() ? "random" + std::to_string(s.n) + "-seed" +
                                                      std::to_string(s.seed + static_cast<std::uint64_t>(attempt))
                                                : label);
        }
    }
    throw Error(ErrorKind::construction_failure,
                "random graph stayed disconnected after " + std::to_string(s.max_retries + 1) + " draws");
}

} // namespace detail

inline WeightedDomain build_domain(const DomainSpec& spec) {
    return std::visit(
        [&](const auto& s) -> WeightedDomain {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, CycleSpec>) {
                return detail::build_cycle(s, spec.measure, spec.label);
            } else if constexpr (std::is_same_v<S, PeriodicGridSpec>) {
                return detail::build_grid(s, spec.measure, spec.label);
            } else if constexpr (std::is_same_v<S, RandomGraphSpec>) {
                return detail::build_random(s, spec.measure, spec.label);
            } else {
                std::size_t n = spec.measure.kind == MeasureSpec::Kind::list ? spec.measure.values.size() : 0;
                for (const Edge& e : s.edges) n = std::max(n, std::max(e.i, e.j) + 1);
                return WeightedDomain(detail::measure_from_spec(spec.measure, n, 1.0, nullptr), s.edges,
                                      spec.label.empty() ? "explicit" : spec.label);
            }
        },
        spec.shape);
}

/// e_i = (1/mu_i) sum_{e ~ i} (1/2) w_e c_e |u_j - u_i|^p, so that
/// sum_i mu_i e_i is the total p-energy.
inline ScalarField vertex_energy_density(const WeightedDomain& domain, const ScalarField& u, double p) {
    require_length(u, domain.n(), "vertex_energy_density");
    if (!(p >= 1.0)) throw Error(ErrorKind::parameter, "vertex_energy_density needs p >= 1");
    ScalarField e(domain.n());
    const auto edges = domain.edges();
    for (std::size_t i = 0; i < domain.n(); ++i) {
        double acc = 0.0;
        for (const auto& inc : domain.incident(i)) {
            const double d = std::abs(u[inc.neighbor] - u[i]);
            acc += 0.5 * edges[inc.edge].coupling() * (p == 2.0 ? d * d : std::pow(d, p));
        }
        e[i] = acc / domain.measure(i);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Serialization: {n, mu, edges: [[i, j, w, c], ...], label}

inline nlohmann::ordered_json to_json(const WeightedDomain& d) {
    nlohmann::ordered_json j;
    j["n"] = d.n();
    j["mu"] = d.measure();
    auto edges = nlohmann::ordered_json::array();
    for (const Edge& e : d.edges()) edges.push_back({e.i, e.j, e.weight, e.conductance});
    j["edges"] = std::move(edges);
    j["label"] = d.label();
    return j;
}

inline WeightedDomain domain_from_json(const nlohmann::json& j) {
    try {
        const auto n = j.at("n").get<std::size_t>();
        auto mu = j.at("mu").get<std::vector<double>>();
        if (mu.size() != n) throw Error(ErrorKind::invalid_spec, "mu length differs from n");
        std::vector<Edge> edges;
        for (const auto& row : j.at("edges")) {
            if (!row.is_array() || row.size() != 4) throw Error(ErrorKind::invalid_spec, "edge rows are [i, j, w, c]");
            edges.push_back({row[0].get<std::size_t>(), row[1].get<std::size_t>(), row[2].get<double>(),
                             row[3].get<double>()});
        }
        return WeightedDomain(std::move(mu), std::move(edges), j.value("label", std::string{}));
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::invalid_spec, std::string("malformed domain JSON: ") + ex.what());
    }
}

} // namespace parafreq

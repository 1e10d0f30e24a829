#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace parafreq {

// splitmix64 finalizer; used to fan a master seed out into independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter scheme: derive_seed(master, {scenario, trajectory, stream}) is a pure
/// function of its arguments, so streams do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> counters) {
    std::uint64_t s = mix64(master);
    for (std::uint64_t c : counters) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
    return s;
}

/// mt19937_64 with a fixed real mapping. The standard distributions are
/// implementation-defined, so they are avoided to keep artifacts byte-stable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

private:
    std::mt19937_64 engine_;
};

} // namespace parafreq

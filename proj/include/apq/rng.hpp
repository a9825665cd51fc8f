#pragma once

#include <cstdint>
#include <random>

namespace apq {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` of a run started from `master`.
/// The map is fixed, so partition i always sees the same draws.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/**
 * Random source built on std::mt19937_64.
 *
 * The engine is fully specified by the C++ standard (including its
 * 10000th-output test value), and every derived variate below is computed
 * by code in this library rather than by <random> distributions, whose
 * algorithms are implementation-defined. Streams therefore reproduce
 * bit-for-bit across compilers and standard libraries.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal via the Marsaglia polar method.
    double normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double gamma(double shape);

    /// Chi-square with `dof` degrees of freedom.
    double chi_square(double dof) { return 2.0 * gamma(0.5 * dof); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace apq

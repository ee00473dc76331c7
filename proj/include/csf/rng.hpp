#pragma once

#include <cstdint>
#include <limits>

namespace csf {

/**
 * Counter-based, splittable pseudo-random generator.
 *
 * The n-th output of a stream is a pure function of (key, n): the SplitMix64
 * finalizer applied to key + n * golden-ratio increment. split(tag) derives an
 * independent child key, so subsystems (init, reparameterization, shuffling,
 * simulation) each draw from their own named stream and never perturb each
 * other. Satisfies UniformRandomBitGenerator, so <random> distributions work
 * on top of it.
 */
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    Rng split(std::uint64_t tag) const {
        Rng child;
        child.key_ = mix(key_ ^ mix(tag + 0xbb67ae8584caa73bULL));
        return child;
    }

    result_type operator()() { return mix(key_ + (counter_++) * kGolden); }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal draw.
    double normal();
    /// Gamma(shape, scale) draw.
    double gamma(double shape, double scale);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

/// Stable stream tags so call sites name what they draw for.
namespace rng_stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kReparam = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kBasin = 4;
inline constexpr std::uint64_t kForcing = 5;
inline constexpr std::uint64_t kProbe = 6;
}  // namespace rng_stream

}  // namespace csf

#pragma once

#include <cmath>
#include <cstdint>

namespace simpc {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so results do not depend on how work is
// partitioned across threads. Mixing is two rounds of the splitmix64
// finalizer over the combined key.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed, uint64_t stream = 0)
        : seed_(seed), stream_(stream) {}

    CounterRng fork(uint64_t substream) const {
        return CounterRng(seed_, mix(stream_ ^ 0x9e3779b97f4a7c15ull, substream));
    }

    uint64_t bits(uint64_t counter) const {
        return mix(mix(seed_, stream_), counter);
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01(uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform(uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * uniform01(counter);
    }

    // Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    // tiny relative to 2^64, bias is < n/2^64.
    uint64_t uniform_index(uint64_t counter, uint64_t n) const {
        return bits(counter) % n;
    }

    // Standard normal via Box-Muller; consumes counters 2c and 2c+1.
    double normal(uint64_t counter) const {
        double u1 = uniform01(2 * counter);
        double u2 = uniform01(2 * counter + 1);
        // guard log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Laplace(0, b) via inverse CDF.
    double laplace(uint64_t counter, double b) const {
        double u = uniform01(counter) - 0.5;
        double s = (u < 0.0) ? -1.0 : 1.0;
        double a = 1.0 - 2.0 * std::fabs(u);
        if (a <= 0.0) a = 0x1.0p-53;
        return -b * s * std::log(a);
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

private:
    uint64_t seed_;
    uint64_t stream_;
};

} // namespace simpc

#pragma once

#include <cmath>
#include <cstdint>

namespace ssc {

/// Counter-based 64-bit generator (splitmix64 stream). Every draw is a pure
/// function of (seed, counter), so streams are reproducible and can be forked
/// without sharing state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Box-Muller; draws exactly two uniforms per call.
    double normal(double mean, double sigma) {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(6.283185307179586 * u2);
    }

    /// Independent substream, keyed by id. The parent stream is not advanced.
    Rng fork(uint64_t id) const {
        uint64_t z = state_ ^ (0xD1B54A32D192ED03ull * (id + 1));
        z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDull;
        z = (z ^ (z >> 32)) * 0xC4CEB9FE1A85EC53ull;
        return Rng(z ^ (z >> 29));
    }

private:
    uint64_t state_;
};

} // namespace ssc

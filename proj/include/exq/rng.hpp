#pragma once

#include <cmath>
#include <cstdint>

namespace exq {

// splitmix64: tiny, portable, identical sequences on every platform/stdlib.
// std::*_distribution is implementation-defined, so seeded fixtures use this.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, deterministic.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // inverse CDF
    double exponential(double rate = 1.0) {
        double u = uniform();
        return -std::log(1.0 - u) / rate;
    }

    uint64_t below(uint64_t bound) { return next_u64() % bound; }

private:
    uint64_t state_;
};

} // namespace exq

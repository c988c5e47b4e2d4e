#pragma once

#include <cmath>
#include <cstdint>

namespace htc {

// splitmix64-based generator. Deterministic across platforms and compilers,
// which std::mt19937 + <random> distributions are not.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    double normal() {
        // Box-Muller; spare value intentionally discarded to keep the
        // stream independent of call parity.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Derive an independent stream, e.g. per sample or per run.
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0x632be59bd9b4e019ull * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

} // namespace htc

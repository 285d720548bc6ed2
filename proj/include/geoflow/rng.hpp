#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace geoflow {

// Seeded generator with library-owned transforms so draws are identical
// across standard library implementations (the std distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller. One draw per call; no cached spare so
    // the full state is the engine state.
    double normal();

    // Derive an independent child seed, e.g. per case or per sample.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

    std::string save_state() const;
    void load_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

}  // namespace geoflow

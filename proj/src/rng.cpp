#include "geoflow/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "geoflow/errors.hpp"

namespace geoflow {

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::load_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw DataError("corrupt RNG state");
}

}  // namespace geoflow

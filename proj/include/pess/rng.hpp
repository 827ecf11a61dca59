#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pess {

// Deterministic RNG with self-contained float construction so results do
// not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform01() {
        // 53-bit mantissa construction
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller, no cached spare so the draw count stays predictable
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    // Unbiased-enough index pick for small n.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

private:
    std::mt19937_64 engine_;
};

}  // namespace pess

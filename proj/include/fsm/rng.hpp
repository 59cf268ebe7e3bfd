#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fsm {

/// mt19937_64 with explicit float/gaussian derivation so streams are
/// reproducible across standard libraries (std::normal_distribution is
/// implementation-defined).
struct Rng {
    std::mt19937_64 g;
    bool have_spare = false;
    double spare = 0.0;

    explicit Rng(uint64_t seed) : g(seed) {}

    uint64_t next_u64() { return g(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(g() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(uniform() * static_cast<double>(n));
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare = r * std::sin(a);
        have_spare = true;
        return r * std::cos(a);
    }
};

}  // namespace fsm

#pragma once

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so results do not depend on thread scheduling or platform.

#include <cmath>
#include <cstdint>

#include "svae/linalg.hpp"

namespace svae {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash3(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return mix64(mix64(mix64(seed) ^ stream) ^ counter);
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    std::uint64_t next_u64() { return hash3(seed_, stream_, counter_++); }
    // uniform in (0, 1)
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }
    double normal() {
        const double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    Mat normal(int rows, int cols) {
        Mat m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }
    // index drawn from unnormalized probabilities p
    int categorical(const Vec& p) {
        const double u = uniform() * p.sum();
        double c = 0.0;
        for (int k = 0; k < p.size(); ++k) {
            c += p(k);
            if (u < c) return k;
        }
        return static_cast<int>(p.size()) - 1;
    }
    double gamma(double shape);  // Marsaglia-Tsang

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_, stream_;
    std::uint64_t counter_ = 0;
};

inline double CounterRng::gamma(double shape) {
    if (shape < 1.0) return gamma(shape + 1.0) * std::pow(uniform(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

}  // namespace svae

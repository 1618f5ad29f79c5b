#pragma once

#include <cstdint>
#include <random>

#include "lipforge/matrix.hpp"

namespace lipforge {

// Mixes (seed, index) into an independent stream seed (splitmix64 finalizer).
// Parallel samplers derive one stream per work item so results do not depend
// on how items are distributed over threads.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded wrapper over the standard Mersenne Twister. All randomness in the
// project flows through explicit Rng instances; there is no ambient RNG state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return unit_(eng_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double normal() { return normal_(eng_); }
    double normal(double mean, double sd) { return mean + sd * normal_(eng_); }
    std::size_t index(std::size_t bound) {  // uniform over [0, bound)
        return std::uniform_int_distribution<std::size_t>(0, bound - 1)(eng_);
    }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                                   double sd = 1.0) {
    DenseMatrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
    return m;
}

inline Vector gaussian_vector(std::size_t n, Rng& rng, double sd = 1.0) {
    Vector v(n);
    for (auto& x : v) x = sd * rng.normal();
    return v;
}

}  // namespace lipforge

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gradsam/errors.hpp"

namespace gradsam {

// Deterministic RNG wrapper. mt19937_64 output is fully specified by the
// standard; the derived samplers below are hand-rolled so results do not
// depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform index in [0, n).
    size_t index(size_t n) {
        if (n == 0) throw ContractError("Rng::index: n must be positive");
        return static_cast<size_t>(uniform01() * static_cast<double>(n)) % n;
    }

    size_t uniform_int(size_t lo, size_t hi) {  // inclusive bounds
        if (hi < lo) throw ContractError("Rng::uniform_int: empty range");
        return lo + index(hi - lo + 1);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    size_t categorical(const std::vector<double>& weights) {
        double total = 0;
        for (double w : weights) total += w;
        if (total <= 0) throw ContractError("Rng::categorical: weights must sum to > 0");
        double u = uniform01() * total;
        double acc = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

    // Fisher-Yates.
    template <typename V>
    void shuffle(V& v) {
        if (v.empty()) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

// splitmix64 step; used to derive independent per-record seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gradsam

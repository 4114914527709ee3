#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sgtrans {

// Deterministic random source. std::mt19937_64 has a fully specified output
// sequence, but the std distributions wrapped around it do not, so every
// mapping from raw bits to a usable value is spelled out here. Same seed,
// same stream, everywhere.
class rng {
  public:
    explicit rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::size_t uniform_int(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    // Fisher-Yates. std::shuffle is not seed-stable across standard libraries.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace sgtrans

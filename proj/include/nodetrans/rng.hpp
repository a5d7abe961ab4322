#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace nodetrans {

// One seeded stream per run, forked deterministically per consumer so that
// adding a consumer never shifts the draws of another.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(splitmix(seed)) {}

    Rng fork(std::string_view label) const {
        return Rng(splitmix(seed_ ^ fnv1a(label)));
    }
    Rng fork(std::string_view label, std::uint64_t n) const {
        return Rng(splitmix(seed_ ^ fnv1a(label) ^ (0x9e3779b97f4a7c15ULL * (n + 1))));
    }

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit mantissa; avoids distribution objects so draws are
    // identical across standard library implementations.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double std = 1.0) {
        // Box-Muller on raw uniforms, one draw per call (second value dropped).
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + std * z;
    }

    std::size_t index(std::size_t n) {
        // Rejection sampling keeps the draw unbiased and reproducible.
        std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do { x = eng_(); } while (x >= bound);
        return static_cast<std::size_t>(x % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

}  // namespace nodetrans

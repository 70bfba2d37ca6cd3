#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace logpeft {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Derives an independent generator from (seed, stream name). Every source of
/// randomness in the pipeline pulls from its own named stream so that adding
/// draws to one component never perturbs another.
inline std::mt19937_64 named_stream(std::uint64_t seed, std::string_view name) {
    std::uint64_t state = seed ^ detail::fnv1a(name);
    std::uint64_t a = detail::splitmix64(state);
    std::uint64_t b = detail::splitmix64(state);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

/// Uniform double in [0,1) with 53 random bits, independent of libstdc++
/// distribution internals.
inline double uniform_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be >= 1.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    return rng() % n;
}

/// Standard normal via Box-Muller; pinned implementation so seeded runs are
/// reproducible across standard libraries.
class GaussianSampler {
public:
    double operator()(std::mt19937_64& rng) {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_double(rng);
        double u2 = uniform_double(rng);
        while (u1 <= 0.0) u1 = uniform_double(rng);
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

private:
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Deterministic Fisher-Yates shuffle.
template <typename T>
void shuffle_vector(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace logpeft

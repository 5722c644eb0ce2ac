#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace sadvae {

/// Seeded random stream.
///
/// Wraps std::mt19937_64, whose output sequence is fixed by the standard, and
/// implements the derived distributions by hand so that every draw is
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound)
    {
        if (bound <= 1) {
            return 0;
        }
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % bound;
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Child stream whose seed is a SplitMix64 mix of this stream's next draw
    /// and the stream id.
    Rng fork(std::uint64_t stream_id) { return Rng(mix(engine_() ^ mix(stream_id + 0x9E3779B97F4A7C15ULL))); }

    static std::uint64_t mix(std::uint64_t z)
    {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Seed for an independent named stream derived from a base seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream_id) { return mix(mix(seed) ^ stream_id); }

    /// Fisher-Yates shuffle, swapping position i with below(i + 1) for i
    /// running from the back.
    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n)
    {
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) {
            perm[i] = i;
        }
        shuffle(std::span<std::size_t>(perm));
        return perm;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace sadvae

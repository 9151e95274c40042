#pragma once

// Counter-based random stream used for every seeded draw in the library.
//
// Algorithm: the i-th 64-bit output of the stream with key k is
//   splitmix64_finalize(k + i * 0x9E3779B97F4A7C15),   i = 1, 2, ...
// i.e. SplitMix64 with an explicit counter. Streams are split by hashing
// (key, stream id) into a fresh key, so child streams are independent of the
// order in which they are created. All variate generators below are written
// out explicitly so sequences are identical across platforms and compilers.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace osd {

inline constexpr std::uint64_t splitmix64_finalize(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed for child stream `stream` of `master`.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
    return splitmix64_finalize(master ^ splitmix64_finalize(stream + 0x632BE59BD9B4E019ULL));
}

class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return splitmix64_finalize(key_ + counter_ * kGamma);
    }

    CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(derive_seed(key_, stream)); }

    /// Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1).
    double uniform_open() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double a, double b) noexcept { return a + (b - a) * uniform(); }

    /// Standard normal via Box-Muller (one variate per call).
    double normal() noexcept {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Poisson variate: sequential inversion for mean < 10, PTRS
    /// (transformed rejection with squeeze) otherwise.
    std::int64_t poisson(double mean) noexcept {
        if (!(mean > 0.0)) return 0;
        if (mean < 10.0) return poisson_inversion(mean);
        return poisson_ptrs(mean);
    }

    /// Index in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::int64_t poisson_inversion(double mean) noexcept {
        const double u = uniform();
        double p = std::exp(-mean);
        double cdf = p;
        std::int64_t k = 0;
        while (u > cdf && k < 1000) {
            ++k;
            p *= mean / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }

    std::int64_t poisson_ptrs(double mean) noexcept {
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
        const double vr = 0.9277 - 3.6224 / (b - 2.0);
        for (;;) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::abs(u);
            const auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + mean + 0.43));
            if (us >= 0.07 && v <= vr) return k;
            if (k < 0 || (us < 0.013 && v > us)) continue;
            const double lhs = std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b);
            const double rhs = -mean + static_cast<double>(k) * loglam - std::lgamma(static_cast<double>(k) + 1.0);
            if (lhs <= rhs) return k;
        }
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace osd

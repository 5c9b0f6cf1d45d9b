#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace tffa {

// splitmix64 step; used both as a generator finalizer and to derive
// substream seeds from (seed, path...) without correlation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D4A2C62A2B564DULL;
    return z ^ (z >> 31);
}

// Deterministic substream of a root seed. Streams are addressed by an
// integer path (kind tag, subject index, ...), so subject-level work can
// be farmed out in any order while reproducing the serial result bit for
// bit. All distribution transforms are implemented here (not via
// std::*_distribution) to keep the byte stream implementation-independent.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = seed;
        (void)splitmix64(s);
        for (std::uint64_t p : path) {
            s ^= p + 0x9E3779B97F4A7C15ULL + (s << 6) + (s >> 2);
            (void)splitmix64(s);
        }
        return RngStream(splitmix64(s));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range, rejection sampling for exactness.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    // Standard normal via Box-Muller; pairs are cached so consumption of
    // the underlying stream is fixed at two uniforms per pair.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    Eigen::VectorXd normal_vec(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

private:
    std::mt19937_64 engine_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// Stream tags used when deriving named substreams; kept in one place so
// generators never collide.
namespace rng_tag {
constexpr std::uint64_t loading_coeffs = 1;
constexpr std::uint64_t factors = 2;
constexpr std::uint64_t local_errors = 3;
constexpr std::uint64_t completion = 4;
constexpr std::uint64_t rotation = 5;
constexpr std::uint64_t randomized_svd = 6;
constexpr std::uint64_t study = 7;
}  // namespace rng_tag

}  // namespace tffa

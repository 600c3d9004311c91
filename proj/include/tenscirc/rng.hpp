#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tenscirc {

/// Pinned, cross-platform PRNG: xoshiro256** seeded through splitmix64.
/// All randomness in the library flows through this generator so that every
/// operation is reproducible bit-for-bit from a 64-bit seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection-free bound via 128-bit multiply would do,
        // but plain modulo over 2^64 is bias-free enough only for small n;
        // use rejection sampling to stay exact.
        if (n == 0) {
            throw std::invalid_argument("Rng::below: n must be positive");
        }
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

    /// Standard normal via inverse-CDF (Wichura AS241-style rational
    /// approximation), keeping draws reproducible across platforms.
    double gaussian() {
        double u = uniform();
        if (u <= 0.0) {
            u = 0x1.0p-53;
        }
        return norm_inv_cdf(u);
    }

    /// Index draw from unnormalized non-negative weights.
    std::size_t categorical(const double* w, std::size_t n) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            total += w[i];
        }
        if (!(total > 0.0)) {
            throw std::runtime_error("Rng::categorical: weights sum to zero");
        }
        const double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += w[i];
            if (u < acc) {
                return i;
            }
        }
        return n - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent sub-seed; used to shard work across streams.
    static std::uint64_t split(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (index + 1));
        return splitmix64(x);
    }

    static double norm_inv_cdf(double p);

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

}  // namespace tenscirc

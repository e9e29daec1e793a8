#pragma once

// Deterministic random streams.
//
// Two flavours: a counter-based generator, where the value for element i of
// stream (seed, step, op) is a pure function of those four integers (used for
// dropout masks and reparameterization noise, so a backward pass can regenerate
// exactly the draws of the forward pass), and a small sequential generator for
// shuffling, initialization and simulation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace fragmix {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(seed) ^ (tag * 0xD1342543DE82EF95ull + 1));
}

inline double u64_to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

struct CounterKey {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::uint64_t op = 0;

    std::uint64_t bits(std::uint64_t index) const noexcept {
        std::uint64_t h = splitmix64(seed ^ 0x243F6A8885A308D3ull);
        h = splitmix64(h ^ step);
        h = splitmix64(h ^ (op * 0x9E3779B97F4A7C15ull));
        return splitmix64(h ^ index);
    }
    double uniform(std::uint64_t index) const noexcept { return u64_to_unit(bits(index)); }
    // Standard normal via Box-Muller on two independent counter draws.
    double normal(std::uint64_t index) const noexcept {
        const double u1 = 1.0 - uniform(2 * index);  // (0, 1]
        const double u2 = uniform(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
};

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    double uniform() noexcept { return u64_to_unit(next_u64()); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n) noexcept {
        // Top 53 bits scaled; bias is below n * 2^-53.
        return static_cast<std::size_t>(static_cast<double>(next_u64() >> 11) * 0x1.0p-53 * static_cast<double>(n));
    }
    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace fragmix

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "msxt/errors.hpp"

// Deterministic, platform-independent randomness.
//
// All stochastic pieces of the pipeline (weight init, data generation,
// augmentation, dropout, loss pair sampling, shuffling) draw from RngStream
// instances derived from a single root seed via RngTree::stream(label, index).
// Distinct (label, index) pairs give independent streams, so results do not
// depend on evaluation order or worker scheduling. std::random distributions
// are deliberately avoided: their output is implementation-defined.

namespace msxt {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// Counter-based generator: output i is a pure function of (state0, i).
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t out = detail::splitmix64(state_);
        state_ += 0x9e3779b97f4a7c15ULL;
        return out;
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw ContractError("next_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        // Multiply-shift rejection-free mapping; bias is < 2^-64 * span,
        // negligible for the range sizes used here.
        const std::uint64_t r = next_u64();
        const unsigned __int128 prod = static_cast<unsigned __int128>(r) * span;
        return lo + static_cast<std::int64_t>(prod >> 64);
    }

    // Standard normal via Box-Muller. Draws two uniforms per call and
    // discards the second variate so the draw count per call is fixed.
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586477 * u2);
    }

    bool next_bernoulli(double p) { return next_uniform() < p; }

  private:
    std::uint64_t state_;
};

// Root of the seed-derivation hierarchy.
class RngTree {
  public:
    explicit RngTree(std::uint64_t root) : root_(root) {}

    RngStream stream(std::string_view label, std::uint64_t index) const {
        std::uint64_t h = detail::fnv1a64(label);
        h = detail::splitmix64(h ^ root_);
        h = detail::splitmix64(h ^ index);
        return RngStream(h);
    }

    std::uint64_t root() const { return root_; }

  private:
    std::uint64_t root_;
};

}  // namespace msxt

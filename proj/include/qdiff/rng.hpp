#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qdiff {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/**
 * Derive the seed of a named stream from the master seed.
 *
 * seed(stream) = mix64(master ^ mix64(fnv1a(stream))). Every random consumer
 * in a run (init, init.quantum, batching, noise, sampling, metric) draws from
 * its own stream, so changing how much one consumer draws never shifts the
 * numbers another consumer sees.
 */
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::string_view stream) noexcept {
    return mix64(master ^ mix64(fnv1a(stream)));
}

/// Seeded 64-bit Mersenne twister with the few draws the pipeline needs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    /// Uniform integer in the closed range [lo, hi].
    int uniform_int(int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }

    std::mt19937_64 &engine() noexcept { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace qdiff

#pragma once

#include <cstdint>
#include <random>

namespace asca {

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    // Integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }
    double beta(double alpha, double beta_param) {
        const double x = std::gamma_distribution<double>(alpha, 1.0)(engine_);
        const double y = std::gamma_distribution<double>(beta_param, 1.0)(engine_);
        if (x + y <= 0.0) return 0.5;
        return x / (x + y);
    }
    // Normal truncated to [-2 std, 2 std] by rejection.
    double truncated_normal(double stddev) {
        for (;;) {
            const double v = normal(0.0, 1.0);
            if (v >= -2.0 && v <= 2.0) return v * stddev;
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace asca

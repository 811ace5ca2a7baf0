#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace mmfuse {

// The standard distributions are implementation-defined, so draws are built
// directly on the 64-bit engine output to keep files identical across
// toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Draws indices with replacement, proportional to nonnegative weights.
class WeightedSampler {
public:
    explicit WeightedSampler(std::span<const double> weights);
    std::size_t draw(Rng& rng) const;
    std::size_t size() const { return cumulative_.size(); }

private:
    std::vector<double> cumulative_;
};

/// Derives an independent stage seed from a global seed and a stage name.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

}  // namespace mmfuse

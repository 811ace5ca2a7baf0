#include "mmfuse/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmfuse/error.hpp"
#include "mmfuse/hash.hpp"

namespace mmfuse {

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

WeightedSampler::WeightedSampler(std::span<const double> weights) {
    if (weights.empty()) throw ValidationError("weighted sampler: no weights");
    cumulative_.reserve(weights.size());
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weighted sampler: weights must be finite and >= 0");
        total += w;
        cumulative_.push_back(total);
    }
    if (total <= 0.0) throw ValidationError("weighted sampler: all weights are zero");
}

std::size_t WeightedSampler::draw(Rng& rng) const {
    const double target = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
    std::string material = std::to_string(global_seed);
    material.push_back(':');
    material.append(stage);
    return digest_prefix_u64(material);
}

}  // namespace mmfuse

#include "mmfuse/aggregate.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "mmfuse/error.hpp"

namespace mmfuse::aggregate {

void EmbeddingBag::validate() const {
    if (instances.rows() == 0) throw ValidationError(fmt::format("bag '{}' has no instances", patient_id));
    if (!instances.allFinite()) throw ValidationError(fmt::format("bag '{}' has non-finite entries", patient_id));
}

Eigen::RowVectorXd mean_pool(const EmbeddingBag& bag) {
    bag.validate();
    return bag.instances.colwise().mean();
}

Eigen::RowVectorXd max_weight_instance(const EmbeddingBag& bag, std::span<const double> weights) {
    bag.validate();
    if (weights.size() != static_cast<std::size_t>(bag.instances.rows()))
        throw ValidationError(fmt::format("bag '{}': {} weights for {} instances", bag.patient_id, weights.size(),
                                          bag.instances.rows()));
    const auto best = std::max_element(weights.begin(), weights.end()) - weights.begin();
    return bag.instances.row(best);
}

Eigen::RowVectorXd two_stage_mean(std::span<const EmbeddingBag> slides) {
    if (slides.empty()) throw ValidationError("two_stage_mean: no slides");
    const Eigen::Index width = slides.front().instances.cols();
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(width);
    for (const auto& s : slides) {
        if (s.instances.cols() != width)
            throw ValidationError(fmt::format("two_stage_mean: slide width {} differs from {}", s.instances.cols(), width));
        acc += mean_pool(s);
    }
    return acc / static_cast<double>(slides.size());
}

Eigen::RowVectorXd highest_weight_slide(std::span<const EmbeddingBag> slides, std::span<const double> weights) {
    if (slides.empty()) throw ValidationError("highest_weight_slide: no slides");
    if (weights.size() != slides.size())
        throw ValidationError(fmt::format("highest_weight_slide: {} weights for {} slides", weights.size(), slides.size()));
    const auto best = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
    return mean_pool(slides[best]);
}

double max_prob_inference(std::span<const double> instance_probs) {
    if (instance_probs.empty()) throw ValidationError("max_prob_inference: no instances");
    for (double p : instance_probs)
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(fmt::format("max_prob_inference: probability {} outside [0, 1]", p));
    return *std::max_element(instance_probs.begin(), instance_probs.end());
}

int patient_label(std::span<const double> instance_probs, double threshold) {
    return max_prob_inference(instance_probs) >= threshold ? 1 : 0;
}

Grouping group_rows(std::span<const std::string> keys) {
    Grouping g;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto [it, inserted] = index.emplace(keys[i], g.keys.size());
        if (inserted) {
            g.keys.push_back(keys[i]);
            g.rows.emplace_back();
        }
        g.rows[it->second].push_back(i);
    }
    return g;
}

}  // namespace mmfuse::aggregate

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmfuse::aggregate {

enum class InstanceKind { scan, slide, patch_aggregate };

/// Instances of one patient as rows of equal width.
struct EmbeddingBag {
    std::string patient_id;
    Eigen::MatrixXd instances;
    InstanceKind kind = InstanceKind::scan;

    void validate() const;  // >= 1 instance, finite entries
};

/// Elementwise mean over instances.
Eigen::RowVectorXd mean_pool(const EmbeddingBag& bag);

/// Instance with the largest weight (ties to the earliest).
Eigen::RowVectorXd max_weight_instance(const EmbeddingBag& bag, std::span<const double> weights);

/// Mean of per-slide means: every slide counts once whatever its patch count.
Eigen::RowVectorXd two_stage_mean(std::span<const EmbeddingBag> slides);

/// Mean of the slide with the largest weight (e.g. an external attention score).
Eigen::RowVectorXd highest_weight_slide(std::span<const EmbeddingBag> slides, std::span<const double> weights);

/// Patient score is the largest instance probability.
double max_prob_inference(std::span<const double> instance_probs);

/// Patient label: 1 iff the max instance probability reaches the threshold.
int patient_label(std::span<const double> instance_probs, double threshold = 0.5);

/// Groups rows that share a key (in first-seen order), e.g. scans of one patient.
struct Grouping {
    std::vector<std::string> keys;
    std::vector<std::vector<std::size_t>> rows;
};
Grouping group_rows(std::span<const std::string> keys);

}  // namespace mmfuse::aggregate

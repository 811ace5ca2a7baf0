#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>

namespace mmfuse::neural {

/// Scalar loss plus its gradient with respect to the logits.
struct LossResult {
    double value = 0.0;
    Eigen::MatrixXd grad;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Class-weighted cross-entropy averaged over samples: (1/n) sum_i w[y_i] * CE_i.
/// Weights are not renormalized, so scaling them scales the loss.
/// Accepts one logit (sigmoid head) or two logits (softmax head) per row.
/// Label smoothing mixes the one-hot target with the uniform distribution.
LossResult weighted_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                  const std::array<double, 2>& class_weights, double label_smoothing = 0.0);

/// Mean binary cross-entropy with the positive term scaled by pos_weight. One logit per row.
LossResult bce_pos_weight(const Eigen::MatrixXd& logits, std::span<const int> labels, double pos_weight);

/// log(p / (1 - p)).
double logit(double p);

}  // namespace mmfuse::neural

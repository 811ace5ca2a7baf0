#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "mmfuse/neural/mlp.hpp"

namespace mmfuse::neural {

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update with decoupled weight decay:
/// p <- p * (1 - lr * wd), then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// `lr` overrides config.lr so a scheduler can drive it.
/// Throws NumericError naming the first tensor with a non-finite gradient.
void adam_step(std::span<const NamedTensor> params, std::span<const Eigen::MatrixXd> grads, AdamState& state,
               const AdamConfig& config, double lr);

/// lr * gamma^floor(epoch / step).
double step_decay(double base_lr, std::size_t epoch, std::size_t step, double gamma);

}  // namespace mmfuse::neural

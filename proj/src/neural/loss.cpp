#include "mmfuse/neural/loss.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "mmfuse/error.hpp"

namespace mmfuse::neural {
namespace {

const double kLogFloor = std::log(kProbabilityFloor);

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check(const Eigen::MatrixXd& logits, std::span<const int> labels) {
    if (logits.rows() == 0) throw ValidationError("loss: empty batch");
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw ValidationError(fmt::format("loss: {} logit rows vs {} labels", logits.rows(), labels.size()));
    for (int y : labels)
        if (y != 0 && y != 1) throw ValidationError("loss: labels must be 0/1");
}

}  // namespace

double logit(double p) { return std::log(p) - std::log1p(-p); }

LossResult weighted_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                  const std::array<double, 2>& class_weights, double label_smoothing) {
    check(logits, labels);
    if (!(class_weights[0] > 0.0 && class_weights[1] > 0.0)) throw ValidationError("loss: class weights must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 0.5)) throw ValidationError("loss: label smoothing outside [0, 0.5)");
    const double n = static_cast<double>(logits.rows());
    LossResult out;
    out.grad.resizeLike(logits);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double w = class_weights[static_cast<std::size_t>(y)];
        // Smoothed target probability of class 1.
        const double t = y * (1.0 - label_smoothing) + 0.5 * label_smoothing;
        if (logits.cols() == 1) {
            const double z = logits(i, 0);
            const double log_p1 = std::max(-softplus(-z), kLogFloor);
            const double log_p0 = std::max(-softplus(z), kLogFloor);
            total += -w * (t * log_p1 + (1.0 - t) * log_p0);
            out.grad(i, 0) = w * (sigmoid(z) - t) / n;
        } else if (logits.cols() == 2) {
            const double z0 = logits(i, 0), z1 = logits(i, 1);
            const double m = std::max(z0, z1);
            const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
            const double log_p0 = std::max(z0 - lse, kLogFloor);
            const double log_p1 = std::max(z1 - lse, kLogFloor);
            total += -w * ((1.0 - t) * log_p0 + t * log_p1);
            const double p1 = std::exp(z1 - lse);
            const double p0 = std::exp(z0 - lse);
            out.grad(i, 0) = w * (p0 - (1.0 - t)) / n;
            out.grad(i, 1) = w * (p1 - t) / n;
        } else {
            throw ValidationError("loss: expected one or two logits per row");
        }
    }
    out.value = total / n;
    return out;
}

LossResult bce_pos_weight(const Eigen::MatrixXd& logits, std::span<const int> labels, double pos_weight) {
    check(logits, labels);
    if (logits.cols() != 1) throw ValidationError("bce_pos_weight: expects a single logit per row");
    if (!(pos_weight > 0.0)) throw ValidationError("bce_pos_weight: pos_weight must be positive");
    const double n = static_cast<double>(logits.rows());
    LossResult out;
    out.grad.resizeLike(logits);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double y = labels[static_cast<std::size_t>(i)];
        const double z = logits(i, 0);
        const double log_p1 = std::max(-softplus(-z), kLogFloor);
        const double log_p0 = std::max(-softplus(z), kLogFloor);
        total += -(pos_weight * y * log_p1 + (1.0 - y) * log_p0);
        const double p = sigmoid(z);
        out.grad(i, 0) = (p * (pos_weight * y + 1.0 - y) - pos_weight * y) / n;
    }
    out.value = total / n;
    return out;
}

}  // namespace mmfuse::neural

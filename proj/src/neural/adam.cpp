#include "mmfuse/neural/adam.hpp"

#include <fmt/format.h>

#include <cmath>

#include "mmfuse/error.hpp"

namespace mmfuse::neural {

void adam_step(std::span<const NamedTensor> params, std::span<const Eigen::MatrixXd> grads, AdamState& state,
               const AdamConfig& config, double lr) {
    if (params.size() != grads.size())
        throw ValidationError(fmt::format("adam: {} parameters vs {} gradients", params.size(), grads.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols())
            throw ValidationError(fmt::format("adam: gradient shape mismatch for '{}'", params[i].name));
        if (!grads[i].allFinite()) throw NumericError(fmt::format("adam: non-finite gradient in '{}'", params[i].name));
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
            state.v.push_back(Eigen::MatrixXd::Zero(p.value->rows(), p.value->cols()));
        }
    }
    if (state.m.size() != params.size()) throw ValidationError("adam: state does not match the parameter list");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i].value;
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
        if (config.weight_decay != 0.0) p *= 1.0 - lr * config.weight_decay;
        p.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.eps);
    }
}

double step_decay(double base_lr, std::size_t epoch, std::size_t step, double gamma) {
    if (step == 0) return base_lr;
    return base_lr * std::pow(gamma, static_cast<double>(epoch / step));
}

}  // namespace mmfuse::neural

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mmfuse/random.hpp"

namespace mmfuse::neural {

enum class OutputKind {
    sigmoid,   // one logit, p = sigmoid(z)
    softmax2,  // two logits, p = softmax(z)[1]
};

/// Layer sizes run input -> hidden... -> output units (1 for sigmoid, 2 for softmax2).
/// Hidden layers are Linear -> [BatchNorm] -> ReLU -> [Dropout].
struct MlpSpec {
    std::vector<std::size_t> layer_sizes;
    std::vector<double> dropout;     // one rate per hidden layer, in [0, 1)
    std::vector<bool> batch_norm;    // one flag per hidden layer
    OutputKind output = OutputKind::sigmoid;
    double label_smoothing = 0.0;    // in [0, 0.5)

    std::size_t hidden_count() const { return layer_sizes.size() < 2 ? 0 : layer_sizes.size() - 2; }
    std::size_t input_size() const { return layer_sizes.front(); }

    void validate() const;  // throws ValidationError
};

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);

struct Layer {
    Eigen::MatrixXd weight;  // fan_in x fan_out
    Eigen::MatrixXd bias;    // 1 x fan_out
    bool batch_norm = false;
    Eigen::MatrixXd bn_scale;  // 1 x fan_out
    Eigen::MatrixXd bn_shift;
    Eigen::MatrixXd running_mean;
    Eigen::MatrixXd running_var;
};

inline constexpr double kBatchNormEps = 1e-5;

struct MlpModel {
    MlpSpec spec;
    std::vector<Layer> layers;  // hidden layers then the output layer
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; unit BN scale.
MlpModel make_model(const MlpSpec& spec, std::uint64_t seed);

/// Non-owning view of one parameter tensor.
struct NamedTensor {
    std::string name;
    Eigen::MatrixXd* value;
};

/// Trainable tensors in a fixed order: per layer weight, bias, then BN scale/shift.
std::vector<NamedTensor> trainable(MlpModel& model);

/// All tensors in storage order (trainable plus BN running statistics).
std::vector<NamedTensor> all_tensors(MlpModel& model);

enum class Mode { train, eval };

struct HiddenCache {
    Eigen::MatrixXd input;       // layer input
    Eigen::MatrixXd normalized;  // BN x-hat (train: batch stats, eval: running stats)
    Eigen::RowVectorXd inv_std;
    Eigen::RowVectorXd batch_mean;
    Eigen::RowVectorXd batch_var;  // biased
    Eigen::MatrixXd pre_relu;    // after linear (+BN)
    Eigen::MatrixXd mask;        // dropout keep mask scaled by 1/(1-p); empty when inactive
    Eigen::MatrixXd output;      // post ReLU and dropout
};

struct ForwardCache {
    Mode mode = Mode::eval;
    std::vector<HiddenCache> hidden;
    Eigen::MatrixXd final_input;
    Eigen::MatrixXd logits;
    Eigen::VectorXd probs;  // P(class 1) per row
};

/// Inverted-dropout keep masks for a batch, one per hidden layer (empty when rate is 0).
std::vector<Eigen::MatrixXd> sample_dropout_masks(const MlpSpec& spec, Eigen::Index batch, Rng& rng);

/// Train mode draws dropout masks from `rng` (required when any rate > 0) and
/// uses batch statistics for BN, which needs at least two rows.
ForwardCache forward(const MlpModel& model, const Eigen::MatrixXd& x, Mode mode, Rng* rng = nullptr);

/// Train-mode forward with caller-supplied dropout masks.
ForwardCache forward_with_masks(const MlpModel& model, const Eigen::MatrixXd& x, const std::vector<Eigen::MatrixXd>& masks);

struct Gradients {
    std::vector<Eigen::MatrixXd> tensors;  // matches trainable() order
    Eigen::MatrixXd input;                 // dLoss/dx
};

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Eigen::MatrixXd& grad_logits);

/// Exponential moving average of BN batch statistics (unbiased variance).
void update_running_stats(MlpModel& model, const ForwardCache& cache, double momentum);

/// Eval-mode P(class 1).
Eigen::VectorXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& x);

/// Eval-mode post-activation output of hidden layer `layer_index` (0-based).
Eigen::MatrixXd extract_embedding(const MlpModel& model, const Eigen::MatrixXd& x, std::size_t layer_index);

}  // namespace mmfuse::neural

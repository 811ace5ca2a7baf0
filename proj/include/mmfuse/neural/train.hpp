#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/neural/adam.hpp"
#include "mmfuse/neural/mlp.hpp"

namespace mmfuse::neural {

enum class LossKind { weighted_ce, bce_pos_weight };
enum class SamplerKind { plain, balanced };
enum class Selection { val_balanced_accuracy, val_loss, last };

struct TrainConfig {
    LossKind loss = LossKind::weighted_ce;
    std::optional<std::array<double, 2>> class_weights;  // default: n / (2 * n_class) on the training fold
    std::optional<double> pos_weight;                    // default: negatives / positives on the training fold
    AdamConfig adam;
    std::size_t scheduler_step = 20;  // 0 disables decay
    double scheduler_gamma = 0.5;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::optional<std::size_t> patience;  // early stopping on validation loss
    SamplerKind sampler = SamplerKind::plain;
    double feature_noise_sigma = 0.0;
    Selection selection = Selection::val_balanced_accuracy;
    double bn_momentum = 0.1;
    double threshold = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
    std::size_t epoch;  // 1-based
    double train_loss;
    double train_acc;
    double val_loss;
    double val_bal_acc;
    double lr;
};

struct TrainResult {
    MlpModel model;  // snapshot from best_epoch under the selection rule
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

/// Mini-batch training with Adam, step decay, optional balanced sampling,
/// Gaussian input noise and early stopping. Deterministic for a given seed.
/// Throws NumericError with the epoch index if the loss becomes non-finite.
TrainResult train(MlpModel model, const Eigen::MatrixXd& x_train, std::span<const int> y_train,
                  const Eigen::MatrixXd& x_val, std::span<const int> y_val, const TrainConfig& config);

/// Eval-mode loss of `model` under the loss settings of `config`, resolved against
/// the class balance of `y_ref`.
double evaluate_loss(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const int> y, const TrainConfig& config,
                     std::span<const int> y_ref);

std::string history_csv(std::span<const EpochRecord> history);

}  // namespace mmfuse::neural

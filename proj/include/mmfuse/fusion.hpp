#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/features.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/neural/mlp.hpp"
#include "mmfuse/neural/train.hpp"
#include "mmfuse/tabular.hpp"

namespace mmfuse::fusion {

/// Fixed modality order used in every fused layout.
enum class Modality : std::size_t { clinical = 0, radiology = 1, histology = 2 };
inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<std::size_t, kModalityCount> kDefaultWidths{64, 512, 1024};
inline constexpr std::array<std::string_view, kModalityCount> kModalityNames{"clinical", "radiology", "histology"};

std::optional<Modality> parse_modality(std::string_view name);

enum class Strategy { early_concat, early_mean_pool, late_weighted_sum, late_learned };
enum class MissingPolicy { renormalize, zero_impute, learned_default };

Strategy parse_strategy(std::string_view text);
std::string_view to_string(Strategy s);
MissingPolicy parse_policy(std::string_view text);
std::string_view to_string(MissingPolicy p);

/// Per-modality embeddings and/or probabilities over one patient universe.
/// A patient is present in a modality when either table lists it.
class ModalityBundle {
public:
    ModalityBundle() = default;
    ModalityBundle(std::array<std::optional<FeatureTable>, kModalityCount> features,
                   std::array<std::optional<ProbabilityTable>, kModalityCount> probs,
                   std::array<std::size_t, kModalityCount> widths = kDefaultWidths);

    /// Restricts and orders the universe; every listed patient needs >= 1 modality.
    void set_patients(std::vector<std::string> patients);

    const std::vector<std::string>& patients() const { return patients_; }
    std::size_t size() const { return patients_.size(); }
    bool present(std::size_t patient, Modality m) const { return mask_[patient][static_cast<std::size_t>(m)]; }
    std::size_t width(Modality m) const { return widths_[static_cast<std::size_t>(m)]; }
    bool has_features(Modality m) const { return features_[static_cast<std::size_t>(m)].has_value(); }
    bool has_probabilities(Modality m) const { return probs_[static_cast<std::size_t>(m)].has_value(); }

    /// Embedding row; zeros when the patient lacks this modality.
    Eigen::RowVectorXd embedding(std::size_t patient, Modality m) const;
    /// Probability for a present patient.
    double probability(std::size_t patient, Modality m) const;

    void set_probabilities(Modality m, ProbabilityTable t);

    /// Patients listed in some modality table but not in `ids`.
    std::vector<std::string> orphans(std::span<const std::string> ids) const;

private:
    void rebuild_mask();

    std::array<std::optional<FeatureTable>, kModalityCount> features_;
    std::array<std::optional<ProbabilityTable>, kModalityCount> probs_;
    std::array<std::unordered_map<std::string, std::size_t>, kModalityCount> prob_index_;
    std::array<std::size_t, kModalityCount> widths_ = kDefaultWidths;
    std::vector<std::string> patients_;
    std::vector<std::array<bool, kModalityCount>> mask_;
};

/// Concatenates (clinical, radiology, histology) blocks then three presence bits.
/// Missing blocks are zeros (zero_impute) or `defaults[m]` (learned_default).
FeatureTable early_concat(const ModalityBundle& bundle, MissingPolicy policy = MissingPolicy::zero_impute,
                          const std::array<Eigen::RowVectorXd, kModalityCount>* defaults = nullptr);

/// Column range of one modality block inside an early_concat table.
Eigen::MatrixXd slice_block(const FeatureTable& fused, const ModalityBundle& bundle, Modality m);

/// Per-modality mean embedding over the given patients (learned-default fill values).
std::array<Eigen::RowVectorXd, kModalityCount> modality_means(const ModalityBundle& bundle,
                                                              std::span<const std::size_t> patients);

struct Projection {
    Eigen::MatrixXd weight;  // width x projection_dim
    Eigen::MatrixXd bias;    // 1 x projection_dim
};

/// Mean over present modalities of x_m * W_m + b_m.
FeatureTable early_mean_pool(const ModalityBundle& bundle, const std::array<Projection, kModalityCount>& projections);

/// Normalizes nonnegative weights to sum to exactly 1 on a 2^-32 grid, so any
/// positive rescaling of the input yields the same weights and normalizing
/// twice changes nothing.
std::array<double, kModalityCount> normalize_weights(const std::array<double, kModalityCount>& raw);

/// Weights go through normalize_weights first. Then
/// fused = sum_present w_m p_m / sum_present w_m (renormalize) or
/// sum_present w_m p_m / sum_all w_m (zero_impute), clamped to [min p, max p].
std::vector<double> late_weighted_sum(const ModalityBundle& bundle, const std::array<double, kModalityCount>& weights,
                                      MissingPolicy policy = MissingPolicy::renormalize);

/// Rows of [p_clinical, p_radiology, p_histology, mask bits]; missing p is 0.
Eigen::MatrixXd late_inputs(const ModalityBundle& bundle);

/// [6 -> 8 -> 1] sigmoid head, 100 epochs, selection on validation balanced accuracy.
neural::MlpSpec late_head_spec();
neural::TrainConfig late_head_config(std::uint64_t seed);

struct LateLearnedResult {
    neural::TrainResult trained;
    std::vector<double> fused;  // for every bundle patient
};

LateLearnedResult late_learned(const ModalityBundle& bundle, std::span<const int> labels,
                               std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                               const neural::TrainConfig& config, std::uint64_t init_seed);

/// Per-modality linear projections trained jointly with a classifier head.
struct MeanPoolModel {
    std::array<Projection, kModalityCount> projections;
    neural::MlpModel head;
};

struct MeanPoolResult {
    MeanPoolModel model;
    std::vector<neural::EpochRecord> history;
    std::vector<double> fused;  // for every bundle patient
};

MeanPoolResult train_mean_pool(const ModalityBundle& bundle, std::span<const int> labels,
                               std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                               std::size_t projection_dim, const neural::MlpSpec& head_spec,
                               const neural::TrainConfig& config, std::uint64_t init_seed);

/// Two-stage run: per-modality baselines, then the requested fusions, on one
/// shared stratified patient split.
struct ExperimentConfig {
    std::array<double, 3> split_fractions = tabular::kDefaultSplitFractions;
    std::size_t baseline_hidden = 64;
    double baseline_dropout = 0.3;
    double label_smoothing = 0.05;
    neural::TrainConfig train;
    std::vector<Strategy> strategies{Strategy::late_weighted_sum, Strategy::early_concat};
    MissingPolicy concat_policy = MissingPolicy::zero_impute;
    std::size_t projection_dim = 128;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Two-layer baseline classifier: input -> hidden (dropout) -> 2 logits, label smoothing.
neural::MlpSpec baseline_spec(std::size_t input, const ExperimentConfig& c);

struct ExperimentRow {
    std::string model;
    metrics::EvalReport report;
    std::size_t test_patients = 0;
};

struct ExperimentResult {
    std::vector<ExperimentRow> rows;
    std::array<double, kModalityCount> validation_ba{};
    std::array<double, kModalityCount> weights{};
    tabular::SplitIndices split;
    std::vector<std::string> patients;
    std::vector<std::pair<std::string, std::vector<double>>> fused;  // per fusion strategy, per patient
};

ExperimentResult run_fusion_experiment(const ModalityBundle& bundle, const LabelTable& labels, const ExperimentConfig& c);

std::string_view row_name(Strategy s);
std::string_view baseline_name(Modality m);

nlohmann::json to_json(const ExperimentResult& r);
std::string render_experiment_table(const ExperimentResult& r);

}  // namespace mmfuse::fusion

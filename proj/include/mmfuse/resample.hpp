#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mmfuse::resample {

enum class Method { none, smote, adasyn };

Method parse_method(std::string_view text);
std::string_view to_string(Method m);

struct ResamplePlan {
    Method method = Method::smote;
    std::size_t k_neighbors = 5;
    double target_ratio = 1.0;  // minority/majority after resampling; 1 = full balance
    std::uint64_t seed = 0;
};

/// Where a synthetic row came from: seed + u * (neighbor - seed).
struct SyntheticOrigin {
    std::size_t seed_row;
    std::size_t neighbor_row;
    double u;
};

/// Original rows first, unchanged and in order, then synthetic minority rows.
struct ResampleResult {
    Eigen::MatrixXd X;
    std::vector<int> y;
    std::vector<SyntheticOrigin> origins;
    int minority_label = 1;
};

ResampleResult smote(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan);
ResampleResult adasyn(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan);

/// Dispatches on plan.method; `none` returns the input unchanged.
ResampleResult apply(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan);

/// Splits `total` proportionally to nonnegative weights: floor shares, then the
/// leftover units go to the largest fractional parts (ties to the lower index).
std::vector<std::size_t> allocate(std::span<const double> weights, std::size_t total);

/// Per-minority-row share of majority rows among its k nearest neighbors
/// (searched over all rows), in minority row order.
std::vector<double> adasyn_difficulty(const Eigen::MatrixXd& X, std::span<const int> y, int minority_label,
                                      std::size_t k);

/// Inverse class frequency per sample.
std::vector<double> class_balance_weights(std::span<const int> y);

}  // namespace mmfuse::resample

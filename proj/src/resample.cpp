#include "mmfuse/resample.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mmfuse/error.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse::resample {
namespace {

struct ClassCounts {
    int minority;
    std::size_t n_minority;
    std::size_t n_majority;
};

ClassCounts count_classes(const Eigen::MatrixXd& X, std::span<const int> y) {
    if (static_cast<std::size_t>(X.rows()) != y.size())
        throw ValidationError(fmt::format("resample: {} rows vs {} labels", X.rows(), y.size()));
    std::size_t ones = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw ValidationError(fmt::format("resample: label {} at row {} is not binary", y[i], i));
        ones += static_cast<std::size_t>(y[i]);
    }
    const std::size_t zeros = y.size() - ones;
    if (ones == 0 || zeros == 0) throw ValidationError("resample: input contains a single class");
    if (ones <= zeros) return {1, ones, zeros};
    return {0, zeros, ones};
}

void validate_plan(const ResamplePlan& plan, const ClassCounts& cc) {
    if (!(plan.target_ratio > 0.0 && plan.target_ratio <= 1.0))
        throw ValidationError(fmt::format("resample: target_ratio {} outside (0, 1]", plan.target_ratio));
    if (plan.k_neighbors == 0) throw ValidationError("resample: k_neighbors must be positive");
    if (plan.k_neighbors >= cc.n_minority)
        throw ValidationError(fmt::format("resample: k_neighbors {} must be below the minority size {}", plan.k_neighbors,
                                          cc.n_minority));
}

std::size_t deficit(const ResamplePlan& plan, const ClassCounts& cc) {
    const auto target = static_cast<std::size_t>(std::floor(plan.target_ratio * static_cast<double>(cc.n_majority) + 1e-9));
    return target > cc.n_minority ? target - cc.n_minority : 0;
}

// k nearest rows of `query` among `candidates` (excluding itself), ties to the lower index.
std::vector<std::size_t> knn(const Eigen::MatrixXd& X, std::size_t query, std::span<const std::size_t> candidates,
                             std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(candidates.size());
    const auto q = X.row(static_cast<Eigen::Index>(query));
    for (std::size_t c : candidates) {
        if (c == query) continue;
        d.emplace_back((X.row(static_cast<Eigen::Index>(c)) - q).squaredNorm(), c);
    }
    k = std::min(k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
    return out;
}

std::vector<std::size_t> rows_of(std::span<const int> y, int label) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == label) out.push_back(i);
    return out;
}

ResampleResult copy_input(const Eigen::MatrixXd& X, std::span<const int> y, int minority) {
    return {X, std::vector<int>(y.begin(), y.end()), {}, minority};
}

// Interpolates counts[i] synthetic rows from minority row i toward its minority neighbors.
ResampleResult synthesize(const Eigen::MatrixXd& X, std::span<const int> y, int minority,
                          std::span<const std::size_t> minority_rows, std::span<const std::size_t> counts,
                          const ResamplePlan& plan) {
    const std::size_t extra = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    ResampleResult out;
    out.minority_label = minority;
    out.X.resize(X.rows() + static_cast<Eigen::Index>(extra), X.cols());
    out.X.topRows(X.rows()) = X;
    out.y.assign(y.begin(), y.end());
    out.origins.reserve(extra);

    Rng rng(plan.seed);
    Eigen::Index next = X.rows();
    for (std::size_t m = 0; m < minority_rows.size(); ++m) {
        if (counts[m] == 0) continue;
        const std::size_t seed_row = minority_rows[m];
        const auto neighbors = knn(X, seed_row, minority_rows, plan.k_neighbors);
        for (std::size_t t = 0; t < counts[m]; ++t) {
            const std::size_t nn = neighbors[rng.index(neighbors.size())];
            const double u = rng.uniform();
            const auto a = X.row(static_cast<Eigen::Index>(seed_row));
            const auto b = X.row(static_cast<Eigen::Index>(nn));
            out.X.row(next++) = a + u * (b - a);
            out.y.push_back(minority);
            out.origins.push_back({seed_row, nn, u});
        }
    }
    return out;
}

}  // namespace

Method parse_method(std::string_view text) {
    if (text == "none") return Method::none;
    if (text == "smote") return Method::smote;
    if (text == "adasyn") return Method::adasyn;
    throw ValidationError(fmt::format("unknown resampling method '{}'", text));
}

std::string_view to_string(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::smote: return "smote";
        case Method::adasyn: return "adasyn";
    }
    return "?";
}

std::vector<std::size_t> allocate(std::span<const double> weights, std::size_t total) {
    if (weights.empty()) throw ValidationError("allocate: no weights");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("allocate: weights must be finite and >= 0");
        sum += w;
    }
    if (sum <= 0.0) throw ValidationError("allocate: weights sum to zero");
    std::vector<std::size_t> out(weights.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] / sum * static_cast<double>(total);
        out[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += out[i];
        // remainders equal in exact arithmetic can differ by a few ulps; snap them so ties go to the lower index
        remainders.emplace_back(std::round((exact - static_cast<double>(out[i])) * 1e9), i);
    }
    // Rounding in the division can overshoot by a unit; trim from the smallest remainders.
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; assigned < total; ++j, ++assigned) ++out[remainders[j % remainders.size()].second];
    for (std::size_t j = remainders.size(); assigned > total && j > 0; --j) {
        auto& slot = out[remainders[j - 1].second];
        if (slot > 0) {
            --slot;
            --assigned;
        }
    }
    return out;
}

std::vector<double> adasyn_difficulty(const Eigen::MatrixXd& X, std::span<const int> y, int minority_label,
                                      std::size_t k) {
    std::vector<std::size_t> all(y.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<double> r;
    for (std::size_t i : rows_of(y, minority_label)) {
        const auto nn = knn(X, i, all, k);
        std::size_t majority = 0;
        for (std::size_t j : nn) majority += y[j] != minority_label;
        r.push_back(static_cast<double>(majority) / static_cast<double>(k));
    }
    return r;
}

ResampleResult smote(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan) {
    const auto cc = count_classes(X, y);
    validate_plan(plan, cc);
    const std::size_t g = deficit(plan, cc);
    if (g == 0) return copy_input(X, y, cc.minority);
    const auto minority_rows = rows_of(y, cc.minority);
    const std::vector<double> uniform(minority_rows.size(), 1.0);
    return synthesize(X, y, cc.minority, minority_rows, allocate(uniform, g), plan);
}

ResampleResult adasyn(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan) {
    const auto cc = count_classes(X, y);
    validate_plan(plan, cc);
    const std::size_t g = deficit(plan, cc);
    if (g == 0) return copy_input(X, y, cc.minority);
    const auto minority_rows = rows_of(y, cc.minority);
    auto r = adasyn_difficulty(X, y, cc.minority, plan.k_neighbors);
    if (std::all_of(r.begin(), r.end(), [](double v) { return v == 0.0; })) std::fill(r.begin(), r.end(), 1.0);
    return synthesize(X, y, cc.minority, minority_rows, allocate(r, g), plan);
}

ResampleResult apply(const Eigen::MatrixXd& X, std::span<const int> y, const ResamplePlan& plan) {
    switch (plan.method) {
        case Method::smote: return smote(X, y, plan);
        case Method::adasyn: return adasyn(X, y, plan);
        case Method::none: break;
    }
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw ValidationError("resample: rows vs labels mismatch");
    return copy_input(X, y, 1);
}

std::vector<double> class_balance_weights(std::span<const int> y) {
    if (y.empty()) throw ValidationError("class_balance_weights: empty input");
    std::map<int, std::size_t> counts;
    for (int v : y) ++counts[v];
    if (counts.size() < 2) throw ValidationError("class_balance_weights: both classes must be present");
    std::vector<double> w;
    w.reserve(y.size());
    for (int v : y) w.push_back(1.0 / static_cast<double>(counts[v]));
    return w;
}

}  // namespace mmfuse::resample

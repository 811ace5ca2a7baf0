#include "mmfuse/fusion.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "mmfuse/error.hpp"
#include "mmfuse/neural/adam.hpp"
#include "mmfuse/neural/loss.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse::fusion {
namespace {

constexpr std::array<Modality, kModalityCount> kAll{Modality::clinical, Modality::radiology, Modality::histology};

std::size_t idx(Modality m) { return static_cast<std::size_t>(m); }

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

template <typename T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(v[r]);
    return out;
}

Eigen::MatrixXd pick_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

}  // namespace

std::optional<Modality> parse_modality(std::string_view name) {
    for (auto m : kAll)
        if (kModalityNames[idx(m)] == name) return m;
    if (name == "ehr") return Modality::clinical;
    if (name == "ct-mri" || name == "radiology") return Modality::radiology;
    if (name == "wsi") return Modality::histology;
    return std::nullopt;
}

Strategy parse_strategy(std::string_view t) {
    if (t == "early-concat") return Strategy::early_concat;
    if (t == "early-mean-pool") return Strategy::early_mean_pool;
    if (t == "late-weighted-sum") return Strategy::late_weighted_sum;
    if (t == "late-learned") return Strategy::late_learned;
    throw ValidationError(fmt::format("unknown fusion strategy '{}'", t));
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::early_concat: return "early-concat";
        case Strategy::early_mean_pool: return "early-mean-pool";
        case Strategy::late_weighted_sum: return "late-weighted-sum";
        case Strategy::late_learned: return "late-learned";
    }
    return "?";
}

MissingPolicy parse_policy(std::string_view t) {
    if (t == "renormalize") return MissingPolicy::renormalize;
    if (t == "zero-impute") return MissingPolicy::zero_impute;
    if (t == "learned-default") return MissingPolicy::learned_default;
    throw ValidationError(fmt::format("unknown missing-modality policy '{}'", t));
}

std::string_view to_string(MissingPolicy p) {
    switch (p) {
        case MissingPolicy::renormalize: return "renormalize";
        case MissingPolicy::zero_impute: return "zero-impute";
        case MissingPolicy::learned_default: return "learned-default";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ModalityBundle

ModalityBundle::ModalityBundle(std::array<std::optional<FeatureTable>, kModalityCount> features,
                               std::array<std::optional<ProbabilityTable>, kModalityCount> probs,
                               std::array<std::size_t, kModalityCount> widths)
    : features_(std::move(features)), probs_(std::move(probs)), widths_(widths) {
    std::set<std::string> all;
    for (auto m : kAll) {
        auto& f = features_[idx(m)];
        if (f) {
            if (f->width() != widths_[idx(m)])
                throw ValidationError(fmt::format("{} features have width {}, expected {}", kModalityNames[idx(m)], f->width(),
                                                  widths_[idx(m)]));
            f->reindex();
            all.insert(f->ids.begin(), f->ids.end());
        }
        if (probs_[idx(m)]) {
            auto& index = prob_index_[idx(m)];
            const auto& p = *probs_[idx(m)];
            for (std::size_t i = 0; i < p.ids.size(); ++i) index.emplace(p.ids[i], i);
            if (!f) all.insert(p.ids.begin(), p.ids.end());
        }
    }
    patients_.assign(all.begin(), all.end());
    rebuild_mask();
}

void ModalityBundle::rebuild_mask() {
    mask_.assign(patients_.size(), {false, false, false});
    for (std::size_t p = 0; p < patients_.size(); ++p) {
        bool any = false;
        for (auto m : kAll) {
            const auto& f = features_[idx(m)];
            bool here;
            if (f)
                here = f->row_of(patients_[p]).has_value();
            else
                here = prob_index_[idx(m)].count(patients_[p]) > 0;
            mask_[p][idx(m)] = here;
            any = any || here;
        }
        if (!any) throw ValidationError(fmt::format("patient '{}' has no modality", patients_[p]));
    }
}

void ModalityBundle::set_patients(std::vector<std::string> patients) {
    patients_ = std::move(patients);
    rebuild_mask();
}

Eigen::RowVectorXd ModalityBundle::embedding(std::size_t patient, Modality m) const {
    const auto& f = features_[idx(m)];
    if (!f) return Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(widths_[idx(m)]));
    const auto row = f->row_of(patients_[patient]);
    if (!row) return Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(widths_[idx(m)]));
    return f->data.row(static_cast<Eigen::Index>(*row));
}

double ModalityBundle::probability(std::size_t patient, Modality m) const {
    const auto& index = prob_index_[idx(m)];
    auto it = index.find(patients_[patient]);
    if (it == index.end())
        throw ValidationError(fmt::format("no {} probability for patient '{}'", kModalityNames[idx(m)], patients_[patient]));
    return probs_[idx(m)]->probs[it->second];
}

void ModalityBundle::set_probabilities(Modality m, ProbabilityTable t) {
    auto& index = prob_index_[idx(m)];
    index.clear();
    for (std::size_t i = 0; i < t.ids.size(); ++i) index.emplace(t.ids[i], i);
    probs_[idx(m)] = std::move(t);
    rebuild_mask();
}

std::vector<std::string> ModalityBundle::orphans(std::span<const std::string> ids) const {
    const std::set<std::string> known(ids.begin(), ids.end());
    std::set<std::string> out;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        if (features_[m])
            for (const auto& p : features_[m]->ids)
                if (!known.count(p)) out.insert(p);
        if (probs_[m])
            for (const auto& p : probs_[m]->ids)
                if (!known.count(p)) out.insert(p);
    }
    return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------
// Early fusion

FeatureTable early_concat(const ModalityBundle& bundle, MissingPolicy policy,
                          const std::array<Eigen::RowVectorXd, kModalityCount>* defaults) {
    if (policy == MissingPolicy::renormalize)
        throw ValidationError("early-concat: renormalize applies to late fusion; use zero-impute or learned-default");
    if (policy == MissingPolicy::learned_default && !defaults)
        throw ValidationError("early-concat: learned-default needs per-modality default vectors");
    std::size_t total = 0;
    for (auto m : kAll) total += bundle.width(m);
    FeatureTable out;
    out.ids = bundle.patients();
    for (auto m : kAll)
        for (std::size_t c = 0; c < bundle.width(m); ++c) out.columns.push_back(fmt::format("{}_{}", kModalityNames[idx(m)], c));
    for (auto m : kAll) out.columns.push_back(fmt::format("mask_{}", kModalityNames[idx(m)]));
    out.data.setZero(static_cast<Eigen::Index>(bundle.size()), static_cast<Eigen::Index>(total + kModalityCount));
    for (std::size_t p = 0; p < bundle.size(); ++p) {
        Eigen::Index offset = 0;
        bool any = false;
        const auto row = static_cast<Eigen::Index>(p);
        for (auto m : kAll) {
            const auto w = static_cast<Eigen::Index>(bundle.width(m));
            if (bundle.present(p, m)) {
                out.data.block(row, offset, 1, w) = bundle.embedding(p, m);
                out.data(row, static_cast<Eigen::Index>(total + idx(m))) = 1.0;
                any = true;
            } else if (policy == MissingPolicy::learned_default) {
                out.data.block(row, offset, 1, w) = (*defaults)[idx(m)];
            }
            offset += w;
        }
        if (!any) throw ValidationError(fmt::format("patient '{}' has every modality missing", bundle.patients()[p]));
    }
    out.reindex();
    return out;
}

Eigen::MatrixXd slice_block(const FeatureTable& fused, const ModalityBundle& bundle, Modality m) {
    Eigen::Index offset = 0;
    for (auto k : kAll) {
        if (k == m) break;
        offset += static_cast<Eigen::Index>(bundle.width(k));
    }
    return fused.data.middleCols(offset, static_cast<Eigen::Index>(bundle.width(m)));
}

std::array<Eigen::RowVectorXd, kModalityCount> modality_means(const ModalityBundle& bundle,
                                                              std::span<const std::size_t> patients) {
    std::array<Eigen::RowVectorXd, kModalityCount> out;
    for (auto m : kAll) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(bundle.width(m)));
        std::size_t n = 0;
        for (auto p : patients)
            if (bundle.present(p, m)) {
                acc += bundle.embedding(p, m);
                ++n;
            }
        out[idx(m)] = n ? Eigen::RowVectorXd(acc / static_cast<double>(n)) : acc;
    }
    return out;
}

FeatureTable early_mean_pool(const ModalityBundle& bundle, const std::array<Projection, kModalityCount>& projections) {
    const Eigen::Index dim = projections[0].weight.cols();
    for (auto m : kAll) {
        const auto& pr = projections[idx(m)];
        if (pr.weight.cols() != dim || pr.bias.cols() != dim || pr.bias.rows() != 1 ||
            pr.weight.rows() != static_cast<Eigen::Index>(bundle.width(m)))
            throw ValidationError(fmt::format("early-mean-pool: projection for {} has the wrong shape", kModalityNames[idx(m)]));
    }
    if (dim <= 0) throw ValidationError("early-mean-pool: projection_dim must be positive");
    Eigen::MatrixXd data = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bundle.size()), dim);
    for (std::size_t p = 0; p < bundle.size(); ++p) {
        std::size_t n = 0;
        for (auto m : kAll) {
            if (!bundle.present(p, m)) continue;
            const auto& pr = projections[idx(m)];
            data.row(static_cast<Eigen::Index>(p)) += bundle.embedding(p, m) * pr.weight + pr.bias;
            ++n;
        }
        if (n == 0) throw ValidationError(fmt::format("patient '{}' has every modality missing", bundle.patients()[p]));
        data.row(static_cast<Eigen::Index>(p)) /= static_cast<double>(n);
    }
    return make_table(bundle.patients(), std::move(data), "pooled_");
}

// ---------------------------------------------------------------------------
// Late fusion

std::array<double, kModalityCount> normalize_weights(const std::array<double, kModalityCount>& raw) {
    double sum = 0.0;
    for (double w : raw) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("fusion weights must be finite and nonnegative");
        sum += w;
    }
    if (sum <= 0.0) throw ValidationError("fusion weights are all zero");
    // integer units of 2^-32; any leftover from rounding goes to the largest weight
    // (ties to the lower index) so the result sums to exactly 1 and is a fixed point
    std::array<std::int64_t, kModalityCount> units{};
    std::int64_t total = 0;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        units[i] = static_cast<std::int64_t>(std::nearbyint(std::ldexp(raw[i] / sum, 32)));
        total += units[i];
        if (raw[i] > raw[largest]) largest = i;
    }
    units[largest] += (std::int64_t{1} << 32) - total;
    std::array<double, kModalityCount> out{};
    for (std::size_t i = 0; i < kModalityCount; ++i) out[i] = std::ldexp(static_cast<double>(units[i]), -32);
    return out;
}

std::vector<double> late_weighted_sum(const ModalityBundle& bundle, const std::array<double, kModalityCount>& weights,
                                      MissingPolicy policy) {
    if (policy == MissingPolicy::learned_default)
        throw ValidationError("late-weighted-sum: learned-default applies to early fusion");
    // normalizing here makes the result independent of the scale of `weights`
    const auto w = normalize_weights(weights);
    double all = 0.0;
    for (double v : w) all += v;
    std::vector<double> out(bundle.size());
    for (std::size_t p = 0; p < bundle.size(); ++p) {
        double num = 0.0, den = 0.0, lo = 1.0, hi = 0.0;
        for (auto m : kAll) {
            if (!bundle.present(p, m)) continue;
            const double prob = bundle.probability(p, m);
            num += w[idx(m)] * prob;
            den += w[idx(m)];
            lo = std::min(lo, prob);
            hi = std::max(hi, prob);
        }
        if (policy == MissingPolicy::zero_impute) {
            den = all;
            lo = std::min(lo, 0.0);
        }
        if (den <= 0.0)
            throw ValidationError(fmt::format("patient '{}': weights of the present modalities are all zero", bundle.patients()[p]));
        out[p] = std::clamp(num / den, lo, hi);
    }
    return out;
}

Eigen::MatrixXd late_inputs(const ModalityBundle& bundle) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bundle.size()), 2 * kModalityCount);
    for (std::size_t p = 0; p < bundle.size(); ++p)
        for (auto m : kAll)
            if (bundle.present(p, m)) {
                x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(idx(m))) = bundle.probability(p, m);
                x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(kModalityCount + idx(m))) = 1.0;
            }
    return x;
}

neural::MlpSpec late_head_spec() {
    neural::MlpSpec s;
    s.layer_sizes = {2 * kModalityCount, 8, 1};
    s.dropout = {0.0};
    s.batch_norm = {false};
    s.output = neural::OutputKind::sigmoid;
    return s;
}

neural::TrainConfig late_head_config(std::uint64_t seed) {
    neural::TrainConfig c;
    c.epochs = 100;
    c.adam.lr = 1e-2;
    c.selection = neural::Selection::val_balanced_accuracy;
    c.seed = seed;
    return c;
}

LateLearnedResult late_learned(const ModalityBundle& bundle, std::span<const int> labels,
                               std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                               const neural::TrainConfig& config, std::uint64_t init_seed) {
    if (labels.size() != bundle.size()) throw ValidationError("late-learned: one label per bundle patient is required");
    const Eigen::MatrixXd x = late_inputs(bundle);
    LateLearnedResult out;
    out.trained = neural::train(neural::make_model(late_head_spec(), init_seed), pick_rows(x, train_rows),
                                pick(labels, train_rows), pick_rows(x, val_rows), pick(labels, val_rows), config);
    out.fused = to_vector(neural::predict_proba(out.trained.model, x));
    return out;
}

// ---------------------------------------------------------------------------
// Mean-pool fusion with learned projections

namespace {

struct PoolBatch {
    std::array<Eigen::MatrixXd, kModalityCount> inputs;  // zero rows where missing
    std::array<Eigen::VectorXd, kModalityCount> present;
    Eigen::VectorXd inv_count;
};

PoolBatch pool_batch(const ModalityBundle& bundle, std::span<const std::size_t> rows) {
    PoolBatch b;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.inv_count = Eigen::VectorXd::Zero(n);
    for (auto m : kAll) {
        b.inputs[idx(m)].setZero(n, static_cast<Eigen::Index>(bundle.width(m)));
        b.present[idx(m)].setZero(n);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (auto m : kAll)
            if (bundle.present(rows[static_cast<std::size_t>(i)], m)) {
                b.inputs[idx(m)].row(i) = bundle.embedding(rows[static_cast<std::size_t>(i)], m);
                b.present[idx(m)](i) = 1.0;
                ++count;
            }
        b.inv_count(i) = 1.0 / static_cast<double>(count);
    }
    return b;
}

Eigen::MatrixXd pooled(const std::array<Projection, kModalityCount>& proj, const PoolBatch& b) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(b.inv_count.size(), proj[0].weight.cols());
    for (auto m : kAll) {
        const auto& p = proj[idx(m)];
        Eigen::MatrixXd z = (b.inputs[idx(m)] * p.weight).rowwise() + p.bias.row(0);
        h += b.present[idx(m)].asDiagonal() * z;
    }
    return b.inv_count.asDiagonal() * h;
}

}  // namespace

MeanPoolResult train_mean_pool(const ModalityBundle& bundle, std::span<const int> labels,
                               std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                               std::size_t projection_dim, const neural::MlpSpec& head_spec,
                               const neural::TrainConfig& config, std::uint64_t init_seed) {
    config.validate();
    if (projection_dim == 0) throw ValidationError("early-mean-pool: projection_dim must be positive");
    if (head_spec.input_size() != projection_dim) throw ValidationError("early-mean-pool: head input must equal projection_dim");
    if (labels.size() != bundle.size()) throw ValidationError("early-mean-pool: one label per bundle patient is required");
    if (train_rows.empty() || val_rows.empty()) throw ValidationError("early-mean-pool: empty training or validation split");

    MeanPoolModel model;
    Rng init(init_seed);
    for (auto m : kAll) {
        const auto w = static_cast<Eigen::Index>(bundle.width(m));
        const double bound = 1.0 / std::sqrt(static_cast<double>(w));
        auto& p = model.projections[idx(m)];
        p.weight.resize(w, static_cast<Eigen::Index>(projection_dim));
        for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = init.uniform(-bound, bound);
        p.bias = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(projection_dim));
    }
    model.head = neural::make_model(head_spec, init.next());

    const std::vector<int> y_train = pick(labels, train_rows);
    const std::vector<int> y_val = pick(labels, val_rows);
    const double n_train = static_cast<double>(y_train.size());
    const double pos = static_cast<double>(std::count(y_train.begin(), y_train.end(), 1));
    std::array<double, 2> cw{1.0, 1.0};
    if (config.class_weights)
        cw = *config.class_weights;
    else if (pos > 0 && pos < n_train)
        cw = {n_train / (2.0 * (n_train - pos)), n_train / (2.0 * pos)};
    const auto loss_of = [&](const Eigen::MatrixXd& logits, std::span<const int> y) {
        if (config.loss == neural::LossKind::bce_pos_weight)
            return neural::bce_pos_weight(logits, y, config.pos_weight.value_or(pos > 0 ? (n_train - pos) / pos : 1.0));
        return neural::weighted_cross_entropy(logits, y, cw, head_spec.label_smoothing);
    };

    const PoolBatch val_batch = pool_batch(bundle, val_rows);
    const bool bn = std::any_of(head_spec.batch_norm.begin(), head_spec.batch_norm.end(), [](bool b) { return b; });
    Rng rng(config.seed);
    neural::AdamState adam;
    MeanPoolResult result;
    result.model = model;
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
    std::map<std::size_t, int> label_of;
    for (std::size_t i = 0; i < train_rows.size(); ++i) label_of[train_rows[i]] = y_train[i];

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = neural::step_decay(config.adam.lr, epoch, config.scheduler_step, config.scheduler_gamma);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
            std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
            if (bn && b1 - b0 < 2) continue;
            const std::span<const std::size_t> rows(order.data() + b0, b1 - b0);
            const PoolBatch batch = pool_batch(bundle, rows);
            std::vector<int> yb;
            for (auto r : rows) yb.push_back(label_of[r]);
            const Eigen::MatrixXd h = pooled(model.projections, batch);
            const auto cache = neural::forward(model.head, h, neural::Mode::train, &rng);
            const auto loss = loss_of(cache.logits, yb);
            if (!std::isfinite(loss.value)) throw NumericError(fmt::format("training diverged at epoch {}", epoch + 1));
            auto g = neural::backward(model.head, cache, loss.grad);

            auto params = neural::trainable(model.head);
            std::vector<Eigen::MatrixXd> grads = std::move(g.tensors);
            const Eigen::MatrixXd dh = batch.inv_count.asDiagonal() * g.input;
            for (auto m : kAll) {
                auto& p = model.projections[idx(m)];
                const Eigen::MatrixXd dz = batch.present[idx(m)].asDiagonal() * dh;
                params.push_back({fmt::format("projection_{}.weight", kModalityNames[idx(m)]), &p.weight});
                grads.push_back(batch.inputs[idx(m)].transpose() * dz);
                params.push_back({fmt::format("projection_{}.bias", kModalityNames[idx(m)]), &p.bias});
                grads.push_back(dz.colwise().sum());
            }
            neural::adam_step(params, grads, adam, config.adam, lr);
            neural::update_running_stats(model.head, cache, config.bn_momentum);
            loss_sum += loss.value * static_cast<double>(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                correct += (cache.probs(static_cast<Eigen::Index>(i)) >= config.threshold ? 1 : 0) == yb[i];
        }
        const auto val = neural::forward(model.head, pooled(model.projections, val_batch), neural::Mode::eval);
        const double val_loss = loss_of(val.logits, y_val).value;
        const double val_ba =
            metrics::summary_metrics(metrics::confusion_at(y_val, to_vector(val.probs), config.threshold)).balanced_accuracy;
        result.history.push_back({epoch + 1, loss_sum / n_train, static_cast<double>(correct) / n_train, val_loss, val_ba, lr});
        const double score = config.selection == neural::Selection::val_loss ? -val_loss
                             : config.selection == neural::Selection::last ? static_cast<double>(epoch)
                                                                            : val_ba;
        if (score > best) {
            best = score;
            result.model = model;
        }
    }
    std::vector<std::size_t> all(bundle.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    result.fused = to_vector(neural::predict_proba(result.model.head, pooled(result.model.projections, pool_batch(bundle, all))));
    return result;
}

// ---------------------------------------------------------------------------
// Experiment

neural::MlpSpec baseline_spec(std::size_t input, const ExperimentConfig& c) {
    neural::MlpSpec s;
    s.layer_sizes = {input, c.baseline_hidden, 2};
    s.dropout = {c.baseline_dropout};
    s.batch_norm = {false};
    s.output = neural::OutputKind::softmax2;
    s.label_smoothing = c.label_smoothing;
    return s;
}

std::string_view row_name(Strategy s) {
    switch (s) {
        case Strategy::late_weighted_sum: return "Late Fusion (Weighted Sum)";
        case Strategy::early_concat: return "Early Fusion (Concatenation)";
        case Strategy::late_learned: return "Late Fusion (Learned Head)";
        case Strategy::early_mean_pool: return "Early Fusion (Mean Pooling)";
    }
    return "?";
}

std::string_view baseline_name(Modality m) {
    switch (m) {
        case Modality::clinical: return "EHR MLP Baseline";
        case Modality::radiology: return "CT/MRI MLP Baseline";
        case Modality::histology: return "WSI MLP Baseline";
    }
    return "?";
}

nlohmann::json to_json(const ExperimentConfig& c) {
    auto strategies = nlohmann::json::array();
    for (auto s : c.strategies) strategies.push_back(to_string(s));
    return {{"split_fractions", c.split_fractions},
            {"baseline_hidden", c.baseline_hidden},
            {"baseline_dropout", c.baseline_dropout},
            {"label_smoothing", c.label_smoothing},
            {"train", neural::to_json(c.train)},
            {"strategies", strategies},
            {"concat_policy", to_string(c.concat_policy)},
            {"projection_dim", c.projection_dim},
            {"threshold", c.threshold},
            {"seed", c.seed}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.split_fractions = j.value("split_fractions", c.split_fractions);
    c.baseline_hidden = j.value("baseline_hidden", c.baseline_hidden);
    c.baseline_dropout = j.value("baseline_dropout", c.baseline_dropout);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    if (j.contains("train")) c.train = neural::train_config_from_json(j.at("train"));
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_strategy(s.get<std::string>()));
    }
    if (j.contains("concat_policy")) c.concat_policy = parse_policy(j.at("concat_policy").get<std::string>());
    c.projection_dim = j.value("projection_dim", c.projection_dim);
    c.threshold = j.value("threshold", c.threshold);
    c.seed = j.value("seed", c.seed);
    return c;
}

ExperimentResult run_fusion_experiment(const ModalityBundle& input, const LabelTable& labels, const ExperimentConfig& c) {
    std::map<std::string, int> label_of;
    for (std::size_t i = 0; i < labels.ids.size(); ++i) label_of.emplace(labels.ids[i], labels.labels[i]);
    const auto orphans = input.orphans(labels.ids);
    std::vector<std::string> unlabeled_missing;
    {
        const std::set<std::string> in_bundle(input.patients().begin(), input.patients().end());
        for (const auto& id : labels.ids)
            if (!in_bundle.count(id)) unlabeled_missing.push_back(id);
    }
    if (!orphans.empty() || !unlabeled_missing.empty()) {
        const auto list = [](const std::vector<std::string>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size() && i < 20; ++i) s += (i ? ", " : "") + v[i];
            if (v.size() > 20) s += fmt::format(", ... ({} total)", v.size());
            return s;
        };
        throw ValidationError(fmt::format("patient keys disagree: without label [{}]; labeled but in no modality [{}]",
                                          list(orphans), list(unlabeled_missing)));
    }

    ModalityBundle bundle = input;
    std::vector<int> y;
    for (const auto& p : bundle.patients()) y.push_back(label_of.at(p));

    ExperimentResult result;
    result.patients = bundle.patients();
    result.split = tabular::split_stratified(y, c.split_fractions, derive_seed(c.seed, "split"));
    const auto& split = result.split;

    const auto present_rows = [&](std::span<const std::size_t> rows, Modality m) {
        std::vector<std::size_t> out;
        for (auto r : rows)
            if (bundle.present(r, m)) out.push_back(r);
        return out;
    };
    const auto report_on = [&](std::string_view name, std::span<const double> probs_all, std::span<const std::size_t> rows) {
        const auto yt = pick(std::span<const int>(y), rows);
        const auto pt = pick(probs_all, rows);
        result.rows.push_back({std::string(name), metrics::evaluate(yt, pt, c.threshold), rows.size()});
    };

    for (auto m : kAll) {
        const std::string name(kModalityNames[idx(m)]);
        const auto tr = present_rows(split.train, m);
        const auto va = present_rows(split.validation, m);
        const auto te = present_rows(split.test, m);
        std::vector<double> probs(bundle.size(), 0.0);
        if (bundle.has_features(m)) {
            if (tr.empty() || va.empty()) throw ValidationError(fmt::format("{}: no patients in the training or validation split", name));
            std::vector<std::size_t> all_present = present_rows(std::vector<std::size_t>(
                                                                    [&] {
                                                                        std::vector<std::size_t> a(bundle.size());
                                                                        std::iota(a.begin(), a.end(), std::size_t{0});
                                                                        return a;
                                                                    }()),
                                                                m);
            Eigen::MatrixXd x(static_cast<Eigen::Index>(bundle.size()), static_cast<Eigen::Index>(bundle.width(m)));
            for (std::size_t p = 0; p < bundle.size(); ++p) x.row(static_cast<Eigen::Index>(p)) = bundle.embedding(p, m);
            auto cfg = c.train;
            cfg.seed = derive_seed(c.seed, "train:" + name);
            const auto trained = neural::train(neural::make_model(baseline_spec(bundle.width(m), c), derive_seed(c.seed, "init:" + name)),
                                               pick_rows(x, tr), pick(std::span<const int>(y), tr), pick_rows(x, va),
                                               pick(std::span<const int>(y), va), cfg);
            const Eigen::VectorXd p_all = neural::predict_proba(trained.model, pick_rows(x, all_present));
            ProbabilityTable pt;
            for (std::size_t i = 0; i < all_present.size(); ++i) {
                pt.ids.push_back(bundle.patients()[all_present[i]]);
                pt.probs.push_back(p_all(static_cast<Eigen::Index>(i)));
                probs[all_present[i]] = p_all(static_cast<Eigen::Index>(i));
            }
            bundle.set_probabilities(m, std::move(pt));
        } else if (bundle.has_probabilities(m)) {
            for (std::size_t p = 0; p < bundle.size(); ++p)
                if (bundle.present(p, m)) probs[p] = bundle.probability(p, m);
        } else {
            continue;
        }
        if (!va.empty()) {
            const auto yv = pick(std::span<const int>(y), va);
            const auto pv = pick(std::span<const double>(probs), va);
            result.validation_ba[idx(m)] = metrics::summary_metrics(metrics::confusion_at(yv, pv, c.threshold)).balanced_accuracy;
        }
        if (!te.empty()) report_on(baseline_name(m), probs, te);
    }

    for (auto s : c.strategies) {
        std::vector<double> fused;
        switch (s) {
            case Strategy::late_weighted_sum:
                result.weights = normalize_weights(result.validation_ba);
                fused = late_weighted_sum(bundle, result.weights, MissingPolicy::renormalize);
                break;
            case Strategy::early_concat: {
                const auto defaults = modality_means(bundle, split.train);
                const auto table = early_concat(bundle, c.concat_policy, &defaults);
                auto cfg = c.train;
                cfg.seed = derive_seed(c.seed, "train:early-concat");
                const auto trained = neural::train(
                    neural::make_model(baseline_spec(table.width(), c), derive_seed(c.seed, "init:early-concat")),
                    pick_rows(table.data, split.train), pick(std::span<const int>(y), split.train),
                    pick_rows(table.data, split.validation), pick(std::span<const int>(y), split.validation), cfg);
                fused = to_vector(neural::predict_proba(trained.model, table.data));
                break;
            }
            case Strategy::late_learned:
                fused = late_learned(bundle, y, split.train, split.validation, late_head_config(derive_seed(c.seed, "train:late-learned")),
                                     derive_seed(c.seed, "init:late-learned"))
                            .fused;
                break;
            case Strategy::early_mean_pool: {
                auto head = baseline_spec(c.projection_dim, c);
                auto cfg = c.train;
                cfg.seed = derive_seed(c.seed, "train:early-mean-pool");
                fused = train_mean_pool(bundle, y, split.train, split.validation, c.projection_dim, head, cfg,
                                        derive_seed(c.seed, "init:early-mean-pool"))
                            .fused;
                break;
            }
        }
        report_on(row_name(s), fused, split.test);
        result.fused.emplace_back(std::string(to_string(s)), std::move(fused));
    }
    return result;
}

nlohmann::json to_json(const ExperimentResult& r) {
    nlohmann::json j;
    j["columns"] = {"Model", "Balanced Accuracy", "F1 Score", "Precision", "Recall"};
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows)
        j["rows"].push_back({{"model", row.model},
                             {"balanced_accuracy", row.report.metrics.balanced_accuracy},
                             {"f1", row.report.metrics.f1},
                             {"precision", row.report.metrics.precision},
                             {"recall", row.report.metrics.recall},
                             {"test_patients", row.test_patients},
                             {"report", metrics::to_json(row.report)}});
    j["modality_order"] = kModalityNames;
    j["validation_balanced_accuracy"] = r.validation_ba;
    j["late_fusion_weights"] = r.weights;
    j["split_sizes"] = {r.split.train.size(), r.split.validation.size(), r.split.test.size()};
    return j;
}

std::string render_experiment_table(const ExperimentResult& r) {
    std::vector<metrics::ComparisonRow> rows;
    for (const auto& row : r.rows) rows.push_back({row.model, row.report.metrics});
    return metrics::render_comparison_table(rows, "Baselines and fusion models (test split)");
}

}  // namespace mmfuse::fusion

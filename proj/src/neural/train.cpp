#include "mmfuse/neural/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/neural/loss.hpp"
#include "mmfuse/resample.hpp"

namespace mmfuse::neural {
namespace {

struct ResolvedLoss {
    LossKind kind;
    std::array<double, 2> class_weights;
    double pos_weight;
    double smoothing;
};

ResolvedLoss resolve_loss(const TrainConfig& c, const MlpSpec& spec, std::span<const int> y_ref) {
    const double n = static_cast<double>(y_ref.size());
    const double pos = static_cast<double>(std::count(y_ref.begin(), y_ref.end(), 1));
    const double neg = n - pos;
    ResolvedLoss r{c.loss, {1.0, 1.0}, 1.0, spec.label_smoothing};
    if (c.class_weights) {
        r.class_weights = *c.class_weights;
    } else if (pos > 0 && neg > 0) {
        r.class_weights = {n / (2.0 * neg), n / (2.0 * pos)};
    }
    if (c.pos_weight) {
        r.pos_weight = *c.pos_weight;
    } else if (pos > 0 && neg > 0) {
        r.pos_weight = neg / pos;
    }
    if (c.loss == LossKind::bce_pos_weight && spec.output != OutputKind::sigmoid)
        throw ValidationError("train: bce-with-pos-weight needs a sigmoid output head");
    return r;
}

LossResult compute_loss(const ResolvedLoss& r, const Eigen::MatrixXd& logits, std::span<const int> y) {
    if (r.kind == LossKind::weighted_ce) return weighted_cross_entropy(logits, y, r.class_weights, r.smoothing);
    return bce_pos_weight(logits, y, r.pos_weight);
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

bool has_batch_norm(const MlpSpec& s) { return std::any_of(s.batch_norm.begin(), s.batch_norm.end(), [](bool b) { return b; }); }

// Batch boundaries; a trailing batch of one is merged into its predecessor when BN needs >= 2 rows.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t size, bool merge_singletons) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < n; b += size) out.emplace_back(b, std::min(n, b + size));
    if (merge_singletons && out.size() > 1 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = out.back().second;
        out.pop_back();
    }
    return out;
}

const char* loss_name(LossKind k) { return k == LossKind::weighted_ce ? "weighted-cross-entropy" : "bce-with-pos-weight"; }
const char* sampler_name(SamplerKind k) { return k == SamplerKind::plain ? "plain" : "balanced-weighted"; }
const char* selection_name(Selection s) {
    switch (s) {
        case Selection::val_balanced_accuracy: return "val_balanced_accuracy";
        case Selection::val_loss: return "val_loss";
        case Selection::last: return "last";
    }
    return "?";
}

}  // namespace

void TrainConfig::validate() const {
    if (!(adam.lr > 0.0)) throw ValidationError("train: lr must be positive");
    if (epochs == 0) throw ValidationError("train: epochs must be positive");
    if (batch_size == 0) throw ValidationError("train: batch_size must be positive");
    if (pos_weight && !(*pos_weight > 0.0)) throw ValidationError("train: pos_weight must be positive");
    if (class_weights && !((*class_weights)[0] > 0.0 && (*class_weights)[1] > 0.0))
        throw ValidationError("train: class weights must be positive");
    if (!(feature_noise_sigma >= 0.0)) throw ValidationError("train: feature_noise_sigma must be >= 0");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ValidationError("train: bn_momentum outside (0, 1]");
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"loss", loss_name(c.loss)},
                     {"optimizer",
                      {{"name", "adam"},
                       {"lr", c.adam.lr},
                       {"weight_decay", c.adam.weight_decay},
                       {"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"eps", c.adam.eps}}},
                     {"scheduler", {{"name", "step-decay"}, {"step", c.scheduler_step}, {"gamma", c.scheduler_gamma}}},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"sampler", sampler_name(c.sampler)},
                     {"feature_noise_sigma", c.feature_noise_sigma},
                     {"selection", selection_name(c.selection)},
                     {"bn_momentum", c.bn_momentum},
                     {"threshold", c.threshold},
                     {"seed", c.seed}};
    j["class_weights"] = c.class_weights ? nlohmann::json(*c.class_weights) : nlohmann::json(nullptr);
    j["pos_weight"] = c.pos_weight ? nlohmann::json(*c.pos_weight) : nlohmann::json(nullptr);
    j["patience"] = c.patience ? nlohmann::json(*c.patience) : nlohmann::json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("loss")) {
        const auto s = j.at("loss").get<std::string>();
        if (s == "weighted-cross-entropy" || s == "weighted_ce")
            c.loss = LossKind::weighted_ce;
        else if (s == "bce-with-pos-weight" || s == "bce_pos_weight")
            c.loss = LossKind::bce_pos_weight;
        else
            throw ValidationError(fmt::format("train: unknown loss '{}'", s));
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.adam.lr = o.value("lr", c.adam.lr);
        c.adam.weight_decay = o.value("weight_decay", c.adam.weight_decay);
        c.adam.beta1 = o.value("beta1", c.adam.beta1);
        c.adam.beta2 = o.value("beta2", c.adam.beta2);
        c.adam.eps = o.value("eps", c.adam.eps);
    }
    if (j.contains("scheduler")) {
        c.scheduler_step = j.at("scheduler").value("step", c.scheduler_step);
        c.scheduler_gamma = j.at("scheduler").value("gamma", c.scheduler_gamma);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("sampler")) {
        const auto s = j.at("sampler").get<std::string>();
        if (s == "plain")
            c.sampler = SamplerKind::plain;
        else if (s == "balanced-weighted" || s == "balanced")
            c.sampler = SamplerKind::balanced;
        else
            throw ValidationError(fmt::format("train: unknown sampler '{}'", s));
    }
    c.feature_noise_sigma = j.value("feature_noise_sigma", c.feature_noise_sigma);
    if (j.contains("selection")) {
        const auto s = j.at("selection").get<std::string>();
        if (s == "val_balanced_accuracy")
            c.selection = Selection::val_balanced_accuracy;
        else if (s == "val_loss")
            c.selection = Selection::val_loss;
        else if (s == "last")
            c.selection = Selection::last;
        else
            throw ValidationError(fmt::format("train: unknown selection '{}'", s));
    }
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.threshold = j.value("threshold", c.threshold);
    c.seed = j.value("seed", c.seed);
    if (j.contains("class_weights") && !j.at("class_weights").is_null())
        c.class_weights = j.at("class_weights").get<std::array<double, 2>>();
    if (j.contains("pos_weight") && !j.at("pos_weight").is_null()) c.pos_weight = j.at("pos_weight").get<double>();
    if (j.contains("patience") && !j.at("patience").is_null()) c.patience = j.at("patience").get<std::size_t>();
    c.validate();
    return c;
}

double evaluate_loss(const MlpModel& model, const Eigen::MatrixXd& x, std::span<const int> y, const TrainConfig& config,
                     std::span<const int> y_ref) {
    const auto r = resolve_loss(config, model.spec, y_ref);
    return compute_loss(r, forward(model, x, Mode::eval).logits, y).value;
}

TrainResult train(MlpModel model, const Eigen::MatrixXd& x_train, std::span<const int> y_train,
                  const Eigen::MatrixXd& x_val, std::span<const int> y_val, const TrainConfig& config) {
    config.validate();
    model.spec.validate();
    if (x_train.rows() == 0 || x_val.rows() == 0) throw ValidationError("train: empty training or validation split");
    if (static_cast<std::size_t>(x_train.rows()) != y_train.size() || static_cast<std::size_t>(x_val.rows()) != y_val.size())
        throw ValidationError("train: rows and labels differ in length");
    const bool bn = has_batch_norm(model.spec);
    if (bn && x_train.rows() < 2) throw ValidationError("train: batch norm needs at least two training rows");

    const ResolvedLoss loss = resolve_loss(config, model.spec, y_train);
    Rng rng(config.seed);
    AdamState adam;
    std::unique_ptr<WeightedSampler> sampler;
    if (config.sampler == SamplerKind::balanced) {
        const auto w = resample::class_balance_weights(y_train);
        sampler = std::make_unique<WeightedSampler>(w);
    }

    TrainResult result;
    result.model = model;
    double best_score = -std::numeric_limits<double>::infinity();
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t since_improvement = 0;
    const auto n = static_cast<std::size_t>(x_train.rows());
    std::vector<std::size_t> order(n);
    std::vector<int> batch_y;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (sampler) {
            for (auto& o : order) o = sampler->draw(rng);
        } else {
            std::iota(order.begin(), order.end(), std::size_t{0});
            rng.shuffle(order);
        }
        const double lr = step_decay(config.adam.lr, epoch, config.scheduler_step, config.scheduler_gamma);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (const auto& [b0, b1] : batches(n, config.batch_size, bn)) {
            const std::span<const std::size_t> rows(order.data() + b0, b1 - b0);
            Eigen::MatrixXd xb = gather(x_train, rows);
            if (config.feature_noise_sigma > 0.0)
                for (Eigen::Index c = 0; c < xb.cols(); ++c)
                    for (Eigen::Index r = 0; r < xb.rows(); ++r) xb(r, c) += config.feature_noise_sigma * rng.normal();
            batch_y.clear();
            for (auto r : rows) batch_y.push_back(y_train[r]);

            const ForwardCache cache = forward(model, xb, Mode::train, &rng);
            const LossResult lr_out = compute_loss(loss, cache.logits, batch_y);
            if (!std::isfinite(lr_out.value))
                throw NumericError(fmt::format("training diverged at epoch {}", epoch + 1));
            const Gradients g = backward(model, cache, lr_out.grad);
            const auto params = trainable(model);
            adam_step(params, g.tensors, adam, config.adam, lr);
            update_running_stats(model, cache, config.bn_momentum);

            loss_sum += lr_out.value * static_cast<double>(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                correct += (cache.probs(static_cast<Eigen::Index>(i)) >= config.threshold ? 1 : 0) == batch_y[i];
        }

        const ForwardCache val = forward(model, x_val, Mode::eval);
        const double val_loss = compute_loss(loss, val.logits, y_val).value;
        const double train_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss) || !val.probs.allFinite())
            throw NumericError(fmt::format("training diverged at epoch {}", epoch + 1));
        const std::vector<double> val_probs(val.probs.data(), val.probs.data() + val.probs.size());
        const double val_ba =
            metrics::summary_metrics(metrics::confusion_at(y_val, val_probs, config.threshold)).balanced_accuracy;
        result.history.push_back(
            {epoch + 1, train_loss, static_cast<double>(correct) / static_cast<double>(n), val_loss, val_ba, lr});

        double score = 0.0;
        switch (config.selection) {
            case Selection::val_balanced_accuracy: score = val_ba; break;
            case Selection::val_loss: score = -val_loss; break;
            case Selection::last: score = static_cast<double>(epoch); break;
        }
        if (score > best_score) {
            best_score = score;
            result.model = model;
            result.best_epoch = epoch + 1;
        }

        if (val_loss < best_val_loss) {
            best_val_loss = val_loss;
            since_improvement = 0;
        } else if (config.patience && ++since_improvement > *config.patience) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_bal_acc\n";
    for (const auto& h : history)
        out += fmt::format("{},{},{},{},{}\n", h.epoch, format_double(h.train_loss), format_double(h.train_acc),
                           format_double(h.val_loss), format_double(h.val_bal_acc));
    return out;
}

}  // namespace mmfuse::neural

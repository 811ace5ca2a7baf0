#include "mmfuse/neural/mlp.hpp"

#include <fmt/format.h>

#include <cmath>

#include "mmfuse/error.hpp"

namespace mmfuse::neural {
namespace {

Eigen::VectorXd to_probability(const Eigen::MatrixXd& logits, OutputKind kind) {
    Eigen::VectorXd p(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        if (kind == OutputKind::sigmoid) {
            const double z = logits(i, 0);
            p(i) = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        } else {
            // softmax(z)[1] = sigmoid(z1 - z0)
            const double d = logits(i, 1) - logits(i, 0);
            p(i) = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
        }
    }
    return p;
}

ForwardCache run_forward(const MlpModel& model, const Eigen::MatrixXd& x, Mode mode,
                         const std::vector<Eigen::MatrixXd>* masks) {
    const auto& spec = model.spec;
    if (static_cast<std::size_t>(x.cols()) != spec.input_size())
        throw ValidationError(fmt::format("forward: batch width {} does not match input size {}", x.cols(), spec.input_size()));
    if (x.rows() == 0) throw ValidationError("forward: empty batch");

    ForwardCache cache;
    cache.mode = mode;
    const std::size_t hidden = spec.hidden_count();
    cache.hidden.resize(hidden);
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < hidden; ++l) {
        const Layer& layer = model.layers[l];
        HiddenCache& hc = cache.hidden[l];
        hc.input = a;
        Eigen::MatrixXd z = (a * layer.weight).rowwise() + layer.bias.row(0);
        if (layer.batch_norm) {
            if (mode == Mode::train) {
                if (z.rows() < 2) throw ValidationError("forward: batch norm in train mode needs a batch of at least 2");
                hc.batch_mean = z.colwise().mean();
                hc.batch_var = (z.rowwise() - hc.batch_mean).array().square().colwise().mean();
                hc.inv_std = (hc.batch_var.array() + kBatchNormEps).rsqrt();
                hc.normalized = ((z.rowwise() - hc.batch_mean).array().rowwise() * hc.inv_std.array()).matrix();
            } else {
                hc.inv_std = (layer.running_var.row(0).array() + kBatchNormEps).rsqrt();
                hc.normalized =
                    ((z.rowwise() - layer.running_mean.row(0)).array().rowwise() * hc.inv_std.array()).matrix();
            }
            z = (hc.normalized.array().rowwise() * layer.bn_scale.row(0).array()).matrix().rowwise() +
                layer.bn_shift.row(0);
        }
        hc.pre_relu = z;
        a = z.cwiseMax(0.0);
        if (mode == Mode::train && spec.dropout[l] > 0.0) {
            if (!masks) throw ValidationError("forward: dropout in train mode needs a random generator or masks");
            const auto& m = (*masks)[l];
            if (m.rows() != a.rows() || m.cols() != a.cols())
                throw ValidationError(fmt::format("forward: dropout mask {} has the wrong shape", l));
            hc.mask = m;
            a = a.cwiseProduct(m);
        }
        hc.output = a;
    }
    const Layer& out = model.layers.back();
    cache.final_input = a;
    cache.logits = (a * out.weight).rowwise() + out.bias.row(0);
    cache.probs = to_probability(cache.logits, spec.output);
    return cache;
}

}  // namespace

void MlpSpec::validate() const {
    if (layer_sizes.size() < 3) throw ValidationError("mlp: at least one hidden layer is required");
    for (auto s : layer_sizes)
        if (s == 0) throw ValidationError("mlp: layer sizes must be positive");
    const std::size_t out_units = output == OutputKind::sigmoid ? 1 : 2;
    if (layer_sizes.back() != out_units)
        throw ValidationError(fmt::format("mlp: output layer must have {} unit(s) for this head", out_units));
    if (dropout.size() != hidden_count()) throw ValidationError("mlp: one dropout rate per hidden layer is required");
    if (batch_norm.size() != hidden_count()) throw ValidationError("mlp: one batch-norm flag per hidden layer is required");
    for (double p : dropout)
        if (!(p >= 0.0 && p < 1.0)) throw ValidationError(fmt::format("mlp: dropout rate {} outside [0, 1)", p));
    if (!(label_smoothing >= 0.0 && label_smoothing < 0.5))
        throw ValidationError(fmt::format("mlp: label smoothing {} outside [0, 0.5)", label_smoothing));
}

nlohmann::json to_json(const MlpSpec& spec) {
    return {{"layer_sizes", spec.layer_sizes},
            {"dropout", spec.dropout},
            {"batch_norm", spec.batch_norm},
            {"activation", "relu"},
            {"output", spec.output == OutputKind::sigmoid ? "sigmoid-binary" : "two-logit-softmax"},
            {"label_smoothing", spec.label_smoothing}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec s;
    s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    const std::size_t hidden = s.layer_sizes.size() >= 2 ? s.layer_sizes.size() - 2 : 0;
    s.dropout = j.value("dropout", std::vector<double>(hidden, 0.0));
    s.batch_norm = j.value("batch_norm", std::vector<bool>(hidden, false));
    const auto out = j.value("output", std::string("sigmoid-binary"));
    if (out == "sigmoid-binary" || out == "sigmoid")
        s.output = OutputKind::sigmoid;
    else if (out == "two-logit-softmax" || out == "softmax2")
        s.output = OutputKind::softmax2;
    else
        throw ValidationError(fmt::format("mlp: unknown output kind '{}'", out));
    s.label_smoothing = j.value("label_smoothing", 0.0);
    if (j.contains("activation") && j.at("activation") != "relu") throw ValidationError("mlp: only relu activation is supported");
    s.validate();
    return s;
}

MlpModel make_model(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpModel model;
    model.spec = spec;
    Rng rng(seed);
    const std::size_t n_layers = spec.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto fan_in = static_cast<Eigen::Index>(spec.layer_sizes[l]);
        const auto fan_out = static_cast<Eigen::Index>(spec.layer_sizes[l + 1]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Layer layer;
        layer.weight.resize(fan_in, fan_out);
        for (Eigen::Index c = 0; c < fan_out; ++c)
            for (Eigen::Index r = 0; r < fan_in; ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
        layer.bias.resize(1, fan_out);
        for (Eigen::Index c = 0; c < fan_out; ++c) layer.bias(0, c) = rng.uniform(-bound, bound);
        if (l < spec.hidden_count() && spec.batch_norm[l]) {
            layer.batch_norm = true;
            layer.bn_scale = Eigen::MatrixXd::Ones(1, fan_out);
            layer.bn_shift = Eigen::MatrixXd::Zero(1, fan_out);
            layer.running_mean = Eigen::MatrixXd::Zero(1, fan_out);
            layer.running_var = Eigen::MatrixXd::Ones(1, fan_out);
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

std::vector<NamedTensor> trainable(MlpModel& model) {
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        out.push_back({fmt::format("layer{}.weight", l), &layer.weight});
        out.push_back({fmt::format("layer{}.bias", l), &layer.bias});
        if (layer.batch_norm) {
            out.push_back({fmt::format("layer{}.bn_scale", l), &layer.bn_scale});
            out.push_back({fmt::format("layer{}.bn_shift", l), &layer.bn_shift});
        }
    }
    return out;
}

std::vector<NamedTensor> all_tensors(MlpModel& model) {
    auto out = trainable(model);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        if (!layer.batch_norm) continue;
        out.push_back({fmt::format("layer{}.running_mean", l), &layer.running_mean});
        out.push_back({fmt::format("layer{}.running_var", l), &layer.running_var});
    }
    return out;
}

std::vector<Eigen::MatrixXd> sample_dropout_masks(const MlpSpec& spec, Eigen::Index batch, Rng& rng) {
    std::vector<Eigen::MatrixXd> masks(spec.hidden_count());
    for (std::size_t l = 0; l < spec.hidden_count(); ++l) {
        const double p = spec.dropout[l];
        if (p <= 0.0) continue;
        const double keep_scale = 1.0 / (1.0 - p);
        auto& m = masks[l];
        m.resize(batch, static_cast<Eigen::Index>(spec.layer_sizes[l + 1]));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform() < p ? 0.0 : keep_scale;
    }
    return masks;
}

ForwardCache forward(const MlpModel& model, const Eigen::MatrixXd& x, Mode mode, Rng* rng) {
    if (mode == Mode::eval) return run_forward(model, x, mode, nullptr);
    if (rng) {
        const auto masks = sample_dropout_masks(model.spec, x.rows(), *rng);
        return run_forward(model, x, mode, &masks);
    }
    return run_forward(model, x, mode, nullptr);
}

ForwardCache forward_with_masks(const MlpModel& model, const Eigen::MatrixXd& x, const std::vector<Eigen::MatrixXd>& masks) {
    if (masks.size() != model.spec.hidden_count()) throw ValidationError("forward: one dropout mask per hidden layer is required");
    return run_forward(model, x, Mode::train, &masks);
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Eigen::MatrixXd& grad_logits) {
    const Layer& out = model.layers.back();
    if (grad_logits.rows() != cache.logits.rows() || grad_logits.cols() != cache.logits.cols())
        throw ValidationError("backward: gradient shape does not match the logits");

    const std::size_t hidden = model.spec.hidden_count();
    std::vector<std::vector<Eigen::MatrixXd>> per_layer(model.layers.size());
    per_layer[hidden] = {cache.final_input.transpose() * grad_logits, grad_logits.colwise().sum()};
    Eigen::MatrixXd da = grad_logits * out.weight.transpose();

    for (std::size_t l = hidden; l-- > 0;) {
        const Layer& layer = model.layers[l];
        const HiddenCache& hc = cache.hidden[l];
        if (hc.mask.size() > 0) da = da.cwiseProduct(hc.mask);
        const Eigen::MatrixXd dy = (hc.pre_relu.array() > 0.0).select(da, 0.0);
        Eigen::MatrixXd dz;
        std::vector<Eigen::MatrixXd> grads;
        if (layer.batch_norm) {
            const Eigen::MatrixXd dscale = (dy.array() * hc.normalized.array()).colwise().sum();
            const Eigen::MatrixXd dshift = dy.colwise().sum();
            const Eigen::MatrixXd dxhat = (dy.array().rowwise() * layer.bn_scale.row(0).array()).matrix();
            if (cache.mode == Mode::train) {
                const double n = static_cast<double>(dy.rows());
                const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
                const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * hc.normalized.array()).colwise().sum();
                Eigen::ArrayXXd t = n * dxhat.array();
                t.rowwise() -= sum_dxhat.array();
                t -= hc.normalized.array().rowwise() * sum_dxhat_xhat.array();
                dz = (t.rowwise() * (hc.inv_std.array() / n)).matrix();
            } else {
                dz = (dxhat.array().rowwise() * hc.inv_std.array()).matrix();
            }
            grads = {hc.input.transpose() * dz, dz.colwise().sum(), dscale, dshift};
        } else {
            dz = dy;
            grads = {hc.input.transpose() * dz, dz.colwise().sum()};
        }
        da = dz * layer.weight.transpose();
        per_layer[l] = std::move(grads);
    }

    Gradients g;
    for (auto& v : per_layer)
        for (auto& t : v) g.tensors.push_back(std::move(t));
    g.input = std::move(da);
    return g;
}

void update_running_stats(MlpModel& model, const ForwardCache& cache, double momentum) {
    if (cache.mode != Mode::train) return;
    for (std::size_t l = 0; l < cache.hidden.size(); ++l) {
        Layer& layer = model.layers[l];
        if (!layer.batch_norm) continue;
        const auto& hc = cache.hidden[l];
        const double n = static_cast<double>(hc.input.rows());
        const Eigen::RowVectorXd unbiased = hc.batch_var * (n / (n - 1.0));
        layer.running_mean.row(0) = (1.0 - momentum) * layer.running_mean.row(0) + momentum * hc.batch_mean;
        layer.running_var.row(0) = (1.0 - momentum) * layer.running_var.row(0) + momentum * unbiased;
    }
}

Eigen::VectorXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& x) {
    return forward(model, x, Mode::eval).probs;
}

Eigen::MatrixXd extract_embedding(const MlpModel& model, const Eigen::MatrixXd& x, std::size_t layer_index) {
    if (layer_index >= model.spec.hidden_count())
        throw ValidationError(fmt::format("extract_embedding: layer {} is not a hidden layer (model has {})", layer_index,
                                          model.spec.hidden_count()));
    return forward(model, x, Mode::eval).hidden[layer_index].output;
}

}  // namespace mmfuse::neural

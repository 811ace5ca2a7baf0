#include "mmfuse/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "mmfuse/aggregate.hpp"
#include "mmfuse/curate.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/hash.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/neural/serialize.hpp"
#include "mmfuse/random.hpp"
#include "mmfuse/tabular.hpp"
#include "mmfuse/volume.hpp"

namespace fs = std::filesystem;

namespace mmfuse::pipeline {

// ---------------------------------------------------------------------------
// Profiles and configuration

neural::MlpSpec Profile::spec(std::size_t input) const {
    neural::MlpSpec s;
    s.layer_sizes.push_back(input);
    s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
    s.layer_sizes.push_back(output == neural::OutputKind::sigmoid ? 1 : 2);
    s.dropout = dropout;
    s.batch_norm = batch_norm;
    s.output = output;
    s.label_smoothing = label_smoothing;
    s.validate();
    return s;
}

Profile ehr_profile() {
    Profile p;
    p.hidden = {256, 128, 64};
    p.dropout = {0.3, 0.3, 0.0};
    p.batch_norm = {true, true, true};
    p.output = neural::OutputKind::softmax2;
    p.train.loss = neural::LossKind::weighted_ce;
    p.train.epochs = 50;
    p.embedding_layer = 2;
    p.resample = true;
    return p;
}

Profile radiology_mil_profile() {
    Profile p;
    p.hidden = {256, 128};
    p.dropout = {0.3, 0.3};
    p.batch_norm = {true, true};
    p.output = neural::OutputKind::sigmoid;
    p.train.loss = neural::LossKind::bce_pos_weight;
    p.train.epochs = 70;
    p.train.patience = 10;
    p.train.selection = neural::Selection::val_loss;
    p.train.sampler = neural::SamplerKind::balanced;
    p.train.feature_noise_sigma = 0.01;
    p.instances = true;
    return p;
}

Profile baseline_profile() {
    Profile p;
    p.hidden = {64};
    p.dropout = {0.3};
    p.batch_norm = {false};
    p.output = neural::OutputKind::softmax2;
    p.label_smoothing = 0.05;
    return p;
}

namespace {

nlohmann::json profile_json(const Profile& p) {
    auto train = neural::to_json(p.train);
    train.erase("seed");
    train.erase("threshold");
    nlohmann::json j{{"hidden", p.hidden},
                     {"dropout", p.dropout},
                     {"batch_norm", p.batch_norm},
                     {"output", p.output == neural::OutputKind::sigmoid ? "sigmoid-binary" : "two-logit-softmax"},
                     {"label_smoothing", p.label_smoothing},
                     {"train", train},
                     {"instances", p.instances},
                     {"resample", p.resample}};
    j["embedding_layer"] = p.embedding_layer ? nlohmann::json(*p.embedding_layer) : nlohmann::json(nullptr);
    return j;
}

Profile profile_from_json(const nlohmann::json& j) {
    Profile p;
    p.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    p.dropout = j.value("dropout", std::vector<double>(p.hidden.size(), 0.0));
    p.batch_norm = j.value("batch_norm", std::vector<bool>(p.hidden.size(), false));
    const auto out = j.value("output", std::string("two-logit-softmax"));
    if (out == "sigmoid-binary" || out == "sigmoid")
        p.output = neural::OutputKind::sigmoid;
    else if (out == "two-logit-softmax" || out == "softmax2")
        p.output = neural::OutputKind::softmax2;
    else
        throw ValidationError(fmt::format("profile: unknown output kind '{}'", out));
    p.label_smoothing = j.value("label_smoothing", 0.0);
    p.train = neural::train_config_from_json(j.value("train", nlohmann::json::object()));
    if (j.contains("embedding_layer") && !j.at("embedding_layer").is_null())
        p.embedding_layer = j.at("embedding_layer").get<std::size_t>();
    p.instances = j.value("instances", false);
    p.resample = j.value("resample", false);
    if (p.embedding_layer && *p.embedding_layer >= p.hidden.size())
        throw ValidationError(fmt::format("profile: embedding_layer {} but only {} hidden layers", *p.embedding_layer,
                                          p.hidden.size()));
    p.spec(1);  // shape checks
    return p;
}

using InputField = std::optional<fs::path> Inputs::*;
const std::array<std::pair<std::string_view, InputField>, 13> kInputFields{{
    {"clinical_features", &Inputs::clinical_features},
    {"radiology_features", &Inputs::radiology_features},
    {"histology_features", &Inputs::histology_features},
    {"clinical_probabilities", &Inputs::clinical_probabilities},
    {"radiology_probabilities", &Inputs::radiology_probabilities},
    {"histology_probabilities", &Inputs::histology_probabilities},
    {"radiology_instances", &Inputs::radiology_instances},
    {"labels", &Inputs::labels},
    {"clinical_records", &Inputs::clinical_records},
    {"manifest", &Inputs::manifest},
    {"rules", &Inputs::rules},
    {"volume", &Inputs::volume},
    {"radiology_model", &Inputs::radiology_model},
}};

const std::set<std::string> kFusionKeysAtTop{"seed", "split_fractions", "threshold"};

}  // namespace

RunConfig default_config() {
    RunConfig c;
    c.profiles["ehr"] = ehr_profile();
    c.profiles["radiology-mil"] = radiology_mil_profile();
    c.profiles["baseline"] = baseline_profile();
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& [name, field] : kInputFields)
        if (c.inputs.*field) inputs[std::string(name)] = (c.inputs.*field)->generic_string();
    nlohmann::json profiles = nlohmann::json::object();
    for (const auto& [name, p] : c.profiles) profiles[name] = profile_json(p);
    auto fusion = fusion::to_json(c.fusion);
    for (const auto& k : kFusionKeysAtTop) fusion.erase(k);
    fusion["train"].erase("seed");
    fusion["train"].erase("threshold");
    auto synth = synthetic::to_json(c.synthetic);
    synth.erase("seed");
    return {{"seed", c.seed},
            {"inputs", inputs},
            {"record_columns", c.record_columns},
            {"id_column", c.id_column},
            {"split_fractions", c.split_fractions},
            {"resample",
             {{"method", resample::to_string(c.resample.method)},
              {"k_neighbors", c.resample.k_neighbors},
              {"target_ratio", c.resample.target_ratio}}},
            {"profiles", profiles},
            {"fusion", fusion},
            {"synthetic", synth},
            {"volume_shape", c.volume_shape},
            {"cohort", c.cohort},
            {"threshold", c.threshold},
            {"radiology_pooling", c.radiology_pooling}};
}

RunConfig config_from_json(const nlohmann::json& user) {
    if (!user.is_object()) throw ValidationError("config: top level must be a JSON object");
    const RunConfig defaults = default_config();
    nlohmann::json j = to_json(defaults);
    for (const auto& [key, value] : user.items()) {
        if (key == "out_dir") continue;
        if (!j.contains(key)) throw ValidationError(fmt::format("config: unknown key '{}'", key));
    }
    if (user.contains("fusion"))
        for (const auto& k : kFusionKeysAtTop)
            if (user.at("fusion").contains(k))
                throw ValidationError(fmt::format("config: set '{}' at the top level, not under 'fusion'", k));
    if (user.contains("synthetic") && user.at("synthetic").contains("seed"))
        throw ValidationError("config: the synthetic seed is derived from the top-level 'seed'");
    if (user.contains("record_columns")) j.erase("record_columns");  // arrays replace, never merge
    j.merge_patch(user);

    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        if (user.contains("out_dir")) c.out_dir = user.at("out_dir").get<std::string>();
        for (const auto& [key, value] : j.at("inputs").items()) {
            auto it = std::find_if(kInputFields.begin(), kInputFields.end(), [&](const auto& f) { return f.first == key; });
            if (it == kInputFields.end()) throw ValidationError(fmt::format("config: unknown input '{}'", key));
            if (!value.is_null()) c.inputs.*(it->second) = fs::path(value.get<std::string>());
        }
        c.record_columns = j.at("record_columns");
        tabular::decls_from_json(c.record_columns);
        c.id_column = j.at("id_column").get<std::string>();
        c.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
        const auto& r = j.at("resample");
        c.resample.method = resample::parse_method(r.at("method").get<std::string>());
        c.resample.k_neighbors = r.at("k_neighbors").get<std::size_t>();
        c.resample.target_ratio = r.at("target_ratio").get<double>();
        for (const auto& [name, p] : j.at("profiles").items()) c.profiles[name] = profile_from_json(p);
        c.fusion = fusion::experiment_config_from_json(j.at("fusion"));
        c.synthetic = synthetic::synthetic_spec_from_json(j.at("synthetic"));
        c.volume_shape = j.at("volume_shape").get<std::array<std::size_t, 3>>();
        c.cohort = j.at("cohort").get<std::string>();
        c.threshold = j.at("threshold").get<double>();
        c.radiology_pooling = j.at("radiology_pooling").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("config: {}", e.what()));
    }
    double total = 0.0;
    for (double f : c.split_fractions) {
        if (!(f >= 0.0)) throw ValidationError("config: split fractions must be nonnegative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("config: split fractions must sum to 1");
    if (c.split_fractions[0] == 0.0 || c.split_fractions[1] == 0.0)
        throw ValidationError("config: training and validation fractions must be positive");
    if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ValidationError("config: threshold must lie in (0, 1)");
    if (c.radiology_pooling != "file" && c.radiology_pooling != "mean" && c.radiology_pooling != "max-weight")
        throw ValidationError(fmt::format("config: radiology_pooling must be file, mean or max-weight, not '{}'", c.radiology_pooling));
    for (auto d : c.volume_shape)
        if (d == 0) throw ValidationError("config: volume_shape entries must be positive");
    c.fusion.split_fractions = c.split_fractions;
    c.fusion.threshold = c.threshold;
    c.fusion.seed = c.seed;
    return c;
}

std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

RunConfig load_config(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return config_from_json(j);
}

std::map<std::string, std::string> shared_split(const LabelTable& labels, const std::array<double, 3>& fractions,
                                                std::uint64_t seed) {
    std::vector<std::size_t> order(labels.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels.ids[a] < labels.ids[b]; });
    std::vector<int> y;
    for (auto i : order) y.push_back(labels.labels[i]);
    const auto split = tabular::split_stratified(y, fractions, derive_seed(seed, "split"));
    std::map<std::string, std::string> tags;
    for (auto r : split.train) tags[labels.ids[order[r]]] = "train";
    for (auto r : split.validation) tags[labels.ids[order[r]]] = "validation";
    for (auto r : split.test) tags[labels.ids[order[r]]] = "test";
    return tags;
}

// ---------------------------------------------------------------------------
// Stage plumbing

namespace {

std::string display_path(const RunConfig& c, const fs::path& p) {
    const auto rel = p.lexically_normal().lexically_relative(c.out_dir.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

class Stage {
public:
    Stage(const RunConfig& c, std::string name) : config_(c), name_(std::move(name)), dir_(c.out_dir / name_) {
        fs::create_directories(dir_);
    }
    const fs::path& dir() const { return dir_; }

    fs::path input(const fs::path& p) {
        if (!fs::exists(p)) throw ValidationError(fmt::format("{}: input '{}' does not exist", name_, p.string()));
        inputs_.push_back(p);
        return p;
    }
    fs::path write(std::string_view file, std::string_view contents) {
        const auto path = dir_ / file;
        write_atomic(path, contents);
        outputs_.push_back(path);
        return path;
    }
    fs::path write_json(std::string_view file, nlohmann::json j) {
        j["config_hash"] = config_hash(config_);
        j["seed"] = config_.seed;
        return write(file, j.dump(2) + "\n");
    }
    void note(const fs::path& produced) { outputs_.push_back(produced); }
    void set(std::string key, nlohmann::json value) { extra_[std::move(key)] = std::move(value); }

    StageOutput finish() {
        nlohmann::json m{{"stage", name_},
                         {"config_hash", config_hash(config_)},
                         {"seed", config_.seed},
                         {"versions", {{"mmfuse", kVersion}, {"model_format", neural::kModelFormatVersion}}}};
        const auto files = [&](const std::vector<fs::path>& list) {
            auto arr = nlohmann::json::array();
            for (const auto& p : list) arr.push_back({{"path", display_path(config_, p)}, {"sha256", sha256_hex(read_text(p))}});
            return arr;
        };
        m["inputs"] = files(inputs_);
        m["outputs"] = files(outputs_);
        for (auto& [k, v] : extra_.items()) m[k] = v;
        write_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
        auto out = outputs_;
        out.push_back(dir_ / "manifest.json");
        return {dir_, out};
    }

private:
    const RunConfig& config_;
    std::string name_;
    fs::path dir_;
    std::vector<fs::path> inputs_, outputs_;
    nlohmann::json extra_ = nlohmann::json::object();
};

fs::path synth_path(const RunConfig& c, std::string_view file) { return c.out_dir / "synth" / file; }

// Configured path, else the synth stage's file; a missing default names the stage to run.
fs::path resolve(const RunConfig& c, const std::optional<fs::path>& configured, const fs::path& fallback,
                 std::string_view what, std::string_view producer) {
    if (configured) {
        if (!fs::exists(*configured)) throw ValidationError(fmt::format("{} file '{}' does not exist", what, configured->string()));
        return *configured;
    }
    if (!fs::exists(fallback))
        throw ValidationError(fmt::format("missing {} ('{}'): run `mmfuse {}` first or set it under \"inputs\" in the config",
                                          what, display_path(c, fallback), producer));
    return fallback;
}

std::optional<fs::path> Inputs::*feature_field(fusion::Modality m) {
    switch (m) {
        case fusion::Modality::clinical: return &Inputs::clinical_features;
        case fusion::Modality::radiology: return &Inputs::radiology_features;
        case fusion::Modality::histology: return &Inputs::histology_features;
    }
    return nullptr;
}

std::optional<fs::path> Inputs::*probability_field(fusion::Modality m) {
    switch (m) {
        case fusion::Modality::clinical: return &Inputs::clinical_probabilities;
        case fusion::Modality::radiology: return &Inputs::radiology_probabilities;
        case fusion::Modality::histology: return &Inputs::histology_probabilities;
    }
    return nullptr;
}

fs::path labels_path(const RunConfig& c) { return resolve(c, c.inputs.labels, synth_path(c, synthetic::kLabelFile), "labels", "synth"); }

Eigen::MatrixXd gather(const FeatureTable& t, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), t.data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.data.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

FeatureTable subset(const FeatureTable& t, std::span<const std::size_t> rows) {
    FeatureTable out;
    out.columns = t.columns;
    for (auto r : rows) out.ids.push_back(t.ids[r]);
    out.data = gather(t, rows);
    out.reindex();
    return out;
}

std::map<std::string, int> label_map(const LabelTable& t) {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i < t.ids.size(); ++i) m.emplace(t.ids[i], t.labels[i]);
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// synth / preprocess / filter-series / volume-prep

StageOutput run_synth(const RunConfig& c) {
    Stage stage(c, "synth");
    auto spec = c.synthetic;
    spec.seed = derive_seed(c.seed, "synth");
    const auto data = synthetic::generate_synthetic(spec);
    for (const auto& p : synthetic::write_synthetic(data, stage.dir())) stage.note(p);
    stage.set("synthetic_seed", spec.seed);
    stage.set("patients", spec.patients);
    return stage.finish();
}

StageOutput run_preprocess(const RunConfig& c) {
    Stage stage(c, "preprocess");
    const auto path = stage.input(resolve(c, c.inputs.clinical_records, synth_path(c, synthetic::kRecordsFile), "clinical records", "synth"));
    const auto records = tabular::records_from_csv(read_csv(path), c.id_column);
    const auto decls = tabular::decls_from_json(c.record_columns);

    const auto label_decl = std::find_if(decls.begin(), decls.end(), [](const auto& d) { return d.kind == tabular::ColumnKind::label; });
    if (label_decl == decls.end()) throw ValidationError("preprocess: record_columns must declare a label column");
    const std::vector<tabular::ColumnDecl> label_only{*label_decl};
    const auto label_matrix = tabular::transform(records, tabular::fit_schema(records, label_only));

    LabelTable labels{label_matrix.ids, label_matrix.labels};
    const auto tags = shared_split(labels, c.split_fractions, c.seed);
    std::vector<tabular::ClinicalRecord> train_records;
    for (const auto& r : records)
        if (tags.at(r.case_id) == "train") train_records.push_back(r);

    const auto schema = tabular::fit_schema(train_records, decls);
    const auto m = tabular::transform(records, schema);
    const auto table = make_table(m.ids, m.data, "x");
    FeatureTable named = table;
    named.columns = m.columns;

    std::string split_text = csv_row({"patient_id", "split"});
    for (const auto& id : m.ids) split_text += csv_row({id, tags.at(id)});
    stage.write("features.csv", features_csv(named));
    stage.write("labels.csv", labels_csv(labels));
    stage.write("split.csv", split_text);
    stage.write_json("schema.json", {{"columns", tabular::to_json(schema)}, {"feature_columns", m.columns}});
    stage.write_json("report.json", {{"rows", m.ids.size()},
                                      {"features", m.columns.size()},
                                      {"unknown_categories", m.unknown_categories},
                                      {"clipped_values", m.clipped_values},
                                      {"split_sizes", {{"train", train_records.size()}}}});
    return stage.finish();
}

StageOutput run_filter_series(const RunConfig& c) {
    Stage stage(c, "filter-series");
    if (!c.inputs.manifest) throw ValidationError("filter-series: no manifest given (--manifest or inputs.manifest)");
    const auto manifest = curate::manifest_from_csv(read_csv(stage.input(*c.inputs.manifest)));
    const auto rules = c.inputs.rules ? curate::rules_from_json(nlohmann::json::parse(read_text(stage.input(*c.inputs.rules))))
                                      : curate::default_rules();
    const auto decisions = curate::classify_all(manifest, rules);
    const auto summary = curate::summarize(manifest, decisions);
    stage.write("decisions.csv", curate::decisions_csv(manifest, decisions));
    stage.write_json("summary.json", {{"cohort", c.cohort}, {"rules_version", rules.version}, {"summary", curate::to_json(summary)}});
    stage.write("summary.txt", curate::render_summary_table(summary, c.cohort));
    return stage.finish();
}

StageOutput run_volume_prep(const RunConfig& c) {
    Stage stage(c, "volume-prep");
    if (!c.inputs.volume) throw ValidationError("volume-prep: no volume given (--input or inputs.volume)");
    const auto src = stage.input(*c.inputs.volume);
    stage.input(fs::path(src.string() + ".json"));
    const auto v = volume::read_raw(src);
    auto out = volume::resample_trilinear(volume::clip_normalize(v), c.volume_shape);
    out.units = "z-score";
    const auto target = stage.dir() / src.filename();
    volume::write_raw(out, target);
    stage.note(target);
    stage.note(fs::path(target.string() + ".json"));
    stage.set("source_shape", v.shape);
    stage.set("target_shape", out.shape);
    return stage.finish();
}

// ---------------------------------------------------------------------------
// Unimodal training and evaluation

Scored score_model(const neural::MlpModel& model, const nlohmann::json& metadata, const FeatureTable& table,
                   const LabelTable& labels) {
    const auto truth = label_map(labels);
    const double threshold = metadata.value("threshold", 0.5);
    if (table.width() != model.spec.input_size())
        throw ValidationError(fmt::format("model expects {} features, table has {}", model.spec.input_size(), table.width()));
    const Eigen::VectorXd p = neural::predict_proba(model, table.data);
    Scored s;
    if (metadata.value("instances", false)) {
        const auto groups = aggregate::group_rows(table.ids);
        for (std::size_t g = 0; g < groups.keys.size(); ++g) {
            std::vector<double> probs;
            for (auto r : groups.rows[g]) probs.push_back(p(static_cast<Eigen::Index>(r)));
            s.patients.push_back(groups.keys[g]);
            s.probs.push_back(aggregate::max_prob_inference(probs));
        }
    } else {
        s.patients = table.ids;
        s.probs.assign(p.data(), p.data() + p.size());
    }
    for (const auto& id : s.patients) {
        auto it = truth.find(id);
        if (it == truth.end()) throw ValidationError(fmt::format("no label for patient '{}'", id));
        s.labels.push_back(it->second);
    }
    s.report = metrics::evaluate(s.labels, s.probs, threshold);
    return s;
}

std::string unimodal_run_name(const UnimodalOptions& o) {
    return fmt::format("{}-{}", fusion::kModalityNames[static_cast<std::size_t>(o.modality)], o.profile);
}

StageOutput run_train_unimodal(const RunConfig& c, const UnimodalOptions& o) {
    auto pit = c.profiles.find(o.profile);
    if (pit == c.profiles.end()) throw ValidationError(fmt::format("train-unimodal: unknown profile '{}'", o.profile));
    const Profile& profile = pit->second;
    const std::string run = unimodal_run_name(o);
    Stage stage(c, "train-unimodal/" + run);
    const auto m = static_cast<std::size_t>(o.modality);

    // feature source: explicit option, then config, then the upstream stage that produces it
    fs::path features_path;
    fs::path label_path;
    if (o.features) {
        features_path = resolve(c, o.features, {}, "features", "");
        label_path = labels_path(c);
    } else if (profile.instances) {
        features_path = resolve(c, c.inputs.radiology_instances, synth_path(c, synthetic::kInstanceFile), "scan-level features", "synth");
        label_path = labels_path(c);
    } else if (o.profile == "ehr") {
        features_path = resolve(c, std::nullopt, c.out_dir / "preprocess" / "features.csv", "preprocessed clinical features", "preprocess");
        label_path = resolve(c, std::nullopt, c.out_dir / "preprocess" / "labels.csv", "preprocessed labels", "preprocess");
    } else {
        features_path = resolve(c, c.inputs.*feature_field(o.modality), synth_path(c, synthetic::kFeatureFiles[m]),
                                fmt::format("{} features", fusion::kModalityNames[m]), "synth");
        label_path = labels_path(c);
    }
    stage.input(features_path);
    stage.input(label_path);
    const FeatureTable table = profile.instances ? ingest_instances(features_path, 0) : ingest_features(features_path, 0);
    const LabelTable labels = ingest_labels(label_path);
    const auto tags = shared_split(labels, c.split_fractions, c.seed);
    const auto truth = label_map(labels);

    std::vector<std::size_t> tr, va, te;
    for (std::size_t r = 0; r < table.ids.size(); ++r) {
        auto it = tags.find(table.ids[r]);
        if (it == tags.end()) throw ValidationError(fmt::format("train-unimodal: patient '{}' has no label", table.ids[r]));
        (it->second == "train" ? tr : it->second == "validation" ? va : te).push_back(r);
    }
    if (tr.empty() || va.empty()) throw ValidationError("train-unimodal: empty training or validation split");
    const auto y_of = [&](std::span<const std::size_t> rows) {
        std::vector<int> y;
        for (auto r : rows) y.push_back(truth.at(table.ids[r]));
        return y;
    };

    Eigen::MatrixXd x_train = gather(table, tr);
    std::vector<int> y_train = y_of(tr);
    std::size_t synthetic_rows = 0;
    if (profile.resample && c.resample.method != resample::Method::none) {
        auto plan = c.resample;
        plan.seed = derive_seed(c.seed, "resample:" + run);
        auto r = resample::apply(x_train, y_train, plan);
        synthetic_rows = r.origins.size();
        x_train = std::move(r.X);
        y_train = std::move(r.y);
    }

    auto cfg = profile.train;
    cfg.seed = derive_seed(c.seed, "train:" + run);
    cfg.threshold = c.threshold;
    const auto spec = profile.spec(table.width());
    const auto trained = neural::train(neural::make_model(spec, derive_seed(c.seed, "init:" + run)), x_train, y_train,
                                       gather(table, va), y_of(va), cfg);

    const nlohmann::json metadata{{"config_hash", config_hash(c)},
                                  {"seed", c.seed},
                                  {"run", run},
                                  {"modality", fusion::kModalityNames[m]},
                                  {"profile", o.profile},
                                  {"instances", profile.instances},
                                  {"threshold", c.threshold},
                                  {"train", neural::to_json(cfg)},
                                  {"best_epoch", trained.best_epoch}};
    const auto model_path = stage.write("model.bin", neural::serialize_model(trained.model, metadata));

    // validation metrics are computed from the written files, exactly as `evaluate` will
    const auto heldout = stage.write("heldout_validation.csv", features_csv(subset(table, va)));
    const auto reloaded = neural::load_model(model_path);
    const auto val = score_model(reloaded.model, reloaded.metadata, ingest_instances(heldout, 0), labels);
    nlohmann::json out{{"run", run}, {"best_epoch", trained.best_epoch}, {"stopped_early", trained.stopped_early},
                       {"synthetic_training_rows", synthetic_rows}, {"validation", metrics::to_json(val.report)}};
    if (!te.empty()) out["test"] = metrics::to_json(score_model(trained.model, metadata, subset(table, te), labels).report);

    const auto scored = score_model(trained.model, metadata, table, labels);
    stage.write("probabilities.csv", probabilities_csv({scored.patients, scored.probs}));
    if (profile.embedding_layer) {
        const Eigen::MatrixXd emb = neural::extract_embedding(trained.model, table.data, *profile.embedding_layer);
        stage.write("embeddings.csv", features_csv(make_table(table.ids, emb, "e")));
    }
    stage.write("history.csv", neural::history_csv(trained.history));
    stage.write_json("metrics.json", out);
    return stage.finish();
}

StageOutput run_evaluate(const RunConfig& c, const EvaluateOptions& o) {
    Stage stage(c, "evaluate/" + o.name);
    const auto loaded = neural::load_model(stage.input(o.model));
    const auto table = ingest_instances(stage.input(o.features), 0);
    const auto labels = ingest_labels(stage.input(o.labels ? *o.labels : labels_path(c)));
    const auto s = score_model(loaded.model, loaded.metadata, table, labels);
    stage.write("probabilities.csv", probabilities_csv({s.patients, s.probs}));
    stage.write("roc.csv", metrics::roc_csv(s.report.roc));
    stage.write("pr.csv", metrics::pr_csv(s.report.pr));
    stage.write_json("report.json", {{"model", display_path(c, o.model)},
                                     {"model_config_hash", loaded.metadata.value("config_hash", "")},
                                     {"report", metrics::to_json(s.report)}});
    stage.write("table.txt", metrics::render_metric_table(s.report, loaded.metadata.value("run", std::string("model"))));
    return stage.finish();
}

// ---------------------------------------------------------------------------
// fuse / report

// Patient-level radiology vectors from the scan-level file.
FeatureTable pool_radiology(const RunConfig& c, Stage& stage) {
    const auto scans = ingest_instances(
        stage.input(resolve(c, c.inputs.radiology_instances, synth_path(c, synthetic::kInstanceFile), "scan-level features", "synth")), 0);
    std::optional<Eigen::VectorXd> scores;
    if (c.radiology_pooling == "max-weight") {
        const UnimodalOptions mil{fusion::Modality::radiology, "radiology-mil", std::nullopt};
        const auto fallback = c.out_dir / "train-unimodal" / unimodal_run_name(mil) / "model.bin";
        const auto loaded = neural::load_model(stage.input(resolve(c, c.inputs.radiology_model, fallback, "radiology scan model",
                                                                   "train-unimodal --modality radiology --profile radiology-mil")));
        if (loaded.model.spec.input_size() != scans.width())
            throw ValidationError(fmt::format("radiology model expects {} features, scans have {}", loaded.model.spec.input_size(),
                                              scans.width()));
        scores = neural::predict_proba(loaded.model, scans.data);
    }
    const auto groups = aggregate::group_rows(scans.ids);
    Eigen::MatrixXd pooled(static_cast<Eigen::Index>(groups.keys.size()), scans.data.cols());
    for (std::size_t g = 0; g < groups.keys.size(); ++g) {
        aggregate::EmbeddingBag bag;
        bag.patient_id = groups.keys[g];
        bag.instances = gather(scans, groups.rows[g]);
        if (scores) {
            std::vector<double> w;
            for (auto r : groups.rows[g]) w.push_back((*scores)(static_cast<Eigen::Index>(r)));
            pooled.row(static_cast<Eigen::Index>(g)) = aggregate::max_weight_instance(bag, w);
        } else {
            pooled.row(static_cast<Eigen::Index>(g)) = aggregate::mean_pool(bag);
        }
    }
    return make_table(groups.keys, std::move(pooled), "f");
}

StageOutput run_fuse(const RunConfig& c) {
    Stage stage(c, "fuse");
    std::array<std::optional<FeatureTable>, fusion::kModalityCount> features;
    std::array<std::optional<ProbabilityTable>, fusion::kModalityCount> probs;
    std::array<std::size_t, fusion::kModalityCount> widths{};
    for (std::size_t m = 0; m < fusion::kModalityCount; ++m) {
        const auto mod = static_cast<fusion::Modality>(m);
        const auto& prob_path = c.inputs.*probability_field(mod);
        if (prob_path) probs[m] = ingest_probabilities(stage.input(resolve(c, prob_path, {}, "probabilities", "")));
        const auto& feat_path = c.inputs.*feature_field(mod);
        if (mod == fusion::Modality::radiology && c.radiology_pooling != "file") {
            features[m] = pool_radiology(c, stage);
            widths[m] = features[m]->width();
        } else if (feat_path || !prob_path) {
            const auto path = stage.input(resolve(c, feat_path, synth_path(c, synthetic::kFeatureFiles[m]),
                                                  fmt::format("{} features", fusion::kModalityNames[m]), "synth"));
            features[m] = ingest_features(path, 0);
            widths[m] = features[m]->width();
        }
    }
    const auto labels = ingest_labels(stage.input(labels_path(c)));
    const fusion::ModalityBundle bundle(features, probs, widths);
    const auto result = fusion::run_fusion_experiment(bundle, labels, c.fusion);

    const bool all_features = std::all_of(features.begin(), features.end(), [](const auto& f) { return f.has_value(); });
    if (all_features) {
        const auto defaults = fusion::modality_means(bundle, result.split.train);
        stage.write("fused_features.csv", features_csv(fusion::early_concat(bundle, c.fusion.concat_policy, &defaults)));
    }
    std::vector<std::string> header{"patient_id"};
    for (const auto& [name, values] : result.fused) header.push_back(name);
    std::string fused = csv_row(header);
    for (std::size_t p = 0; p < result.patients.size(); ++p) {
        std::vector<std::string> row{result.patients[p]};
        for (const auto& [name, values] : result.fused) row.push_back(format_double(values[p]));
        fused += csv_row(row);
    }
    stage.write("fused_probabilities.csv", fused);
    stage.write_json("report.json", fusion::to_json(result));
    stage.write("table.txt", fusion::render_experiment_table(result));
    return stage.finish();
}

StageOutput run_report(const RunConfig& c, bool force) {
    const auto fuse_report = c.out_dir / "fuse" / "report.json";
    if (!fs::exists(fuse_report))
        throw ValidationError(fmt::format("report: '{}' is missing; run `mmfuse fuse` first", display_path(c, fuse_report)));

    // every manifest under the run directory, except earlier reports
    std::vector<fs::path> manifests;
    for (const auto& entry : fs::recursive_directory_iterator(c.out_dir))
        if (entry.path().filename() == "manifest.json" && entry.path().parent_path() != c.out_dir / "report")
            manifests.push_back(entry.path());
    std::sort(manifests.begin(), manifests.end());
    std::map<std::string, std::vector<std::string>> by_hash;
    for (const auto& p : manifests) {
        const auto j = nlohmann::json::parse(read_text(p));
        by_hash[j.at("config_hash").get<std::string>()].push_back(j.at("stage").get<std::string>());
    }
    if (by_hash.size() > 1 && !force) {
        std::string detail;
        for (const auto& [h, stages] : by_hash) detail += fmt::format("\n  {}: {}", h.substr(0, 12), fmt::join(stages, ", "));
        throw ValidationError(fmt::format("report: stages were produced under different configs (use --force to combine):{}", detail));
    }

    Stage stage(c, "report");
    const auto fused = nlohmann::json::parse(read_text(stage.input(fuse_report)));
    std::vector<metrics::ComparisonRow> rows;
    nlohmann::json out_rows = nlohmann::json::array();
    for (const auto& r : fused.at("rows")) {
        const auto rep = metrics::report_from_json(r.at("report"));
        rows.push_back({r.at("model").get<std::string>(), rep.metrics});
        out_rows.push_back({{"model", r.at("model")},
                            {"balanced_accuracy", rep.metrics.balanced_accuracy},
                            {"f1", rep.metrics.f1},
                            {"precision", rep.metrics.precision},
                            {"recall", rep.metrics.recall},
                            {"source_config_hash", fused.at("config_hash")}});
    }
    nlohmann::json unimodal = nlohmann::json::object();
    const auto runs_dir = c.out_dir / "train-unimodal";
    if (fs::exists(runs_dir)) {
        std::vector<fs::path> runs;
        for (const auto& e : fs::directory_iterator(runs_dir))
            if (fs::exists(e.path() / "metrics.json")) runs.push_back(e.path());
        std::sort(runs.begin(), runs.end());
        for (const auto& r : runs) {
            const auto j = nlohmann::json::parse(read_text(stage.input(r / "metrics.json")));
            unimodal[r.filename().string()] = {{"validation", j.at("validation").at("metrics")},
                                               {"test", j.contains("test") ? j.at("test").at("metrics") : nlohmann::json(nullptr)},
                                               {"config_hash", j.at("config_hash")}};
        }
    }
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [h, stages] : by_hash) hashes[h] = stages;
    const auto table = metrics::render_comparison_table(rows, "Unified comparison (test split)");
    stage.write_json("report.json", {{"columns", {"Model", "Balanced Accuracy", "F1 Score", "Precision", "Recall"}},
                                     {"rows", out_rows},
                                     {"unimodal_runs", unimodal},
                                     {"stage_hashes", hashes},
                                     {"forced", by_hash.size() > 1}});
    stage.write("table.txt", table);
    return stage.finish();
}

}  // namespace mmfuse::pipeline

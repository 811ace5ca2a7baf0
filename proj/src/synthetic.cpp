#include "mmfuse/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfuse/aggregate.hpp"
#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/random.hpp"

namespace mmfuse::synthetic {

void SyntheticSpec::validate() const {
    if (patients < 2) throw ValidationError("synthetic: need at least 2 patients");
    for (std::size_t m = 0; m < 3; ++m) {
        if (dims[m] == 0) throw ValidationError("synthetic: modality dims must be positive");
        if (!(missingness[m] >= 0.0 && missingness[m] <= 1.0))
            throw ValidationError(fmt::format("synthetic: missingness {} is outside [0, 1]", missingness[m]));
        if (!std::isfinite(signal[m])) throw ValidationError("synthetic: signal strengths must be finite");
    }
    if (std::all_of(missingness.begin(), missingness.end(), [](double r) { return r >= 1.0; }))
        throw ValidationError("synthetic: every modality cannot be fully missing");
    if (!(positive_rate >= 0.0 && positive_rate <= 1.0)) throw ValidationError("synthetic: positive_rate must be in [0, 1]");
    if (!(complementarity >= 0.0) || !std::isfinite(complementarity))
        throw ValidationError("synthetic: complementarity must be finite and nonnegative");
    if (informative_dims == 0) throw ValidationError("synthetic: informative_dims must be positive");
    if (max_scans == 0) throw ValidationError("synthetic: max_scans must be positive");
    if (!(label_noise >= 0.0) || !(scan_noise >= 0.0)) throw ValidationError("synthetic: noise levels must be nonnegative");
}

nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"patients", s.patients},
            {"dims", s.dims},
            {"signal", s.signal},
            {"complementarity", s.complementarity},
            {"feature_shift", s.feature_shift},
            {"informative_dims", s.informative_dims},
            {"label_noise", s.label_noise},
            {"missingness", s.missingness},
            {"positive_rate", s.positive_rate},
            {"max_scans", s.max_scans},
            {"scan_noise", s.scan_noise},
            {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.patients = j.value("patients", s.patients);
    s.dims = j.value("dims", s.dims);
    s.signal = j.value("signal", s.signal);
    s.complementarity = j.value("complementarity", s.complementarity);
    s.feature_shift = j.value("feature_shift", s.feature_shift);
    s.informative_dims = j.value("informative_dims", s.informative_dims);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.missingness = j.value("missingness", s.missingness);
    s.positive_rate = j.value("positive_rate", s.positive_rate);
    s.max_scans = j.value("max_scans", s.max_scans);
    s.scan_noise = j.value("scan_noise", s.scan_noise);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

namespace {

std::string patient_id(std::size_t i) { return fmt::format("P{:04d}", i + 1); }

const std::array<std::string_view, 4> kGrades{"G1", "G2", "G3", "G4"};
const std::array<std::string_view, 4> kStages{"Stage I", "Stage II", "Stage III", "Stage IV"};
const std::array<std::string_view, 3> kRaces{"white", "black or african american", "asian"};

std::string records_csv(const std::vector<double>& z, const std::vector<int>& labels, double strength, Rng& rng) {
    std::string out = csv_row({"case_id", "age_at_diagnosis", "gender", "race", "tumor_grade", "ajcc_stage",
                               "tumor_size_cm", "bap1_mutation", "recurrence"});
    const auto bucket = [](double v) { return static_cast<std::size_t>(std::clamp(std::floor(1.5 + v), 0.0, 3.0)); };
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double s = strength * z[i];
        std::vector<std::string> row;
        row.push_back(patient_id(i));
        row.push_back(rng.bernoulli(0.03) ? "" : fmt::format("{}", static_cast<int>(std::round(rng.normal(60.0 + 3.0 * s, 11.0)))));
        row.emplace_back(rng.bernoulli(0.65) ? "male" : "female");
        row.emplace_back(rng.bernoulli(0.02) ? std::string_view("not reported") : kRaces[rng.index(kRaces.size())]);
        row.emplace_back(kGrades[bucket(0.8 * s + rng.normal(0.0, 0.8))]);
        row.emplace_back(rng.bernoulli(0.05) ? std::string_view("") : kStages[bucket(0.8 * s + rng.normal(0.0, 0.8))]);
        row.push_back(format_double(std::round(10.0 * std::max(0.5, rng.normal(5.5 + 1.5 * s, 2.5))) / 10.0));
        row.emplace_back(rng.bernoulli(0.1) ? "-1" : (rng.bernoulli(0.12 + 0.08 * std::tanh(s)) ? "1" : "0"));
        row.emplace_back(labels[i] ? "yes" : "no");
        out += csv_row(row);
    }
    return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.patients;
    Rng latent_rng(derive_seed(spec.seed, "synthetic:latent"));
    std::array<std::vector<double>, 3> z;
    for (auto& v : z) {
        v.resize(n);
        for (auto& x : v) x = latent_rng.normal();
    }
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i)
        score[i] = spec.signal[0] * z[0][i] + spec.signal[1] * z[1][i] + spec.signal[2] * z[2][i] +
                   spec.label_noise * latent_rng.normal();

    // the top round(rate * n) scores are positive, so prevalence is exact
    const auto positives = static_cast<std::size_t>(std::llround(spec.positive_rate * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    std::vector<int> labels(n, 0);
    for (std::size_t r = 0; r < positives; ++r) labels[order[r]] = 1;

    // presence: each modality dropped independently, at least one kept
    Rng miss_rng(derive_seed(spec.seed, "synthetic:missingness"));
    std::vector<std::array<bool, 3>> present(n);
    for (auto& p : present) {
        for (std::size_t m = 0; m < 3; ++m) p[m] = !miss_rng.bernoulli(spec.missingness[m]);
        if (!p[0] && !p[1] && !p[2]) {
            std::array<std::size_t, 3> candidates{};
            std::size_t count = 0;
            for (std::size_t m = 0; m < 3; ++m)
                if (spec.missingness[m] < 1.0) candidates[count++] = m;
            p[candidates[miss_rng.index(count)]] = true;
        }
    }

    static constexpr std::array<std::string_view, 3> kStage{"synthetic:clinical", "synthetic:radiology",
                                                            "synthetic:histology"};
    SyntheticData out;
    for (std::size_t m = 0; m < 3; ++m) {
        Rng rng(derive_seed(spec.seed, kStage[m]));
        const std::size_t d = spec.dims[m];
        const std::size_t k = std::min(spec.informative_dims, d);
        // a random unit direction spread over k randomly chosen columns
        std::vector<std::size_t> cols(d);
        std::iota(cols.begin(), cols.end(), std::size_t{0});
        rng.shuffle(cols);
        Eigen::RowVectorXd direction = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(d));
        for (std::size_t c = 0; c < k; ++c) direction(static_cast<Eigen::Index>(cols[c])) = rng.normal();
        direction /= direction.norm();
        const double shift = spec.complementarity * spec.feature_shift;

        std::vector<std::string> ids;
        std::vector<Eigen::RowVectorXd> rows;
        for (std::size_t i = 0; i < n; ++i) {
            Eigen::RowVectorXd x(static_cast<Eigen::Index>(d));
            for (Eigen::Index c = 0; c < x.size(); ++c) x(c) = rng.normal();
            x += shift * z[m][i] * direction;
            if (!present[i][m]) continue;  // drawn anyway so presence does not shift the stream
            ids.push_back(patient_id(i));
            rows.push_back(std::move(x));
        }
        Eigen::MatrixXd data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < rows.size(); ++r) data.row(static_cast<Eigen::Index>(r)) = rows[r];

        if (m == 1) {
            // several noisy scans per patient; the patient-level file is their mean
            std::vector<std::string> scan_ids;
            std::vector<Eigen::RowVectorXd> scans;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                aggregate::EmbeddingBag bag;
                bag.patient_id = ids[r];
                const std::size_t count = 1 + rng.index(spec.max_scans);
                bag.instances.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
                for (std::size_t s = 0; s < count; ++s) {
                    Eigen::RowVectorXd x = rows[r];
                    for (Eigen::Index c = 0; c < x.size(); ++c) x(c) += spec.scan_noise * rng.normal();
                    bag.instances.row(static_cast<Eigen::Index>(s)) = x;
                    scan_ids.push_back(ids[r]);
                    scans.push_back(std::move(x));
                }
                data.row(static_cast<Eigen::Index>(r)) = aggregate::mean_pool(bag);
            }
            Eigen::MatrixXd inst(static_cast<Eigen::Index>(scans.size()), static_cast<Eigen::Index>(d));
            for (std::size_t r = 0; r < scans.size(); ++r) inst.row(static_cast<Eigen::Index>(r)) = scans[r];
            out.radiology_instances = make_table(std::move(scan_ids), std::move(inst), "f");
        }
        out.features[m] = make_table(std::move(ids), std::move(data), "f");
    }

    for (std::size_t i = 0; i < n; ++i) {
        out.labels.ids.push_back(patient_id(i));
        out.labels.labels.push_back(labels[i]);
    }
    Rng record_rng(derive_seed(spec.seed, "synthetic:records"));
    out.clinical_records = records_csv(z[0], labels, spec.complementarity * spec.signal[0], record_rng);
    return out;
}

std::vector<std::filesystem::path> write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    const auto put = [&](std::string_view name, const std::string& text) {
        const auto path = dir / name;
        write_atomic(path, text);
        written.push_back(path);
    };
    for (std::size_t m = 0; m < 3; ++m) put(kFeatureFiles[m], features_csv(data.features[m]));
    put(kInstanceFile, features_csv(data.radiology_instances));
    put(kLabelFile, labels_csv(data.labels));
    put(kRecordsFile, data.clinical_records);
    return written;
}

nlohmann::json default_record_columns() {
    return nlohmann::json::array({
        {{"name", "case_id"}, {"kind", "identifier"}},
        {{"name", "age_at_diagnosis"}, {"kind", "numeric"}},
        {{"name", "gender"}, {"kind", "categorical"}, {"levels", {"female", "male"}}},
        {{"name", "race"}, {"kind", "categorical"}},
        {{"name", "tumor_grade"}, {"kind", "ordinal"}, {"levels", {"G1", "G2", "G3", "G4"}}},
        {{"name", "ajcc_stage"}, {"kind", "ordinal"}, {"levels", {"Stage I", "Stage II", "Stage III", "Stage IV"}}},
        {{"name", "tumor_size_cm"}, {"kind", "numeric"}},
        {{"name", "bap1_mutation"}, {"kind", "numeric"}, {"sentinel_missing", true}},
        {{"name", "recurrence"}, {"kind", "label"}, {"positive", "yes"}},
    });
}

}  // namespace mmfuse::synthetic

#include "mmfuse/neural/serialize.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"

namespace mmfuse::neural {
namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'M', 'O', 'D', 'E', 'L'};

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw ValidationError("model file truncated");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string serialize_model(const MlpModel& model, const nlohmann::json& metadata) {
    MlpModel copy = model;
    const auto tensors = all_tensors(copy);
    nlohmann::json header;
    header["format_version"] = kModelFormatVersion;
    header["spec"] = to_json(model.spec);
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}});
    header["metadata"] = metadata;
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kModelFormatVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& t : tensors) {
        const auto& m = *t.value;
        for (Eigen::Index i = 0; i < m.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.data()[i]));
    }
    return out;
}

LoadedModel deserialize_model(std::string_view bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw ValidationError("not a model file (bad magic)");
    std::size_t pos = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kModelFormatVersion) throw ValidationError(fmt::format("unsupported model format version {}", version));
    const auto header_len = get_le<std::uint64_t>(bytes, pos);
    if (pos + header_len > bytes.size()) throw ValidationError("model file truncated in header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("model header is not valid JSON: {}", e.what()));
    }
    pos += header_len;

    LoadedModel out;
    out.model = make_model(spec_from_json(header.at("spec")), 0);
    out.metadata = header.value("metadata", nlohmann::json::object());
    auto tensors = all_tensors(out.model);
    const auto& listed = header.at("tensors");
    if (listed.size() != tensors.size())
        throw ValidationError(fmt::format("model lists {} tensors, spec implies {}", listed.size(), tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& m = *tensors[i].value;
        if (listed[i].at("name") != tensors[i].name || listed[i].at("rows").get<Eigen::Index>() != m.rows() ||
            listed[i].at("cols").get<Eigen::Index>() != m.cols())
            throw ValidationError(fmt::format("model tensor {} does not match the spec", i));
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
    }
    if (pos != bytes.size()) throw ValidationError("model file has trailing bytes");
    return out;
}

void save_model(const MlpModel& model, const nlohmann::json& metadata, const std::filesystem::path& path) {
    write_atomic(path, serialize_model(model, metadata));
}

LoadedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_text(path)); }

}  // namespace mmfuse::neural

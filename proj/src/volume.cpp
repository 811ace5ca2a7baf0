#include "mmfuse/volume.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "mmfuse/error.hpp"
#include "mmfuse/io.hpp"

namespace mmfuse::volume {
namespace {

// Source coordinate for output index i along one axis.
struct AxisSample {
    std::size_t lo;
    std::size_t hi;
    double t;
};

std::vector<AxisSample> axis_samples(std::size_t source, std::size_t target) {
    std::vector<AxisSample> out(target);
    for (std::size_t i = 0; i < target; ++i) {
        if (target == 1 || source == 1) {
            out[i] = {0, 0, 0.0};
            continue;
        }
        const double pos = static_cast<double>(i) * static_cast<double>(source - 1) / static_cast<double>(target - 1);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        lo = std::min(lo, source - 1);
        const std::size_t hi = std::min(lo + 1, source - 1);
        out[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return out;
}

double lerp(double a, double b, double t) {
    if (t == 0.0) return a;
    return std::clamp(a + t * (b - a), std::min(a, b), std::max(a, b));
}

std::filesystem::path sidecar(const std::filesystem::path& p) {
    auto s = p;
    s += ".json";
    return s;
}

}  // namespace

Volume::Volume(std::array<std::size_t, 3> s, double fill) : shape(s), voxels(s[0] * s[1] * s[2], fill) {}

void Volume::validate() const {
    if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) throw ValidationError("volume: every dimension must be >= 1");
    if (voxels.size() != size())
        throw ValidationError(fmt::format("volume: {} voxels for shape {}x{}x{}", voxels.size(), shape[0], shape[1], shape[2]));
    for (double v : voxels)
        if (!std::isfinite(v)) throw ValidationError("volume: non-finite voxel");
}

Volume clip_normalize(const Volume& v, double lo, double hi, double mu, double sigma) {
    if (!(sigma > 0.0)) throw ValidationError(fmt::format("clip_normalize: sigma {} must be positive", sigma));
    if (!(lo < hi)) throw ValidationError("clip_normalize: lo must be below hi");
    v.validate();
    Volume out = v;
    for (double& x : out.voxels) x = (std::clamp(x, lo, hi) - mu) / sigma;
    return out;
}

Volume resample_trilinear(const Volume& v, std::array<std::size_t, 3> target) {
    if (target[0] == 0 || target[1] == 0 || target[2] == 0) throw ValidationError("resample: target dims must be >= 1");
    v.validate();
    if (target == v.shape) return v;
    const auto zs = axis_samples(v.shape[0], target[0]);
    const auto ys = axis_samples(v.shape[1], target[1]);
    const auto xs = axis_samples(v.shape[2], target[2]);
    Volume out(target);
    out.units = v.units;
    for (std::size_t z = 0; z < target[0]; ++z) {
        const auto& sz = zs[z];
        for (std::size_t y = 0; y < target[1]; ++y) {
            const auto& sy = ys[y];
            for (std::size_t x = 0; x < target[2]; ++x) {
                const auto& sx = xs[x];
                const double c00 = lerp(v.at(sz.lo, sy.lo, sx.lo), v.at(sz.lo, sy.lo, sx.hi), sx.t);
                const double c01 = lerp(v.at(sz.lo, sy.hi, sx.lo), v.at(sz.lo, sy.hi, sx.hi), sx.t);
                const double c10 = lerp(v.at(sz.hi, sy.lo, sx.lo), v.at(sz.hi, sy.lo, sx.hi), sx.t);
                const double c11 = lerp(v.at(sz.hi, sy.hi, sx.lo), v.at(sz.hi, sy.hi, sx.hi), sx.t);
                out.at(z, y, x) = lerp(lerp(c00, c01, sy.t), lerp(c10, c11, sy.t), sz.t);
            }
        }
    }
    return out;
}

void write_raw(const Volume& v, const std::filesystem::path& path) {
    v.validate();
    std::string bytes;
    bytes.reserve(v.size() * 4);
    for (double d : v.voxels) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d));
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
    const nlohmann::json meta{{"shape", v.shape}, {"units", v.units}, {"dtype", "float32-le"}, {"layout", "zyx"}};
    write_atomic(path, bytes);
    write_atomic(sidecar(path), meta.dump(2) + "\n");
}

Volume read_raw(const std::filesystem::path& path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text(sidecar(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(fmt::format("volume sidecar for '{}': {}", path.string(), e.what()));
    }
    if (meta.value("dtype", std::string("float32-le")) != "float32-le")
        throw ValidationError("volume sidecar: only float32-le is supported");
    Volume v(meta.at("shape").get<std::array<std::size_t, 3>>());
    v.units = meta.value("units", std::string("HU"));
    const std::string bytes = read_text(path);
    if (bytes.size() != v.size() * 4)
        throw ValidationError(fmt::format("volume '{}': {} bytes, expected {}", path.string(), bytes.size(), v.size() * 4));
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + k])) << (8 * k);
        v.voxels[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    v.validate();
    return v;
}

}  // namespace mmfuse::volume

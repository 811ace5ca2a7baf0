#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mmfuse::volume {

/// Scanner intensity window and reference statistics for CT/MRI volumes.
inline constexpr double kClipLow = -1024.0;
inline constexpr double kClipHigh = 1024.0;
inline constexpr double kIntensityMean = -158.58;
inline constexpr double kIntensityStd = 324.70;
inline constexpr std::array<std::size_t, 3> kTargetShape{56, 448, 448};  // depth, height, width

/// Dense 3-D array, index (z, y, x) stored at (z * height + y) * width + x.
struct Volume {
    std::array<std::size_t, 3> shape{1, 1, 1};  // depth, height, width
    std::vector<double> voxels;
    std::string units = "HU";

    Volume() = default;
    Volume(std::array<std::size_t, 3> shape, double fill = 0.0);

    std::size_t size() const { return shape[0] * shape[1] * shape[2]; }
    double& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[(z * shape[1] + y) * shape[2] + x]; }
    double at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[(z * shape[1] + y) * shape[2] + x]; }

    void validate() const;  // dims >= 1, voxel count matches, all finite
};

/// (clamp(x, lo, hi) - mu) / sigma per voxel.
Volume clip_normalize(const Volume& v, double lo = kClipLow, double hi = kClipHigh, double mu = kIntensityMean,
                      double sigma = kIntensityStd);

/// Trilinear resize with corner-aligned sampling: output index i maps to
/// source coordinate i * (S - 1) / (T - 1); a target extent of 1 samples index 0.
Volume resample_trilinear(const Volume& v, std::array<std::size_t, 3> target);

/// Raw little-endian float32 voxels plus a JSON sidecar `<path>.json` holding
/// {"shape": [d, h, w], "units": ..., "dtype": "float32-le", "layout": "zyx"}.
void write_raw(const Volume& v, const std::filesystem::path& path);
Volume read_raw(const std::filesystem::path& path);

}  // namespace mmfuse::volume

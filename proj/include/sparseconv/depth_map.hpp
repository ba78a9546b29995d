#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sparseconv/mask.hpp"
#include "sparseconv/tensor.hpp"

namespace sparseconv {

/// Metric depth image; 0 marks an unobserved pixel.
struct DepthMap {
    static constexpr double kUnitsPerMetre = 256.0;
    static constexpr double kMaxDepth = 65535.0 / kUnitsPerMetre;

    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<double> depth;

    DepthMap() = default;
    DepthMap(std::int64_t h, std::int64_t w) : height(h), width(w), depth(std::size_t(h * w), 0.0) {}

    double at(std::int64_t y, std::int64_t x) const { return depth[std::size_t(y * width + x)]; }
    double& at(std::int64_t y, std::int64_t x) { return depth[std::size_t(y * width + x)]; }

    ValidityMask mask() const;
    double density() const;
    /// (1, 1, H, W) tensor.
    Tensor to_tensor(DType dtype = DType::f32) const;
    /// Reads batch item `n` of an (N, 1, H, W) tensor.
    static DepthMap from_tensor(const Tensor& t, std::int64_t n = 0);
    bool operator==(const DepthMap&) const = default;
};

/// Rounds every depth to the nearest storable value (multiples of 1/256 m).
DepthMap quantize(const DepthMap& map);

/// Network output as a dense, storable depth map: batch item `n` clamped to
/// [1/256, 65535/256] m and quantized, so every pixel is observed.
DepthMap depth_from_prediction(const Tensor& pred, std::int64_t n = 0);

/// 16-bit single-channel PNG, metres = stored / 256, stored 0 = unobserved.
DepthMap read_depth_png(const std::filesystem::path& path);
/// Throws if any depth is negative, non-finite or beyond 65535/256 m. Values are rounded to
/// the nearest 1/256 m.
void write_depth_png(const DepthMap& map, const std::filesystem::path& path);

/// 8-bit PNG (gray, gray+alpha, RGB or RGBA) as (1, 3, H, W) in [0, 1]; gray is replicated.
Tensor read_image_png(const std::filesystem::path& path, DType dtype = DType::f32);
/// Writes batch item 0 of a (1, 3, H, W) or (1, 1, H, W) tensor in [0, 1] as 8-bit RGB or gray.
void write_image_png(const Tensor& image, const std::filesystem::path& path);

/// 8-bit gray mask image: 255 valid, 0 invalid. Batch item `n`.
void write_mask_png(const ValidityMask& mask, const std::filesystem::path& path, std::int64_t n = 0);
ValidityMask read_mask_png(const std::filesystem::path& path);

}  // namespace sparseconv

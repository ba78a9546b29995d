#pragma once

#include <cstdint>
#include <string>

#include "sparseconv/depth_map.hpp"

namespace sparseconv {

enum class DepthModel { planar_ground, constant, ramp };

std::string to_string(DepthModel m);
DepthModel parse_depth_model(const std::string& name);

struct SynthSample {
    DepthMap sparse;
    DepthMap ground_truth;  // dense
    Tensor image;           // (1, 3, H, W) in [0, 1], quantized to 8 bits
};

/// Dense ground truth from an analytic scene plus a sparse copy that keeps `n_lines` equally
/// spaced rows with per-pixel dropout. Depths are multiples of 1/256 m so they survive PNG
/// storage unchanged. 64x256 with 8 lines and dropout 0.6 gives about 5% density.
SynthSample synth_scanlines(std::int64_t height, std::int64_t width, int n_lines, double dropout,
                            DepthModel model, std::uint64_t seed);

/// Gray shading of a depth map from its surface normals with distance fog, replicated to
/// three channels and quantized to 8 bits.
Tensor shade_depth(const DepthMap& depth);

}  // namespace sparseconv

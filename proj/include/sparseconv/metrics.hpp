#pragma once

#include <cstdint>
#include <span>

#include "sparseconv/depth_map.hpp"

namespace sparseconv {

/// Depth errors in millimetres, inverse-depth errors in 1/km, over observed ground truth.
struct MetricsReport {
    double rmse_mm = 0;
    double mae_mm = 0;
    double irmse_per_km = 0;
    double imae_per_km = 0;
    std::int64_t evaluated_pixels = 0;
};

MetricsReport evaluate(const DepthMap& pred, const DepthMap& gt);

/// Pools several reports as if all their pixels were evaluated together.
MetricsReport combine(std::span<const MetricsReport> reports);

}  // namespace sparseconv

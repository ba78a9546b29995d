#include "sparseconv/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sparseconv {

MetricsReport evaluate(const DepthMap& pred, const DepthMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument("evaluate: prediction " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " does not match ground truth " +
                                    std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    double sq = 0, abs = 0, isq = 0, iabs = 0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        const double g = gt.depth[i];
        if (!(g > 0.0)) continue;
        const double p = pred.depth[i];
        if (!(p > 0.0)) {
            throw std::domain_error("evaluate: prediction is not positive at evaluated pixel " +
                                    std::to_string(i) + ", inverse depth undefined");
        }
        // Convert units before differencing so hand cases such as 5.1 m vs 5.0 m give 100 mm.
        const double e = p * 1000.0 - g * 1000.0;
        const double ie = 1000.0 / p - 1000.0 / g;
        sq += e * e;
        abs += std::abs(e);
        isq += ie * ie;
        iabs += std::abs(ie);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("evaluate: ground truth has no observed pixels");
    const double n = static_cast<double>(count);
    return {std::sqrt(sq / n), abs / n, std::sqrt(isq / n), iabs / n, count};
}

MetricsReport combine(std::span<const MetricsReport> reports) {
    double sq = 0, abs = 0, isq = 0, iabs = 0;
    std::int64_t count = 0;
    for (const auto& r : reports) {
        const double n = static_cast<double>(r.evaluated_pixels);
        sq += r.rmse_mm * r.rmse_mm * n;
        abs += r.mae_mm * n;
        isq += r.irmse_per_km * r.irmse_per_km * n;
        iabs += r.imae_per_km * n;
        count += r.evaluated_pixels;
    }
    if (count == 0) throw std::invalid_argument("combine: no evaluated pixels");
    const double n = static_cast<double>(count);
    return {std::sqrt(sq / n), abs / n, std::sqrt(isq / n), iabs / n, count};
}

}  // namespace sparseconv

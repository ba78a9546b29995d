#include "sparseconv/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace sparseconv {

std::string to_string(DepthModel m) {
    switch (m) {
        case DepthModel::planar_ground: return "planar_ground";
        case DepthModel::constant: return "constant";
        case DepthModel::ramp: return "ramp";
    }
    throw std::logic_error("unknown depth model");
}

DepthModel parse_depth_model(const std::string& name) {
    for (auto m : {DepthModel::planar_ground, DepthModel::constant, DepthModel::ramp}) {
        if (to_string(m) == name) return m;
    }
    throw std::invalid_argument("unknown depth model '" + name +
                                "' (expected planar_ground, constant or ramp)");
}

namespace {

double quantized(double metres) {
    return std::round(metres * DepthMap::kUnitsPerMetre) / DepthMap::kUnitsPerMetre;
}

DepthMap dense_scene(std::int64_t h, std::int64_t w, DepthModel model, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    DepthMap gt(h, w);
    switch (model) {
        case DepthModel::planar_ground: {
            // Inverse depth is affine in image coordinates for a plane: far at the top row,
            // near at the bottom, with a random sideways tilt. Roughly 4 m to 40 m.
            const double a = 0.022 + 0.006 * unit(rng);
            const double b = 0.20 + 0.05 * unit(rng);
            const double c = 0.04 * unit(rng) - 0.02;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    const double inv = a + b * (double(y) / double(h)) +
                                       c * (double(x) / double(w) - 0.5);
                    gt.at(y, x) = quantized(1.0 / inv);
                }
            }
            break;
        }
        case DepthModel::constant: {
            const double d = quantized(5.0 + 45.0 * unit(rng));
            std::fill(gt.depth.begin(), gt.depth.end(), d);
            break;
        }
        case DepthModel::ramp: {
            const double left = 5.0 + 45.0 * unit(rng);
            const double right = 5.0 + 45.0 * unit(rng);
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    const double t = w > 1 ? double(x) / double(w - 1) : 0.0;
                    gt.at(y, x) = quantized(left + (right - left) * t);
                }
            }
            break;
        }
    }
    return gt;
}

}  // namespace

Tensor shade_depth(const DepthMap& depth) {
    const std::int64_t h = depth.height, w = depth.width;
    Tensor out(Shape{1, 3, h, w}, DType::f32);
    std::array<double, 3> light{0.3, -0.6, 0.75};
    const double ln = std::sqrt(light[0] * light[0] + light[1] * light[1] + light[2] * light[2]);
    for (auto& v : light) v /= ln;
    auto d = [&](std::int64_t y, std::int64_t x) {
        return depth.at(std::clamp<std::int64_t>(y, 0, h - 1), std::clamp<std::int64_t>(x, 0, w - 1));
    };
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double z = d(y, x);
            // Depth gradient per pixel, relative to depth so near and far surfaces shade alike.
            const double gx = (d(y, x + 1) - d(y, x - 1)) / (2.0 * std::max(z, 1e-3));
            const double gy = (d(y + 1, x) - d(y - 1, x)) / (2.0 * std::max(z, 1e-3));
            const double nx = -gx * 8.0, ny = -gy * 8.0, nz = 1.0;
            const double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
            const double lambert =
                std::max(0.0, (nx * light[0] + ny * light[1] + nz * light[2]) / nn);
            const double fog = std::exp(-z / 60.0);
            const double v = (0.15 + 0.75 * lambert) * fog + 0.7 * (1.0 - fog);
            const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
            for (std::int64_t c = 0; c < 3; ++c) out.set(0, c, y, x, q);
        }
    }
    return out;
}

SynthSample synth_scanlines(std::int64_t height, std::int64_t width, int n_lines, double dropout,
                            DepthModel model, std::uint64_t seed) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("synth_scanlines: empty size");
    if (n_lines < 0 || n_lines > height) {
        throw std::invalid_argument("synth_scanlines: n_lines " + std::to_string(n_lines) +
                                    " must lie in [0, height=" + std::to_string(height) + "]");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("synth_scanlines: dropout must lie in [0, 1)");
    }
    std::mt19937_64 rng(seed);
    SynthSample s;
    s.ground_truth = dense_scene(height, width, model, rng);
    s.sparse = DepthMap(height, width);
    std::bernoulli_distribution keep(1.0 - dropout);
    for (int i = 0; i < n_lines; ++i) {
        const auto row = static_cast<std::int64_t>((double(i) + 0.5) * double(height) / n_lines);
        for (std::int64_t x = 0; x < width; ++x) {
            if (keep(rng)) s.sparse.at(row, x) = s.ground_truth.at(row, x);
        }
    }
    s.image = shade_depth(s.ground_truth);
    return s;
}

}  // namespace sparseconv

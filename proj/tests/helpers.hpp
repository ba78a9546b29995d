#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sparseconv/tensor.hpp"

namespace sparseconv::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            DType dtype = DType::f64) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape, dtype);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, dist(rng));
    return t;
}

/// Single-channel {0,1} tensor with each pixel valid with probability `density`.
inline Tensor random_mask_tensor(std::int64_t n, std::int64_t h, std::int64_t w,
                                 std::mt19937_64& rng, double density, DType dtype = DType::f64) {
    std::bernoulli_distribution valid(density);
    Tensor t(Shape{n, 1, h, w}, dtype);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, valid(rng) ? 1.0 : 0.0);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.flat(i) - b.flat(i);
        worst = std::max(worst, d < 0 ? -d : d);
    }
    return worst;
}


// Loss inputs for finite differences: the smoothness term has a kink wherever two
// neighbours are equal, so draws with any neighbour gap below `gap` are rejected.
inline Tensor kink_free_prediction(Shape shape, std::mt19937_64& rng, double hi, double gap) {
    for (;;) {
        Tensor t = random_tensor(shape, rng, 0.0, hi);
        bool ok = true;
        for (std::int64_t n = 0; n < shape.n && ok; ++n)
            for (std::int64_t y = 0; y < shape.h && ok; ++y)
                for (std::int64_t x = 0; x < shape.w && ok; ++x) {
                    const double v = t.at(n, 0, y, x);
                    if (x + 1 < shape.w && std::abs(v - t.at(n, 0, y, x + 1)) < gap) ok = false;
                    if (y + 1 < shape.h && std::abs(v - t.at(n, 0, y + 1, x)) < gap) ok = false;
                }
        if (ok) return t;
    }
}

}  // namespace sparseconv::testing

#include "sparseconv/mask.hpp"

namespace sparseconv::testing {

inline ValidityMask random_mask(std::int64_t n, std::int64_t h, std::int64_t w,
                                std::mt19937_64& rng, double density) {
    return ValidityMask::from_tensor(random_mask_tensor(n, h, w, rng, density));
}

/// Sparse horizontal lines with random gaps, roughly like a LiDAR projection.
inline ValidityMask scanline_mask(std::int64_t h, std::int64_t w, std::mt19937_64& rng,
                                  int every = 4, double keep = 0.5) {
    ValidityMask m(1, h, w);
    std::bernoulli_distribution on(keep);
    std::uniform_int_distribution<int> phase(0, every - 1);
    const int start = phase(rng);
    for (std::int64_t y = start; y < h; y += every)
        for (std::int64_t x = 0; x < w; ++x) m.set(0, y, x, on(rng));
    return m;
}

}  // namespace sparseconv::testing

#pragma once

#include <cstdint>

#include "sparseconv/tensor.hpp"

namespace sparseconv {

/// Sliding-window geometry shared by convolution, transposed convolution and pooling.
/// Padding is applied symmetrically with zeros; `output_padding` only affects transposed
/// convolution, where it extends the bottom/right edge.
struct ConvGeometry {
    int stride = 1;
    int dilation = 1;
    int padding = 0;
    int output_padding = 0;
};

/// Padding that keeps the spatial size at stride 1 for an odd kernel.
constexpr int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

std::int64_t conv_output_size(std::int64_t in, int kernel, const ConvGeometry& g);
std::int64_t transposed_output_size(std::int64_t in, int kernel, const ConvGeometry& g);

/// Cross-correlation of x (N, Cin, H, W) with w (Cout, Cin, kh, kw). `bias`, when given,
/// holds Cout values. Each output accumulates over (ci, ky, kx) in row-major order, then adds
/// the bias, so results are bit-reproducible.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g);

/// Adjoint of conv2d with respect to its input: x (N, Cin, H', W'), w (Cin, Cout, kh, kw).
/// Output extent is (H' - 1) * stride - 2 * padding + dilation * (kh - 1) + 1 + output_padding.
Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias,
                         const ConvGeometry& g);

/// Weight gradient shared by both convolution directions:
/// result[cs, cl, ky, kx] = sum over n and small-grid positions o of
/// small[n, cs, o] * large[n, cl, o * stride + k * dilation - padding].
Tensor conv2d_weight_grad(const Tensor& small, const Tensor& large, int kh, int kw,
                          const ConvGeometry& g);

/// Per-channel sum over batch and space, shaped (1, C, 1, 1).
Tensor channel_sums(const Tensor& x);

/// Window maximum over a single-channel {0,1} map: out(u, v) = max over i, j in [-k, k] of
/// o(u*stride + i*d, v*stride + j*d) after zero padding. With `strict`, any value outside
/// {0, 1} is rejected.
Tensor max_pool_window(const Tensor& o, int k, int dilation, int stride, int padding,
                       bool strict = true);

}  // namespace sparseconv

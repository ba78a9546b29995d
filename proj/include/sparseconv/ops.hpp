#pragma once

#include <optional>
#include <span>

#include "sparseconv/autograd.hpp"
#include "sparseconv/conv.hpp"

// Differentiable primitives. Every op records itself on the given tape with its gradient
// rule. Tensor arguments (masks, maps, weights of a weighted sum) are constants and block
// gradient flow.
namespace sparseconv::ops {

Var add(Tape& tape, const Var& a, const Var& b);
Var sub(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
Var scale(Tape& tape, const Var& a, double factor);
Var relu(Tape& tape, const Var& a);

/// y = x where mask != 0, exactly +0 elsewhere. mask is (N, 1, H, W), broadcast over channels.
Var mask_select(Tape& tape, const Var& x, const Tensor& mask);
/// y = x * map with map (N, 1, H, W) broadcast over channels.
Var scale_by_map(Tape& tape, const Var& x, const Tensor& map);
/// y = a where s != 0, b elsewhere; s is (N, 1, H, W).
Var switch_select(Tape& tape, const Var& a, const Var& b, const Tensor& s);
/// y = x + bias[c] with bias holding C values.
Var add_bias(Tape& tape, const Var& x, const Var& bias);

Var conv2d(Tape& tape, const Var& x, const Var& w, const std::optional<Var>& bias,
           const ConvGeometry& g);
Var transposed_conv2d(Tape& tape, const Var& x, const Var& w, const std::optional<Var>& bias,
                      const ConvGeometry& g);

Var concat_channels(Tape& tape, std::span<const Var> parts);

/// Each pixel receives the mean of its aligned block x block tile (tiles clipped at the
/// border). Equivalent to average pooling followed by nearest upsampling.
Var block_mean(Tape& tape, const Var& x, int block);

struct BatchNormOptions {
    bool training = true;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

/// Per-channel normalization. In training mode batch statistics are used and the running
/// buffers are updated in place; otherwise the running buffers normalize.
Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, Parameter& running_mean,
               Parameter& running_var, const BatchNormOptions& opt);

/// Scalar sum of all entries.
Var sum(Tape& tape, const Var& x);
/// Scalar sum of x * weights.
Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights);

}  // namespace sparseconv::ops

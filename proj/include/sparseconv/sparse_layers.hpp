#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sparseconv/autograd.hpp"
#include "sparseconv/conv.hpp"
#include "sparseconv/mask.hpp"
#include "sparseconv/parameters.hpp"

namespace sparseconv {

/// Sparsity-invariant convolution: taps are gated by the validity mask and the weighted sum
/// is divided by (number of valid taps + epsilon) before the bias is added.
struct SIConvParams {
    ParameterPtr weight;  // (out, in, 2k+1, 2k+1)
    ParameterPtr bias;    // (1, out, 1, 1)
    int k = 1;
    int dilation = 1;
    int stride = 1;
    double epsilon = 1e-5;
    std::optional<int> padding;  // dilation * k when unset

    int pad() const { return padding.value_or(dilation * k); }
    int kernel() const { return 2 * k + 1; }
    ConvGeometry geometry() const { return {stride, dilation, pad(), 0}; }
    std::int64_t in_channels() const { return weight->value.shape().c; }
    std::int64_t out_channels() const { return weight->value.shape().n; }
    void validate() const;
};

struct SislParams {
    SIConvParams branch_d1;
    SIConvParams branch_d2;
    bool share_weights = true;
    int d_switch = 2;

    void validate() const;
};

/// Plain 1x1 convolution.
struct PointwiseParams {
    ParameterPtr weight;  // (out, in, 1, 1)
    ParameterPtr bias;    // (1, out, 1, 1), may be null
    int stride = 1;

    std::int64_t in_channels() const { return weight->value.shape().c; }
    std::int64_t out_channels() const { return weight->value.shape().n; }
};

enum class BottleneckVariant { plain, pre_activation, pre_addition };
enum class InnerLayer { si_conv, sisl };

std::string to_string(BottleneckVariant v);
BottleneckVariant parse_bottleneck_variant(const std::string& name);
std::string to_string(InnerLayer l);
InnerLayer parse_inner_layer(const std::string& name);

struct BottleneckParams {
    double width_ratio = 0.5;
    std::variant<SIConvParams, SislParams> inner;
    PointwiseParams reduce;
    PointwiseParams expand;
    std::optional<PointwiseParams> residual_projection;
    BottleneckVariant variant = BottleneckVariant::plain;

    InnerLayer inner_layer() const;
    int stride() const;
    std::int64_t in_channels() const { return reduce.in_channels(); }
    std::int64_t out_channels() const { return expand.out_channels(); }
    void validate() const;
};

struct SppFuseParams {
    PointwiseParams fuse;
    std::vector<int> scales{2, 4, 8};
};

struct FusionParams {
    PointwiseParams fuse;
};

/// Features with their validity mask.
struct SparseOutput {
    Var y;
    ValidityMask mask;
};

/// SparseOutput plus the per-pixel count of valid taps used for normalization.
struct SparseTrace {
    Var y;
    ValidityMask mask;
    Tensor counts;  // (N, 1, H', W')
};

// Construction. Weights are He-normal, biases zero.
SIConvParams make_si_conv(ParameterFactory& f, const std::string& name, int in, int out, int k = 1,
                          int dilation = 1, int stride = 1, double epsilon = 1e-5);
SislParams make_sisl(ParameterFactory& f, const std::string& name, int in, int out, int k = 1,
                     int d_switch = 2, bool share_weights = true, int stride = 1,
                     double epsilon = 1e-5);
PointwiseParams make_pointwise(ParameterFactory& f, const std::string& name, int in, int out,
                               int stride = 1, bool bias = true);

struct BottleneckOptions {
    int in_channels = 0;
    int out_channels = 0;
    double width_ratio = 0.5;
    InnerLayer inner = InnerLayer::si_conv;
    BottleneckVariant variant = BottleneckVariant::plain;
    int stride = 1;
    int k = 1;
    int d_switch = 2;
    bool share_weights = true;
    double epsilon = 1e-5;
};
BottleneckParams make_si_bottleneck(ParameterFactory& f, const std::string& name,
                                    const BottleneckOptions& opt);
SppFuseParams make_spp_fuse(ParameterFactory& f, const std::string& name, int img_channels,
                            int depth_channels, std::vector<int> scales = {2, 4, 8});
FusionParams make_fusion(ParameterFactory& f, const std::string& name, int decoder_channels,
                         int skip_channels);

// Forward passes. Features are masked with select semantics on entry, so values at invalid
// pixels never reach the result.
SparseOutput si_conv_forward(Tape& tape, const Var& x, const ValidityMask& o,
                             const SIConvParams& p);
SparseTrace si_conv_trace(Tape& tape, const Var& x, const ValidityMask& o, const SIConvParams& p);

/// s = min(window sum - centre, 1) over the undilated (2k+1)^2 window with zero padding.
ValidityMask switch_map(const ValidityMask& o, int k);

SparseOutput sisl_forward(Tape& tape, const Var& x, const ValidityMask& o, const SislParams& p);
SparseTrace sisl_trace(Tape& tape, const Var& x, const ValidityMask& o, const SislParams& p);

SparseOutput si_bottleneck_forward(Tape& tape, const Var& x, const ValidityMask& o,
                                   const BottleneckParams& p);
/// Same, checking that `inner_layer` matches the kind stored in p.
SparseOutput si_bottleneck_forward(Tape& tape, const Var& x, const ValidityMask& o,
                                   const BottleneckParams& p, InnerLayer inner_layer);

// Mask-only propagation, identical to the masks the forward passes return.
ValidityMask si_conv_mask(const ValidityMask& o, const SIConvParams& p);
ValidityMask sisl_mask(const ValidityMask& o, const SislParams& p);
ValidityMask bottleneck_mask(const ValidityMask& o, const BottleneckParams& p);

Var pointwise_forward(Tape& tape, const Var& x, const PointwiseParams& p);
Var spp_fuse(Tape& tape, const Var& f_img, const Var& f_depth, const SppFuseParams& p);
Var fusion_block(Tape& tape, const Var& f_decoder, const Var& f_skip, const ValidityMask& o_stage,
                 const FusionParams& p);

}  // namespace sparseconv

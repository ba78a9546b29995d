#include "sparseconv/sparse_layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sparseconv/ops.hpp"

namespace sparseconv {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument(message);
}

void require_channels(const Var& x, std::int64_t expected, const char* what) {
    if (x.shape().c != expected) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(expected) +
                                    " input channels, got " + std::to_string(x.shape().c));
    }
}

// Number of valid taps in each window, in the dtype of the features.
Tensor window_counts(const ValidityMask& o, int kernel, const ConvGeometry& g, DType dtype) {
    Tensor ones = Tensor::full({1, 1, kernel, kernel}, 1.0, dtype);
    return conv2d(o.to_tensor(dtype), ones, nullptr, g);
}

ValidityMask positive(const Tensor& counts) {
    ValidityMask m(counts.shape().n, counts.shape().h, counts.shape().w);
    for (std::int64_t n = 0; n < counts.shape().n; ++n)
        for (std::int64_t y = 0; y < counts.shape().h; ++y)
            for (std::int64_t x = 0; x < counts.shape().w; ++x)
                m.set(n, y, x, counts.at(n, 0, y, x) > 0.0);
    return m;
}

Var relu(Tape& tape, const Var& x) { return ops::relu(tape, x); }

// Switch evaluated at input resolution and read at each output window centre.
Tensor output_switch(const ValidityMask& o, const SislParams& p, const Shape& out) {
    const ValidityMask full = switch_map(o, std::max(1, p.branch_d1.k));
    const int stride = p.branch_d1.stride;
    const int offset = p.branch_d1.k - p.branch_d1.pad();
    Tensor s({out.n, 1, out.h, out.w}, DType::f64);
    for (std::int64_t n = 0; n < out.n; ++n)
        for (std::int64_t v = 0; v < out.h; ++v)
            for (std::int64_t u = 0; u < out.w; ++u) {
                const std::int64_t cy = v * stride + offset;
                const std::int64_t cx = u * stride + offset;
                const bool inside = cy >= 0 && cy < o.height() && cx >= 0 && cx < o.width();
                if (inside && full.at(n, cy, cx)) s.set(n, 0, v, u, 1.0);
            }
    return s;
}

}  // namespace

std::string to_string(BottleneckVariant v) {
    switch (v) {
        case BottleneckVariant::plain: return "plain";
        case BottleneckVariant::pre_activation: return "pre_activation";
        case BottleneckVariant::pre_addition: return "pre_addition";
    }
    return "unknown";
}

BottleneckVariant parse_bottleneck_variant(const std::string& name) {
    if (name == "plain") return BottleneckVariant::plain;
    if (name == "pre_activation") return BottleneckVariant::pre_activation;
    if (name == "pre_addition") return BottleneckVariant::pre_addition;
    throw std::invalid_argument("unknown bottleneck variant '" + name + "'");
}

std::string to_string(InnerLayer l) { return l == InnerLayer::sisl ? "sisl" : "si_conv"; }

InnerLayer parse_inner_layer(const std::string& name) {
    if (name == "si_conv") return InnerLayer::si_conv;
    if (name == "sisl") return InnerLayer::sisl;
    throw std::invalid_argument("unknown inner layer '" + name + "'");
}

void SIConvParams::validate() const {
    require(weight && bias, "SIConvParams: missing weight or bias");
    require(k >= 0, "SIConvParams: k must be >= 0");
    require(dilation >= 1, "SIConvParams: dilation must be >= 1");
    require(stride >= 1, "SIConvParams: stride must be >= 1");
    require(epsilon > 0.0, "SIConvParams: epsilon must be > 0");
    require(pad() >= 0, "SIConvParams: padding must be >= 0");
    const Shape& ws = weight->value.shape();
    require(ws.h == kernel() && ws.w == kernel(),
            "SIConvParams: weight " + to_string(ws) + " is not a square kernel of side 2k+1");
    require(bias->value.numel() == ws.n, "SIConvParams: bias size does not match out channels");
}

void SislParams::validate() const {
    branch_d1.validate();
    branch_d2.validate();
    require(d_switch >= 2, "SislParams: d_switch must be >= 2");
    require(branch_d1.dilation == 1, "SislParams: first branch must use dilation 1");
    require(branch_d2.dilation == d_switch, "SislParams: second branch dilation must be d_switch");
    require(branch_d1.k == branch_d2.k && branch_d1.stride == branch_d2.stride,
            "SislParams: branches differ in k or stride");
    require(branch_d1.weight->value.shape() == branch_d2.weight->value.shape(),
            "SislParams: branches differ in channel counts");
    if (share_weights) {
        require(branch_d1.weight == branch_d2.weight && branch_d1.bias == branch_d2.bias,
                "SislParams: shared branches must reference the same parameters");
    }
}

InnerLayer BottleneckParams::inner_layer() const {
    return std::holds_alternative<SislParams>(inner) ? InnerLayer::sisl : InnerLayer::si_conv;
}

int BottleneckParams::stride() const {
    if (const auto* s = std::get_if<SislParams>(&inner)) return s->branch_d1.stride;
    return std::get<SIConvParams>(inner).stride;
}

void BottleneckParams::validate() const {
    require(width_ratio > 0.0 && width_ratio <= 1.0, "BottleneckParams: width_ratio not in (0,1]");
    std::visit([](const auto& p) { p.validate(); }, inner);
    std::int64_t inner_in = 0;
    std::int64_t inner_out = 0;
    if (const auto* s = std::get_if<SislParams>(&inner)) {
        inner_in = s->branch_d1.in_channels();
        inner_out = s->branch_d1.out_channels();
    } else {
        inner_in = std::get<SIConvParams>(inner).in_channels();
        inner_out = std::get<SIConvParams>(inner).out_channels();
    }
    require(reduce.out_channels() == inner_in && expand.in_channels() == inner_out,
            "BottleneckParams: inner channel counts do not chain");
    const bool needs_projection = in_channels() != out_channels() || stride() > 1;
    require(needs_projection == residual_projection.has_value(),
            "BottleneckParams: residual projection must exist iff channels change or stride > 1");
    if (residual_projection) {
        require(residual_projection->in_channels() == in_channels() &&
                    residual_projection->out_channels() == out_channels() &&
                    residual_projection->stride == stride(),
                "BottleneckParams: residual projection shape mismatch");
    }
}

SIConvParams make_si_conv(ParameterFactory& f, const std::string& name, int in, int out, int k,
                          int dilation, int stride, double epsilon) {
    SIConvParams p;
    const int side = 2 * k + 1;
    p.weight = f.normal(name + ".weight", {out, in, side, side}, double(in) * side * side);
    p.bias = f.constant(name + ".bias", {1, out, 1, 1}, 0.0);
    p.k = k;
    p.dilation = dilation;
    p.stride = stride;
    p.epsilon = epsilon;
    p.validate();
    return p;
}

SislParams make_sisl(ParameterFactory& f, const std::string& name, int in, int out, int k,
                     int d_switch, bool share_weights, int stride, double epsilon) {
    SislParams p;
    p.share_weights = share_weights;
    p.d_switch = d_switch;
    p.branch_d1 = make_si_conv(f, share_weights ? name : name + ".d1", in, out, k, 1, stride,
                               epsilon);
    if (share_weights) {
        p.branch_d2 = p.branch_d1;
        p.branch_d2.dilation = d_switch;
    } else {
        p.branch_d2 = make_si_conv(f, name + ".d2", in, out, k, d_switch, stride, epsilon);
    }
    p.validate();
    return p;
}

PointwiseParams make_pointwise(ParameterFactory& f, const std::string& name, int in, int out,
                               int stride, bool bias) {
    PointwiseParams p;
    p.weight = f.normal(name + ".weight", {out, in, 1, 1}, in);
    if (bias) p.bias = f.constant(name + ".bias", {1, out, 1, 1}, 0.0);
    p.stride = stride;
    return p;
}

BottleneckParams make_si_bottleneck(ParameterFactory& f, const std::string& name,
                                    const BottleneckOptions& opt) {
    require(opt.in_channels > 0 && opt.out_channels > 0, "bottleneck: channel counts must be > 0");
    require(opt.width_ratio > 0.0 && opt.width_ratio <= 1.0, "bottleneck: width_ratio not in (0,1]");
    const int width = std::max(1, static_cast<int>(std::lround(opt.width_ratio * opt.out_channels)));
    BottleneckParams p;
    p.width_ratio = opt.width_ratio;
    p.variant = opt.variant;
    p.reduce = make_pointwise(f, name + ".reduce", opt.in_channels, width);
    if (opt.inner == InnerLayer::sisl) {
        p.inner = make_sisl(f, name + ".inner", width, width, opt.k, opt.d_switch,
                            opt.share_weights, opt.stride, opt.epsilon);
    } else {
        p.inner = make_si_conv(f, name + ".inner", width, width, opt.k, 1, opt.stride, opt.epsilon);
    }
    p.expand = make_pointwise(f, name + ".expand", width, opt.out_channels);
    if (opt.in_channels != opt.out_channels || opt.stride > 1) {
        p.residual_projection =
            make_pointwise(f, name + ".project", opt.in_channels, opt.out_channels, opt.stride);
    }
    p.validate();
    return p;
}

SppFuseParams make_spp_fuse(ParameterFactory& f, const std::string& name, int img_channels,
                            int depth_channels, std::vector<int> scales) {
    const int both = img_channels + depth_channels;
    require(both % 2 == 0, "spp_fuse: concatenated channel count must be even");
    SppFuseParams p;
    p.scales = std::move(scales);
    p.fuse = make_pointwise(f, name + ".fuse", both * static_cast<int>(1 + p.scales.size()),
                            both / 2);
    return p;
}

FusionParams make_fusion(ParameterFactory& f, const std::string& name, int decoder_channels,
                         int skip_channels) {
    return {make_pointwise(f, name + ".fuse", decoder_channels + skip_channels + 1,
                           decoder_channels)};
}

SparseTrace si_conv_trace(Tape& tape, const Var& x, const ValidityMask& o, const SIConvParams& p) {
    p.validate();
    require_mask_matches(o, x.value(), "si_conv_forward");
    require_channels(x, p.in_channels(), "si_conv_forward");
    const ConvGeometry g = p.geometry();
    const DType dtype = x.dtype();

    Tensor counts = window_counts(o, p.kernel(), g, dtype);
    Tensor inverse(counts.shape(), dtype);
    for (std::int64_t i = 0; i < counts.numel(); ++i) {
        inverse.set_flat(i, 1.0 / (counts.flat(i) + p.epsilon));
    }

    Var gated = ops::mask_select(tape, x, o.to_tensor(dtype));
    Var sum = ops::conv2d(tape, gated, tape.param(p.weight), std::nullopt, g);
    Var y = ops::add_bias(tape, ops::scale_by_map(tape, sum, inverse), tape.param(p.bias));
    ValidityMask mask = si_conv_mask(o, p);
    return {y, std::move(mask), std::move(counts)};
}

SparseOutput si_conv_forward(Tape& tape, const Var& x, const ValidityMask& o,
                             const SIConvParams& p) {
    auto t = si_conv_trace(tape, x, o, p);
    return {t.y, std::move(t.mask)};
}

ValidityMask switch_map(const ValidityMask& o, int k) {
    require(k >= 1, "switch_map: k must be >= 1");
    const int side = 2 * k + 1;
    Tensor counts = window_counts(o, side, {1, 1, k, 0}, DType::f64);
    ValidityMask s(o.batch(), o.height(), o.width());
    for (std::int64_t n = 0; n < o.batch(); ++n)
        for (std::int64_t y = 0; y < o.height(); ++y)
            for (std::int64_t x = 0; x < o.width(); ++x)
                s.set(n, y, x, counts.at(n, 0, y, x) - (o.at(n, y, x) ? 1.0 : 0.0) >= 1.0);
    return s;
}

SparseTrace sisl_trace(Tape& tape, const Var& x, const ValidityMask& o, const SislParams& p) {
    p.validate();
    auto a = si_conv_trace(tape, x, o, p.branch_d1);
    auto b = si_conv_trace(tape, x, o, p.branch_d2);
    if (a.y.shape() != b.y.shape()) {
        throw std::invalid_argument("sisl_forward: branch outputs differ, " +
                                    to_string(a.y.shape()) + " vs " + to_string(b.y.shape()));
    }

    const Tensor s = output_switch(o, p, a.y.shape());
    const Shape os = a.y.shape();
    Var y = ops::switch_select(tape, a.y, b.y, s);
    Tensor counts(a.counts.shape(), a.counts.dtype());
    ValidityMask mask(os.n, os.h, os.w);
    for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t v = 0; v < os.h; ++v)
            for (std::int64_t u = 0; u < os.w; ++u) {
                const bool first = s.at(n, 0, v, u) != 0.0;
                counts.set(n, 0, v, u, first ? a.counts.at(n, 0, v, u) : b.counts.at(n, 0, v, u));
                mask.set(n, v, u, first ? a.mask.at(n, v, u) : b.mask.at(n, v, u));
            }
    return {y, std::move(mask), std::move(counts)};
}

SparseOutput sisl_forward(Tape& tape, const Var& x, const ValidityMask& o, const SislParams& p) {
    auto t = sisl_trace(tape, x, o, p);
    return {t.y, std::move(t.mask)};
}

ValidityMask si_conv_mask(const ValidityMask& o, const SIConvParams& p) {
    return propagate_mask(o, p.k, p.dilation, p.stride, p.pad());
}

ValidityMask sisl_mask(const ValidityMask& o, const SislParams& p) {
    ValidityMask a = si_conv_mask(o, p.branch_d1);
    ValidityMask b = si_conv_mask(o, p.branch_d2);
    if (a.shape() != b.shape()) throw std::invalid_argument("sisl_mask: branch outputs differ");
    const Tensor s = output_switch(o, p, a.shape());
    for (std::int64_t n = 0; n < a.batch(); ++n)
        for (std::int64_t v = 0; v < a.height(); ++v)
            for (std::int64_t u = 0; u < a.width(); ++u)
                if (s.at(n, 0, v, u) == 0.0) a.set(n, v, u, b.at(n, v, u));
    return a;
}

ValidityMask bottleneck_mask(const ValidityMask& o, const BottleneckParams& p) {
    if (const auto* s = std::get_if<SislParams>(&p.inner)) return sisl_mask(o, *s);
    return si_conv_mask(o, std::get<SIConvParams>(p.inner));
}

Var pointwise_forward(Tape& tape, const Var& x, const PointwiseParams& p) {
    require_channels(x, p.in_channels(), "pointwise conv");
    std::optional<Var> bias;
    if (p.bias) bias = tape.param(p.bias);
    return ops::conv2d(tape, x, tape.param(p.weight), bias, {p.stride, 1, 0, 0});
}

SparseOutput si_bottleneck_forward(Tape& tape, const Var& x, const ValidityMask& o,
                                   const BottleneckParams& p) {
    p.validate();
    require_mask_matches(o, x.value(), "si_bottleneck_forward");
    require_channels(x, p.in_channels(), "si_bottleneck_forward");
    const bool pre_act = p.variant == BottleneckVariant::pre_activation;

    Var xm = ops::mask_select(tape, x, o.to_tensor(x.dtype()));
    Var h = pointwise_forward(tape, pre_act ? relu(tape, xm) : xm, p.reduce);
    h = relu(tape, h);
    SparseTrace inner = std::holds_alternative<SislParams>(p.inner)
                            ? sisl_trace(tape, h, o, std::get<SislParams>(p.inner))
                            : si_conv_trace(tape, h, o, std::get<SIConvParams>(p.inner));
    h = relu(tape, inner.y);
    h = pointwise_forward(tape, h, p.expand);

    Var residual = p.residual_projection ? pointwise_forward(tape, xm, *p.residual_projection) : xm;
    Var y;
    switch (p.variant) {
        case BottleneckVariant::plain:
            y = relu(tape, ops::add(tape, h, residual));
            break;
        case BottleneckVariant::pre_activation:
            y = ops::add(tape, h, residual);
            break;
        case BottleneckVariant::pre_addition:
            y = ops::add(tape, relu(tape, h), residual);
            break;
    }

    ValidityMask mask = positive(inner.counts);
    if (mask != inner.mask) {
        throw std::logic_error("si_bottleneck_forward: count-derived mask differs from max pooling");
    }
    return {y, std::move(mask)};
}

SparseOutput si_bottleneck_forward(Tape& tape, const Var& x, const ValidityMask& o,
                                   const BottleneckParams& p, InnerLayer inner_layer) {
    if (inner_layer != p.inner_layer()) {
        throw std::invalid_argument("si_bottleneck_forward: parameters hold " +
                                    to_string(p.inner_layer()) + ", requested " +
                                    to_string(inner_layer));
    }
    return si_bottleneck_forward(tape, x, o, p);
}

Var spp_fuse(Tape& tape, const Var& f_img, const Var& f_depth, const SppFuseParams& p) {
    if (f_img.shape() != f_depth.shape()) {
        throw std::invalid_argument("spp_fuse: image features " + to_string(f_img.shape()) +
                                    " and depth features " + to_string(f_depth.shape()) +
                                    " differ");
    }
    const std::vector<Var> pair{f_img, f_depth};
    Var both = ops::concat_channels(tape, pair);
    std::vector<Var> parts{both};
    for (int scale : p.scales) parts.push_back(ops::block_mean(tape, both, scale));
    return pointwise_forward(tape, ops::concat_channels(tape, parts), p.fuse);
}

Var fusion_block(Tape& tape, const Var& f_decoder, const Var& f_skip, const ValidityMask& o_stage,
                 const FusionParams& p) {
    const Shape& d = f_decoder.shape();
    const Shape& s = f_skip.shape();
    if (d.n != s.n || d.h != s.h || d.w != s.w) {
        throw std::invalid_argument("fusion_block: decoder " + to_string(d) + " and skip " +
                                    to_string(s) + " differ spatially");
    }
    require_mask_matches(o_stage, f_decoder.value(), "fusion_block");
    if (p.fuse.out_channels() != d.c) {
        throw std::invalid_argument("fusion_block: output channels must equal decoder channels");
    }
    const std::vector<Var> parts{f_decoder, f_skip, tape.constant(o_stage.to_tensor(f_decoder.dtype()))};
    return pointwise_forward(tape, ops::concat_channels(tape, parts), p.fuse);
}

}  // namespace sparseconv

#include "sparseconv/network.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sparseconv {

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw std::invalid_argument("network config: " + message);
}

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw std::invalid_argument("'" + key + "' expects an integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("'" + key + "' expects a number, got '" + value + "'");
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("'" + key + "' expects true or false, got '" + value + "'");
}

int width_for(double ratio, int channels) {
    return std::max(1, static_cast<int>(std::lround(ratio * channels)));
}

BatchNormParams make_batch_norm(ParameterFactory& f, const std::string& name, int channels) {
    return {f.constant(name + ".gamma", {1, channels, 1, 1}, 1.0),
            f.constant(name + ".beta", {1, channels, 1, 1}, 0.0),
            f.constant(name + ".running_mean", {1, channels, 1, 1}, 0.0, false),
            f.constant(name + ".running_var", {1, channels, 1, 1}, 1.0, false)};
}

DenseConvParams make_transposed(ParameterFactory& f, const std::string& name, int in, int out) {
    DenseConvParams p;
    p.weight = f.normal(name + ".weight", {in, out, 3, 3}, in * 9.0 / 4.0);
    p.bias = f.constant(name + ".bias", {1, out, 1, 1}, 0.0);
    p.geometry = {2, 1, 1, 1};
    return p;
}

EncoderStage make_encoder_stage(ParameterFactory& f, const NetworkConfig& cfg,
                                const std::string& name, int in, int out, int sisl_blocks) {
    auto options = [&](int block_in, int index) {
        BottleneckOptions o;
        o.in_channels = block_in;
        o.out_channels = out;
        o.width_ratio = cfg.width_ratio;
        o.inner = index < sisl_blocks ? InnerLayer::sisl : InnerLayer::si_conv;
        o.variant = cfg.variant;
        o.d_switch = cfg.d_switch;
        o.share_weights = cfg.share_weights;
        o.epsilon = cfg.epsilon;
        return o;
    };
    EncoderStage s;
    s.expand = make_si_bottleneck(f, name + ".block0", options(in, 0));
    s.down = make_si_conv(f, name + ".down", out, out, 1, 1, 2, cfg.epsilon);
    for (int b = 1; b < cfg.bottlenecks_per_stage; ++b) {
        s.blocks.push_back(make_si_bottleneck(f, name + ".block" + std::to_string(b), options(out, b)));
    }
    return s;
}

std::vector<SparseOutput> encode(Tape& tape, const std::vector<EncoderStage>& stages, Var x,
                                 ValidityMask o) {
    std::vector<SparseOutput> outputs;
    for (const auto& stage : stages) {
        auto h = si_bottleneck_forward(tape, x, o, stage.expand);
        auto d = si_conv_forward(tape, h.y, h.mask, stage.down);
        SparseOutput cur{ops::relu(tape, d.y), std::move(d.mask)};
        for (const auto& block : stage.blocks) cur = si_bottleneck_forward(tape, cur.y, cur.mask, block);
        outputs.push_back(cur);
        x = cur.y;
        o = cur.mask;
    }
    return outputs;
}

Var batch_norm(Tape& tape, const Var& x, const BatchNormParams& p, Mode mode) {
    return ops::batch_norm(tape, x, tape.param(p.gamma), tape.param(p.beta), *p.running_mean,
                           *p.running_var, {.training = mode == Mode::train});
}

Var maybe_bn(Tape& tape, const Var& x, const std::optional<BatchNormParams>& p, Mode mode) {
    return p ? batch_norm(tape, x, *p, mode) : x;
}

}  // namespace

void NetworkConfig::validate() const {
    require(C >= 1, "C must be >= 1");
    require(stages >= 1, "stages must be >= 1");
    require(stages <= 8, "stages must be <= 8");
    require(bottlenecks_per_stage >= 1, "bottlenecks_per_stage must be >= 1");
    require(sisl_count >= 0 && sisl_count <= bottlenecks_per_stage,
            "sisl_count must lie in [0, bottlenecks_per_stage]");
    require(width_ratio > 0.0 && width_ratio <= 1.0, "width_ratio must lie in (0, 1]");
    require(d_switch >= 2, "d_switch must be >= 2");
    require(image_channels >= 1, "image_channels must be >= 1");
    require(depth_scale > 0.0, "depth_scale must be > 0");
    require(epsilon > 0.0, "epsilon must be > 0");
}

std::vector<int> NetworkConfig::encoder_channels() const {
    std::vector<int> out;
    for (int s = 1; s <= stages; ++s) out.push_back(C * s);
    return out;
}

std::vector<int> NetworkConfig::decoder_channels() const {
    std::vector<int> out;
    for (int s = 1; s < stages; ++s) out.push_back(C * stages - C * s);
    out.push_back(1);
    return out;
}

std::vector<std::pair<std::string, std::string>> NetworkConfig::to_pairs() const {
    return {{"C", std::to_string(C)},
            {"stages", std::to_string(stages)},
            {"bottlenecks_per_stage", std::to_string(bottlenecks_per_stage)},
            {"sisl_count", std::to_string(sisl_count)},
            {"width_ratio", format_double(width_ratio)},
            {"d_switch", std::to_string(d_switch)},
            {"share_weights", share_weights ? "true" : "false"},
            {"batch_norm_decoder", batch_norm_decoder ? "true" : "false"},
            {"variant", to_string(variant)},
            {"image_channels", std::to_string(image_channels)},
            {"depth_scale", format_double(depth_scale)},
            {"epsilon", format_double(epsilon)},
            {"dtype", to_string(dtype)}};
}

bool NetworkConfig::apply(const std::string& key, const std::string& value) {
    if (key == "C") C = parse_int(key, value);
    else if (key == "stages") stages = parse_int(key, value);
    else if (key == "bottlenecks_per_stage") bottlenecks_per_stage = parse_int(key, value);
    else if (key == "sisl_count") sisl_count = parse_int(key, value);
    else if (key == "width_ratio") width_ratio = parse_double(key, value);
    else if (key == "d_switch") d_switch = parse_int(key, value);
    else if (key == "share_weights") share_weights = parse_bool(key, value);
    else if (key == "batch_norm_decoder") batch_norm_decoder = parse_bool(key, value);
    else if (key == "variant") variant = parse_bottleneck_variant(value);
    else if (key == "image_channels") image_channels = parse_int(key, value);
    else if (key == "depth_scale") depth_scale = parse_double(key, value);
    else if (key == "epsilon") epsilon = parse_double(key, value);
    else if (key == "dtype") dtype = parse_dtype(value);
    else return false;
    return true;
}

NetworkConfig NetworkConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
    NetworkConfig cfg;
    for (const auto& [k, v] : pairs) {
        if (!cfg.apply(k, v)) throw std::invalid_argument("unknown network setting '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

DenseBottleneckParams make_dense_bottleneck(ParameterFactory& f, const std::string& name,
                                            int channels, double width_ratio, bool batch_norm) {
    const int width = width_for(width_ratio, channels);
    DenseBottleneckParams p;
    // A bias directly before normalization would be cancelled by it, so none is created.
    p.reduce = make_pointwise(f, name + ".reduce", channels, width, 1, !batch_norm);
    p.mid.weight = f.normal(name + ".mid.weight", {width, width, 3, 3}, width * 9.0);
    if (!batch_norm) p.mid.bias = f.constant(name + ".mid.bias", {1, width, 1, 1}, 0.0);
    p.mid.geometry = {1, 1, 1, 0};
    p.expand = make_pointwise(f, name + ".expand", width, channels, 1, !batch_norm);
    if (batch_norm) {
        p.bn_reduce = make_batch_norm(f, name + ".bn_reduce", width);
        p.bn_mid = make_batch_norm(f, name + ".bn_mid", width);
        p.bn_expand = make_batch_norm(f, name + ".bn_expand", channels);
    }
    return p;
}

DvmnModel build_dvmn(const NetworkConfig& cfg, std::uint64_t rng_seed) {
    cfg.validate();
    DvmnModel m;
    m.config = cfg;
    ParameterFactory f(m.registry, rng_seed, cfg.dtype);
    const auto enc = cfg.encoder_channels();
    for (int s = 0; s < cfg.stages; ++s) {
        const int in = s == 0 ? 1 : enc[s - 1];
        m.depth_encoder.push_back(make_encoder_stage(f, cfg, "depth.stage" + std::to_string(s + 1), in,
                                                     enc[s], s == 0 ? cfg.sisl_count : 0));
    }
    for (int s = 0; s < cfg.stages; ++s) {
        const int in = s == 0 ? cfg.image_channels : enc[s - 1];
        m.image_encoder.push_back(
            make_encoder_stage(f, cfg, "image.stage" + std::to_string(s + 1), in, enc[s], 0));
    }
    m.spp = make_spp_fuse(f, "spp", enc.back(), enc.back());
    const auto dec = cfg.decoder_channels();
    int in = enc.back();
    for (int s = 1; s <= cfg.stages; ++s) {
        const std::string name = "decoder.stage" + std::to_string(s);
        const int out = dec[s - 1];
        DecoderStage d;
        d.up = make_transposed(f, name + ".up", in, out);
        if (s == cfg.stages) {
            // The untrained network predicts 0 m instead of depths in the hundreds of metres.
            Tensor& w = d.up.weight->value;
            for (std::int64_t i = 0; i < w.numel(); ++i) w.set_flat(i, 0.0);
        }
        if (s < cfg.stages) {
            const int skip = 2 * enc[cfg.stages - s - 1];
            d.fusion = make_fusion(f, name + ".fusion", out, skip);
            d.block = make_dense_bottleneck(f, name + ".block", out, cfg.width_ratio,
                                            cfg.batch_norm_decoder);
        }
        m.decoder.push_back(std::move(d));
        in = out;
    }
    return m;
}

Var dense_conv_forward(Tape& tape, const Var& x, const DenseConvParams& p, bool transposed) {
    const Var w = tape.param(p.weight);
    std::optional<Var> b;
    if (p.bias) b = tape.param(p.bias);
    return transposed ? ops::transposed_conv2d(tape, x, w, b, p.geometry)
                      : ops::conv2d(tape, x, w, b, p.geometry);
}

Var dense_bottleneck_forward(Tape& tape, const Var& x, const DenseBottleneckParams& p, Mode mode) {
    Var h = ops::relu(tape, maybe_bn(tape, pointwise_forward(tape, x, p.reduce), p.bn_reduce, mode));
    h = ops::relu(tape, maybe_bn(tape, dense_conv_forward(tape, h, p.mid, false), p.bn_mid, mode));
    h = maybe_bn(tape, pointwise_forward(tape, h, p.expand), p.bn_expand, mode);
    return ops::relu(tape, ops::add(tape, h, x));
}

Var forward(Tape& tape, const DvmnModel& model, const Tensor& depth, const ValidityMask& mask,
            const Tensor& image, Mode mode) {
    const NetworkConfig& cfg = model.config;
    const Shape ds = depth.shape();
    const Shape is = image.shape();
    if (ds.c != 1) throw std::invalid_argument("forward: depth must have one channel");
    if (is.c != cfg.image_channels) {
        throw std::invalid_argument("forward: image has " + std::to_string(is.c) +
                                    " channels, model expects " + std::to_string(cfg.image_channels));
    }
    if (ds.n != is.n || ds.h != is.h || ds.w != is.w) {
        throw std::invalid_argument("forward: depth " + to_string(ds) + " and image " +
                                    to_string(is) + " differ");
    }
    require_mask_matches(mask, depth, "forward");
    const std::int64_t factor = std::int64_t{1} << cfg.stages;
    for (auto [extent, label] : {std::pair{ds.h, "height"}, std::pair{ds.w, "width"}}) {
        if (extent % factor != 0 || extent == 0) {
            const std::int64_t padded = (extent / factor + 1) * factor;
            throw std::invalid_argument("forward: " + std::string(label) + " " + std::to_string(extent) +
                                        " is not divisible by " + std::to_string(factor) + "; pad by " +
                                        std::to_string(padded - extent) + " to " + std::to_string(padded));
        }
    }

    Tensor scaled = depth.cast(cfg.dtype);
    for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled.set_flat(i, scaled.flat(i) / cfg.depth_scale);
    auto depth_out = encode(tape, model.depth_encoder, tape.constant(std::move(scaled)), mask);
    auto image_out = encode(tape, model.image_encoder, tape.constant(image.cast(cfg.dtype)),
                            ValidityMask(ds.n, ds.h, ds.w, true));

    Var h = ops::relu(tape, spp_fuse(tape, image_out.back().y, depth_out.back().y, model.spp));
    for (int s = 1; s <= cfg.stages; ++s) {
        const DecoderStage& stage = model.decoder[static_cast<std::size_t>(s - 1)];
        if (s == cfg.stages) {
            h = dense_conv_forward(tape, h, stage.up, true);
            break;
        }
        h = ops::relu(tape, dense_conv_forward(tape, h, stage.up, true));
        const auto& d = depth_out[static_cast<std::size_t>(cfg.stages - s - 1)];
        const auto& im = image_out[static_cast<std::size_t>(cfg.stages - s - 1)];
        const std::vector<Var> skip_parts{d.y, im.y};
        Var skip = ops::concat_channels(tape, skip_parts);
        h = ops::relu(tape, fusion_block(tape, h, skip, d.mask, *stage.fusion));
        h = dense_bottleneck_forward(tape, h, *stage.block, mode);
    }
    return ops::scale(tape, h, cfg.depth_scale);
}

Tensor complete(const DvmnModel& model, const Tensor& depth, const ValidityMask& mask,
                const Tensor& image) {
    Tape tape(false);
    return forward(tape, model, depth, mask, image, Mode::eval).value();
}

std::vector<MaskTraceEntry> layer_mask_trace(const DvmnModel& model, const ValidityMask& mask) {
    std::vector<MaskTraceEntry> out;
    ValidityMask o = mask;
    auto push = [&](std::string name, int stride) {
        out.push_back({std::move(name), o, mask_density(o), stride});
    };
    for (std::size_t s = 0; s < model.depth_encoder.size(); ++s) {
        const auto& stage = model.depth_encoder[s];
        const std::string prefix = "depth.stage" + std::to_string(s + 1);
        o = bottleneck_mask(o, stage.expand);
        push(prefix + ".block0", stage.expand.stride());
        o = si_conv_mask(o, stage.down);
        push(prefix + ".down", stage.down.stride);
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            o = bottleneck_mask(o, stage.blocks[b]);
            push(prefix + ".block" + std::to_string(b + 1), stage.blocks[b].stride());
        }
    }
    return out;
}

std::int64_t parameter_count(const DvmnModel& model) { return model.registry.trainable_count(); }

Checkpoint model_checkpoint(const DvmnModel& model) {
    Checkpoint ckpt;
    ckpt.set_meta("kind", "model");
    for (const auto& [k, v] : model.config.to_pairs()) ckpt.set_meta("net." + k, v);
    for (const auto& p : model.registry.all()) ckpt.tensors.emplace_back(p->name, p->value);
    return ckpt;
}

DvmnModel model_from_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [k, v] : ckpt.meta) {
        if (k.starts_with("net.")) pairs.emplace_back(k.substr(4), v);
    }
    if (pairs.empty()) throw std::runtime_error("checkpoint holds no network configuration");
    DvmnModel model = build_dvmn(NetworkConfig::from_pairs(pairs), 0);
    for (const auto& p : model.registry.all()) {
        const Tensor& t = ckpt.require(p->name);
        if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype()) {
            throw std::runtime_error("checkpoint tensor '" + p->name + "' has shape " +
                                     to_string(t.shape()) + ", model expects " +
                                     to_string(p->value.shape()));
        }
        p->value = t;
    }
    return model;
}

void save_model(const DvmnModel& model, const std::filesystem::path& path) {
    write_checkpoint(path, model_checkpoint(model));
}

DvmnModel load_model(const std::filesystem::path& path) {
    return model_from_checkpoint(read_checkpoint(path));
}

}  // namespace sparseconv

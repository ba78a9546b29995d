#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sparseconv/checkpoint.hpp"
#include "sparseconv/ops.hpp"
#include "sparseconv/sparse_layers.hpp"

namespace sparseconv {

struct NetworkConfig {
    int C = 32;
    int stages = 4;
    int bottlenecks_per_stage = 6;  // one channel-expanding block plus the rest
    int sisl_count = 4;             // leading depth-encoder blocks of stage 1 that use SISL
    double width_ratio = 0.5;
    int d_switch = 2;
    bool share_weights = true;
    bool batch_norm_decoder = true;
    BottleneckVariant variant = BottleneckVariant::plain;
    int image_channels = 3;
    double depth_scale = 85.0;  // metres mapped to 1.0 at the network input
    double epsilon = 1e-5;
    DType dtype = DType::f32;

    void validate() const;
    std::vector<int> encoder_channels() const;
    /// Output channels of each decoder stage, ending with the single depth channel.
    std::vector<int> decoder_channels() const;

    /// Ordered key/value form, shared by checkpoints and config files.
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    /// Applies one key; returns false if the key is not a network setting.
    bool apply(const std::string& key, const std::string& value);
    static NetworkConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

/// Plain convolution or transposed convolution with bias.
struct DenseConvParams {
    ParameterPtr weight;
    ParameterPtr bias;
    ConvGeometry geometry;
};

struct BatchNormParams {
    ParameterPtr gamma;
    ParameterPtr beta;
    ParameterPtr running_mean;  // buffer
    ParameterPtr running_var;   // buffer
};

/// Dense residual bottleneck used by the decoder:
/// reduce, [bn], relu, 3x3, [bn], relu, expand, [bn], add input, relu.
struct DenseBottleneckParams {
    PointwiseParams reduce;
    DenseConvParams mid;
    PointwiseParams expand;
    std::optional<BatchNormParams> bn_reduce;
    std::optional<BatchNormParams> bn_mid;
    std::optional<BatchNormParams> bn_expand;
};

struct EncoderStage {
    BottleneckParams expand;
    SIConvParams down;  // 3x3, stride 2
    std::vector<BottleneckParams> blocks;
};

struct DecoderStage {
    DenseConvParams up;  // transposed 3x3, stride 2
    std::optional<FusionParams> fusion;
    std::optional<DenseBottleneckParams> block;
};

enum class Mode { train, eval };

class DvmnModel {
   public:
    DvmnModel() = default;
    DvmnModel(const DvmnModel&) = delete;
    DvmnModel& operator=(const DvmnModel&) = delete;
    DvmnModel(DvmnModel&&) = default;
    DvmnModel& operator=(DvmnModel&&) = default;

    NetworkConfig config;
    ParameterRegistry registry;
    std::vector<EncoderStage> depth_encoder;
    std::vector<EncoderStage> image_encoder;
    SppFuseParams spp;
    std::vector<DecoderStage> decoder;
};

DvmnModel build_dvmn(const NetworkConfig& cfg, std::uint64_t rng_seed);

/// Completed depth in metres, (N, 1, H, W). depth is metric with 0 at unobserved pixels,
/// image is (N, image_channels, H, W) in [0, 1]. Train mode uses batch statistics in the
/// decoder normalization and updates its running buffers.
Var forward(Tape& tape, const DvmnModel& model, const Tensor& depth, const ValidityMask& mask,
            const Tensor& image, Mode mode = Mode::eval);

/// Evaluation-mode forward pass without gradient recording.
Tensor complete(const DvmnModel& model, const Tensor& depth, const ValidityMask& mask,
                const Tensor& image);

struct MaskTraceEntry {
    std::string layer;
    ValidityMask mask;
    double density = 0;
    int stride = 1;
};

/// Masks produced by every layer of the depth encoder, in execution order.
std::vector<MaskTraceEntry> layer_mask_trace(const DvmnModel& model, const ValidityMask& mask);

std::int64_t parameter_count(const DvmnModel& model);

Var dense_conv_forward(Tape& tape, const Var& x, const DenseConvParams& p, bool transposed);
Var dense_bottleneck_forward(Tape& tape, const Var& x, const DenseBottleneckParams& p, Mode mode);
DenseBottleneckParams make_dense_bottleneck(ParameterFactory& f, const std::string& name,
                                            int channels, double width_ratio, bool batch_norm);

/// Model as a checkpoint: config metadata plus every parameter and buffer by name.
Checkpoint model_checkpoint(const DvmnModel& model);
DvmnModel model_from_checkpoint(const Checkpoint& ckpt);
void save_model(const DvmnModel& model, const std::filesystem::path& path);
DvmnModel load_model(const std::filesystem::path& path);

}  // namespace sparseconv

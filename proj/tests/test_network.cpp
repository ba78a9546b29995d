#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "sparseconv/grad_check.hpp"
#include "sparseconv/network.hpp"

using namespace sparseconv;
using namespace sparseconv::testing;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.C = 4;
    cfg.stages = 2;
    cfg.bottlenecks_per_stage = 2;
    cfg.sisl_count = 2;
    cfg.dtype = DType::f64;
    return cfg;
}

// Window maximum written out directly: pad with zeros, stride, dilation.
ValidityMask pool(const ValidityMask& o, int d, int stride) {
    const std::int64_t oh = (o.height() - 1) / stride + 1;
    const std::int64_t ow = (o.width() - 1) / stride + 1;
    ValidityMask out(o.batch(), oh, ow);
    for (std::int64_t n = 0; n < o.batch(); ++n)
        for (std::int64_t v = 0; v < oh; ++v)
            for (std::int64_t u = 0; u < ow; ++u)
                for (int i = -1; i <= 1; ++i)
                    for (int j = -1; j <= 1; ++j) {
                        const std::int64_t y = v * stride + i * d, x = u * stride + j * d;
                        if (y >= 0 && y < o.height() && x >= 0 && x < o.width() && o.at(n, y, x))
                            out.set(n, v, u, true);
                    }
    return out;
}

// Dilation-1 result where some neighbour (excluding the centre) is valid, dilated otherwise.
ValidityMask switched_pool(const ValidityMask& o) {
    ValidityMask a = pool(o, 1, 1);
    ValidityMask b = pool(o, 2, 1);
    for (std::int64_t n = 0; n < o.batch(); ++n)
        for (std::int64_t y = 0; y < o.height(); ++y)
            for (std::int64_t x = 0; x < o.width(); ++x) {
                bool neighbour = false;
                for (int i = -1; i <= 1; ++i)
                    for (int j = -1; j <= 1; ++j) {
                        if (i == 0 && j == 0) continue;
                        const std::int64_t yy = y + i, xx = x + j;
                        if (yy >= 0 && yy < o.height() && xx >= 0 && xx < o.width() && o.at(n, yy, xx))
                            neighbour = true;
                    }
                if (!neighbour) a.set(n, y, x, b.at(n, y, x));
            }
    return a;
}

std::vector<ValidityMask> simulate_trace(const NetworkConfig& cfg, ValidityMask o) {
    std::vector<ValidityMask> out;
    for (int s = 1; s <= cfg.stages; ++s) {
        for (int b = 0; b < cfg.bottlenecks_per_stage; ++b) {
            const bool sisl = s == 1 && b < cfg.sisl_count;
            o = sisl ? switched_pool(o) : pool(o, 1, 1);
            out.push_back(o);
            if (b == 0) {
                o = pool(o, 1, 2);
                out.push_back(o);
            }
        }
    }
    return out;
}

std::multiset<Shape> stage_shapes(const DvmnModel& m, const std::string& prefix) {
    std::multiset<Shape> out;
    for (const auto& p : m.registry.all())
        if (p->name.starts_with(prefix)) out.insert(p->value.shape());
    return out;
}

struct Sample {
    Tensor depth;
    ValidityMask mask;
    Tensor image;
};

Sample random_sample(std::int64_t n, std::int64_t h, std::int64_t w, std::mt19937_64& rng,
                     double density, DType dtype = DType::f64) {
    Sample s;
    s.mask = random_mask(n, h, w, rng, density);
    s.depth = random_tensor({n, 1, h, w}, rng, 2.0, 60.0, dtype);
    for (std::int64_t i = 0; i < s.depth.numel(); ++i)
        if (!s.mask.values()[static_cast<std::size_t>(i)]) s.depth.set_flat(i, 0.0);
    s.image = random_tensor({n, 3, h, w}, rng, 0.0, 1.0, dtype);
    return s;
}

}  // namespace

TEST_CASE("channel schedule of the full-size network") {
    NetworkConfig cfg;
    CHECK(cfg.encoder_channels() == std::vector<int>{32, 64, 96, 128});
    CHECK(cfg.decoder_channels() == std::vector<int>{96, 64, 32, 1});
    auto m = build_dvmn(cfg, 7);
    for (int s = 0; s < 4; ++s) {
        CHECK(m.depth_encoder[s].expand.out_channels() == 32 * (s + 1));
        CHECK(m.image_encoder[s].expand.out_channels() == 32 * (s + 1));
        CHECK(m.depth_encoder[s].blocks.size() == 5);
        CHECK(m.decoder[s].up.weight->value.shape().c == cfg.decoder_channels()[s]);
    }
    CHECK(m.spp.fuse.out_channels() == 128);
    int sisl = 0;
    auto count_sisl = [&](const BottleneckParams& b) { sisl += b.inner_layer() == InnerLayer::sisl; };
    for (const auto& stage : m.depth_encoder) {
        count_sisl(stage.expand);
        for (const auto& b : stage.blocks) count_sisl(b);
    }
    CHECK(sisl == 4);
    CHECK(m.depth_encoder[0].expand.inner_layer() == InnerLayer::sisl);
    CHECK(m.depth_encoder[0].blocks[3].inner_layer() == InnerLayer::si_conv);
    const auto count = parameter_count(m);
    MESSAGE("trainable parameters: " << count);
    CHECK(count >= 1'000'000);
    CHECK(count <= 4'000'000);
}

TEST_CASE("encoders share structure outside the first stage") {
    auto m = build_dvmn(NetworkConfig{}, 1);
    for (int s = 2; s <= 4; ++s) {
        const std::string stage = ".stage" + std::to_string(s) + ".";
        CHECK(stage_shapes(m, "depth" + stage) == stage_shapes(m, "image" + stage));
    }
}

TEST_CASE("parameter count scales quadratically with C") {
    NetworkConfig a = tiny_config();
    a.C = 16;
    a.stages = 3;
    NetworkConfig b = a;
    b.C = 32;
    const double ratio = double(parameter_count(build_dvmn(b, 1))) / parameter_count(build_dvmn(a, 1));
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.1);
}

TEST_CASE("build is deterministic and validates its config") {
    auto a = build_dvmn(tiny_config(), 5);
    auto b = build_dvmn(tiny_config(), 5);
    auto c = build_dvmn(tiny_config(), 6);
    REQUIRE(a.registry.all().size() == b.registry.all().size());
    bool any_differs = false;
    for (std::size_t i = 0; i < a.registry.all().size(); ++i) {
        CHECK(a.registry.all()[i]->name == b.registry.all()[i]->name);
        CHECK(a.registry.all()[i]->value.bit_equal(b.registry.all()[i]->value));
        any_differs = any_differs || !a.registry.all()[i]->value.bit_equal(c.registry.all()[i]->value);
    }
    CHECK(any_differs);

    NetworkConfig bad = tiny_config();
    bad.stages = 0;
    CHECK_THROWS_AS(build_dvmn(bad, 1), std::invalid_argument);
    bad = tiny_config();
    bad.sisl_count = 3;
    CHECK_THROWS_AS(build_dvmn(bad, 1), std::invalid_argument);
    bad = tiny_config();
    bad.width_ratio = 0;
    CHECK_THROWS_AS(build_dvmn(bad, 1), std::invalid_argument);
}

TEST_CASE("config round-trips through key/value pairs") {
    NetworkConfig cfg = tiny_config();
    cfg.width_ratio = 0.3;
    cfg.variant = BottleneckVariant::pre_addition;
    cfg.share_weights = false;
    NetworkConfig back = NetworkConfig::from_pairs(cfg.to_pairs());
    CHECK(back.to_pairs() == cfg.to_pairs());
    CHECK_THROWS_AS(NetworkConfig::from_pairs({{"colour", "red"}}), std::invalid_argument);
    CHECK_THROWS_AS(NetworkConfig::from_pairs({{"C", "many"}}), std::invalid_argument);
}

TEST_CASE("forward contract") {
    std::mt19937_64 rng(3);
    auto m = build_dvmn(tiny_config(), 3);
    auto s = random_sample(2, 8, 12, rng, 0.1);
    Tensor y = complete(m, s.depth, s.mask, s.image);
    CHECK(y.shape() == Shape{2, 1, 8, 12});
    CHECK(y.all_finite());

    Tensor none = complete(m, Tensor({1, 1, 8, 8}), ValidityMask(1, 8, 8), Tensor({1, 3, 8, 8}));
    CHECK(none.all_finite());

    try {
        complete(m, Tensor({1, 1, 10, 8}), ValidityMask(1, 10, 8), Tensor({1, 3, 10, 8}));
        FAIL("indivisible size accepted");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("pad by 2 to 12") != std::string::npos);
    }
    CHECK_THROWS_AS(complete(m, Tensor({1, 1, 8, 8}), ValidityMask(1, 8, 8), Tensor({1, 1, 8, 8})),
                    std::invalid_argument);
}

TEST_CASE("end-to-end sparsity invariance") {
    std::mt19937_64 rng(4);
    NetworkConfig cfg = tiny_config();
    for (auto variant : {BottleneckVariant::plain, BottleneckVariant::pre_activation,
                         BottleneckVariant::pre_addition}) {
        cfg.variant = variant;
        auto m = build_dvmn(cfg, 4);
        for (int trial = 0; trial < 10; ++trial) {
            auto s = random_sample(1, 16, 16, rng, 0.05 + 0.05 * trial);
            Tensor perturbed = s.depth;
            std::uniform_real_distribution<double> junk(-500, 500);
            for (std::int64_t i = 0; i < perturbed.numel(); ++i)
                if (!s.mask.values()[static_cast<std::size_t>(i)]) perturbed.set_flat(i, junk(rng));
            CHECK(complete(m, s.depth, s.mask, s.image).bit_equal(complete(m, perturbed, s.mask, s.image)));
        }
    }
}

TEST_CASE("layer_mask_trace") {
    std::mt19937_64 rng(5);
    NetworkConfig cfg = tiny_config();
    cfg.stages = 3;
    cfg.bottlenecks_per_stage = 3;
    cfg.sisl_count = 3;
    auto m = build_dvmn(cfg, 5);

    auto dense = layer_mask_trace(m, ValidityMask(1, 16, 16, true));
    CHECK(dense.size() == 12);
    for (const auto& e : dense) CHECK(e.density == 1.0);
    CHECK(dense[0].layer == "depth.stage1.block0");
    CHECK(dense[1].layer == "depth.stage1.down");

    for (int trial = 0; trial < 20; ++trial) {
        ValidityMask o = random_mask(1, 16, 16, rng, 0.02 * trial);
        auto trace = layer_mask_trace(m, o);
        auto oracle = simulate_trace(cfg, o);
        REQUIRE(trace.size() == oracle.size());
        double previous = mask_density(o);
        for (std::size_t i = 0; i < trace.size(); ++i) {
            CAPTURE(trace[i].layer);
            CHECK(trace[i].mask == oracle[i]);
            CHECK(trace[i].density == mask_density(oracle[i]));
            if (trace[i].stride == 1) CHECK(trace[i].density >= previous);
            previous = trace[i].density;
        }
    }
}

TEST_CASE("SISL layers reach higher density on scan lines") {
    std::mt19937_64 rng(6);
    NetworkConfig with = tiny_config();
    with.stages = 1;
    with.bottlenecks_per_stage = 4;
    with.sisl_count = 4;
    NetworkConfig without = with;
    without.sisl_count = 0;
    auto a = build_dvmn(with, 1);
    auto b = build_dvmn(without, 1);
    ValidityMask o = scanline_mask(64, 128, rng, 4, 0.2);
    auto ta = layer_mask_trace(a, o);
    auto tb = layer_mask_trace(b, o);
    CHECK(ta[0].density > tb[0].density);
    CHECK(mask_dominates(ta[0].mask, tb[0].mask));
}

TEST_CASE("checkpoint round trip is bit exact") {
    std::mt19937_64 rng(8);
    const auto dir = std::filesystem::temp_directory_path() / "sparseconv_test_network";
    std::filesystem::create_directories(dir);
    NetworkConfig cfg = tiny_config();
    cfg.dtype = DType::f32;
    auto m = build_dvmn(cfg, 8);
    for (const auto& p : m.registry.all())
        if (!p->trainable) p->value = random_tensor(p->value.shape(), rng, 0.5, 1.5, p->value.dtype());
    save_model(m, dir / "model.ckpt");
    auto back = load_model(dir / "model.ckpt");
    CHECK(back.config.to_pairs() == m.config.to_pairs());
    REQUIRE(back.registry.all().size() == m.registry.all().size());
    for (std::size_t i = 0; i < m.registry.all().size(); ++i)
        CHECK(back.registry.all()[i]->value.bit_equal(m.registry.all()[i]->value));
    auto s = random_sample(1, 8, 8, rng, 0.2, DType::f32);
    CHECK(complete(m, s.depth, s.mask, s.image).bit_equal(complete(back, s.depth, s.mask, s.image)));

    save_model(back, dir / "again.ckpt");
    std::ifstream f1(dir / "model.ckpt", std::ios::binary), f2(dir / "again.ckpt", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_model(dir / "junk.ckpt"), std::runtime_error);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << b1.substr(0, b1.size() / 2);
    CHECK_THROWS_AS(load_model(dir / "short.ckpt"), std::runtime_error);
    CHECK_THROWS_AS(load_model(dir / "missing.ckpt"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("decoder bottleneck gradients") {
    std::mt19937_64 rng(9);
    ParameterRegistry reg;
    ParameterFactory f(reg, 10, DType::f64);
    auto block = make_dense_bottleneck(f, "block", 3, 0.67, true);
    auto x = std::make_shared<Parameter>(Parameter{"x", random_tensor({2, 3, 4, 4}, rng), true});
    Tensor weights = random_tensor({2, 3, 4, 4}, rng);
    std::vector<ParameterPtr> params{x};
    for (const auto& p : reg.trainable()) params.push_back(p);
    for (Mode mode : {Mode::train, Mode::eval}) {
        const double err = grad_check(
            [&](Tape& t) {
                return ops::weighted_sum(t, dense_bottleneck_forward(t, t.param(x), block, mode), weights);
            },
            params);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("untrained network predicts zero depth") {
    std::mt19937_64 rng(12);
    auto m = build_dvmn(tiny_config(), 12);
    auto s = random_sample(1, 8, 8, rng, 0.3);
    const Tensor out = complete(m, s.depth, s.mask, s.image);
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.flat(i) == 0.0);
}

TEST_CASE("whole-network gradients") {
    std::mt19937_64 rng(11);
    NetworkConfig cfg = tiny_config();
    cfg.C = 2;
    auto m = build_dvmn(cfg, 11);
    auto s = random_sample(2, 8, 8, rng, 0.3);
    Tensor weights = random_tensor({2, 1, 8, 8}, rng);
    // Non-zero offsets keep pre-activations away from the ReLU kink at exactly zero.
    for (const auto& p : m.registry.trainable())
        if (p->name.ends_with(".bias") || p->name.ends_with(".beta"))
            p->value = random_tensor(p->value.shape(), rng, -0.5, 0.5);
    auto& last = m.decoder.back().up.weight->value;
    last = random_tensor(last.shape(), rng, -0.5, 0.5);
    // The loss is a deep composition of order 100; a wider step keeps rounding noise below the
    // smallest gradient entries.
    const double err = grad_check(
        [&](Tape& t) {
            return ops::weighted_sum(t, forward(t, m, s.depth, s.mask, s.image, Mode::train), weights);
        },
        m.registry.trainable(), 1e-4);
    CHECK(err < 1e-4);
}

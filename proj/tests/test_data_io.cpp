#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "sparseconv/dataset.hpp"
#include "sparseconv/metrics.hpp"

using namespace sparseconv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

// Minimal PNG encoder with uncompressed deflate blocks, used to produce files whose stored
// samples are known exactly without going through the library writer.
std::uint32_t crc32(const std::string& bytes) {
    std::uint32_t c = 0xFFFFFFFFu;
    for (unsigned char b : bytes) {
        c ^= b;
        for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
    }
    return c ^ 0xFFFFFFFFu;
}

void put_be32(std::string& s, std::uint32_t v) {
    for (int k = 3; k >= 0; --k) s.push_back(char((v >> (8 * k)) & 0xFF));
}

void chunk(std::string& out, const std::string& type, const std::string& data) {
    put_be32(out, std::uint32_t(data.size()));
    const std::string body = type + data;
    out += body;
    put_be32(out, crc32(body));
}

void write_raw_png(const fs::path& path, std::uint32_t w, std::uint32_t h, int bit_depth,
                   int color_type, const std::vector<std::uint16_t>& samples) {
    const int channels = color_type == 2 ? 3 : 1;
    std::string raw;
    for (std::uint32_t y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        for (std::uint32_t i = 0; i < w * std::uint32_t(channels); ++i) {
            const std::uint16_t v = samples[y * w * std::uint32_t(channels) + i];
            if (bit_depth == 16) raw.push_back(char(v >> 8));
            raw.push_back(char(v & 0xFF));
        }
    }
    std::string z{char(0x78), char(0x01)};
    std::size_t pos = 0;
    do {
        const std::size_t n = std::min<std::size_t>(65535, raw.size() - pos);
        const bool last = pos + n == raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(char(n & 0xFF));
        z.push_back(char(n >> 8));
        z.push_back(char(~n & 0xFF));
        z.push_back(char((~n >> 8) & 0xFF));
        z += raw.substr(pos, n);
        pos += n;
    } while (pos < raw.size());
    std::uint32_t a = 1, b = 0;
    for (unsigned char c : raw) {
        a = (a + c) % 65521;
        b = (b + a) % 65521;
    }
    put_be32(z, (b << 16) | a);

    std::string png = "\x89PNG\r\n\x1a\n";
    std::string ihdr;
    put_be32(ihdr, w);
    put_be32(ihdr, h);
    ihdr += std::string{char(bit_depth), char(color_type), 0, 0, 0};
    chunk(png, "IHDR", ihdr);
    chunk(png, "IDAT", z);
    chunk(png, "IEND", "");
    std::ofstream(path, std::ios::binary) << png;
}

DepthMap fuzzed_map(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> size(1, 40);
    std::uniform_int_distribution<int> stored(1, 65535);
    std::bernoulli_distribution hole(0.3);
    DepthMap m(size(rng), size(rng));
    for (auto& d : m.depth) d = hole(rng) ? 0.0 : stored(rng) / 256.0;
    return m;
}

DepthMap constant_map(std::int64_t h, std::int64_t w, double v) {
    DepthMap m(h, w);
    for (auto& d : m.depth) d = v;
    return m;
}

}  // namespace

TEST_CASE("depth png stores metres times 256") {
    TempDir dir("sparseconv_test_depth_units");
    write_raw_png(dir.path / "d.png", 3, 2, 16, 0, {256, 0, 65535, 1, 512, 1280});
    const auto m = read_depth_png(dir.path / "d.png");
    REQUIRE(m.height == 2);
    REQUIRE(m.width == 3);
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(0, 1) == 0.0);
    CHECK(m.at(0, 2) == 65535.0 / 256.0);
    CHECK(m.at(1, 0) == 1.0 / 256.0);
    CHECK(m.at(1, 1) == 2.0);
    CHECK(m.at(1, 2) == 5.0);
    const auto mask = m.mask();
    CHECK(mask.count() == 5);
    CHECK_FALSE(mask.at(0, 0, 1));

    // the library writer produces the same samples
    write_depth_png(m, dir.path / "again.png");
    CHECK(read_depth_png(dir.path / "again.png") == m);
}

TEST_CASE("depth png round trip on fuzzed maps") {
    TempDir dir("sparseconv_test_depth_fuzz");
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = fuzzed_map(rng);
        write_depth_png(m, dir.path / "a.png");
        const auto back = read_depth_png(dir.path / "a.png");
        REQUIRE(back == m);
        write_depth_png(back, dir.path / "b.png");
        REQUIRE(slurp(dir.path / "a.png") == slurp(dir.path / "b.png"));
    }
}

TEST_CASE("depth png rejects other formats and unrepresentable depths") {
    TempDir dir("sparseconv_test_depth_errors");
    write_raw_png(dir.path / "gray8.png", 2, 2, 8, 0, {1, 2, 3, 4});
    CHECK_THROWS_AS(read_depth_png(dir.path / "gray8.png"), std::runtime_error);
    write_raw_png(dir.path / "rgb16.png", 1, 1, 16, 2, {1, 2, 3});
    CHECK_THROWS_AS(read_depth_png(dir.path / "rgb16.png"), std::runtime_error);
    CHECK_THROWS_AS(read_depth_png(dir.path / "missing.png"), std::runtime_error);
    std::ofstream(dir.path / "junk.png", std::ios::binary) << "not a png at all";
    CHECK_THROWS_AS(read_depth_png(dir.path / "junk.png"), std::runtime_error);

    CHECK_THROWS_AS(write_depth_png(constant_map(2, 2, 256.0), dir.path / "x.png"), std::invalid_argument);
    CHECK_THROWS_AS(write_depth_png(constant_map(2, 2, -1.0), dir.path / "x.png"), std::invalid_argument);
    CHECK_THROWS_AS(write_depth_png(constant_map(2, 2, NAN), dir.path / "x.png"), std::invalid_argument);
    CHECK_NOTHROW(write_depth_png(constant_map(2, 2, DepthMap::kMaxDepth), dir.path / "x.png"));
}

TEST_CASE("image and mask png") {
    TempDir dir("sparseconv_test_image");
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> byte(0, 255);
    Tensor img(Shape{1, 3, 5, 7}, DType::f32);
    for (std::int64_t i = 0; i < img.numel(); ++i) img.set_flat(i, byte(rng) / 255.0);
    write_image_png(img, dir.path / "i.png");
    const auto back = read_image_png(dir.path / "i.png");
    CHECK(back.bit_equal(img));

    write_raw_png(dir.path / "gray.png", 2, 1, 8, 0, {0, 255});
    const auto gray = read_image_png(dir.path / "gray.png", DType::f64);
    CHECK(gray.shape() == Shape{1, 3, 1, 2});
    for (int c = 0; c < 3; ++c) {
        CHECK(gray.at(0, c, 0, 0) == 0.0);
        CHECK(gray.at(0, c, 0, 1) == 1.0);
    }

    ValidityMask mask(1, 4, 6);
    mask.set(0, 1, 2, true);
    mask.set(0, 3, 5, true);
    write_mask_png(mask, dir.path / "m.png");
    CHECK(read_mask_png(dir.path / "m.png") == mask);
    const auto as_image = read_image_png(dir.path / "m.png", DType::f64);
    CHECK(as_image.at(0, 0, 1, 2) == 1.0);  // white is valid
    CHECK(as_image.at(0, 0, 0, 0) == 0.0);
}

TEST_CASE("synthetic scan lines") {
    SUBCASE("density near five percent on 64x256") {
        double total = 0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto s = synth_scanlines(64, 256, 8, 0.6, DepthModel::planar_ground, seed);
            const double d = s.sparse.density();
            CHECK(std::abs(d - 0.05) <= 0.01);
            total += d;
        }
        CHECK(std::abs(total / 50 - 0.05) <= 0.002);
    }
    SUBCASE("ground truth is dense and the sparse map is a masked copy") {
        for (auto model : {DepthModel::planar_ground, DepthModel::constant, DepthModel::ramp}) {
            const auto s = synth_scanlines(32, 48, 6, 0.5, model, 3);
            CHECK(s.ground_truth.density() == 1.0);
            for (std::size_t i = 0; i < s.sparse.depth.size(); ++i) {
                const double v = s.sparse.depth[i];
                CHECK((v == 0.0 || v == s.ground_truth.depth[i]));
            }
            CHECK(quantize(s.ground_truth) == s.ground_truth);
            for (double d : s.ground_truth.depth) CHECK((d > 0.0 && d <= DepthMap::kMaxDepth));
        }
    }
    SUBCASE("only the chosen rows carry samples") {
        const auto s = synth_scanlines(64, 32, 8, 0.0, DepthModel::ramp, 4);
        for (std::int64_t y = 0; y < 64; ++y) {
            const bool line = y % 8 == 4;
            for (std::int64_t x = 0; x < 32; ++x) CHECK((s.sparse.at(y, x) > 0) == line);
        }
    }
    SUBCASE("n_lines 0 gives an empty map") {
        CHECK(synth_scanlines(16, 16, 0, 0.3, DepthModel::constant, 1).sparse.density() == 0.0);
    }
    SUBCASE("seeded") {
        const auto a = synth_scanlines(20, 30, 5, 0.4, DepthModel::planar_ground, 9);
        const auto b = synth_scanlines(20, 30, 5, 0.4, DepthModel::planar_ground, 9);
        const auto c = synth_scanlines(20, 30, 5, 0.4, DepthModel::planar_ground, 10);
        CHECK(a.sparse == b.sparse);
        CHECK(a.ground_truth == b.ground_truth);
        CHECK(a.image.bit_equal(b.image));
        CHECK_FALSE(a.sparse == c.sparse);
    }
    SUBCASE("planar ground runs from far at the top to near at the bottom") {
        const auto s = synth_scanlines(64, 128, 8, 0.6, DepthModel::planar_ground, 5);
        CHECK(s.ground_truth.at(0, 64) > 25.0);
        CHECK(s.ground_truth.at(63, 64) < 6.0);
        for (std::int64_t y = 1; y < 64; ++y) CHECK(s.ground_truth.at(y, 64) <= s.ground_truth.at(y - 1, 64));
    }
    SUBCASE("image is in range and varies") {
        const auto s = synth_scanlines(32, 64, 4, 0.5, DepthModel::planar_ground, 6);
        CHECK(s.image.shape() == Shape{1, 3, 32, 64});
        double lo = 1, hi = 0;
        for (std::int64_t i = 0; i < s.image.numel(); ++i) {
            lo = std::min(lo, s.image.flat(i));
            hi = std::max(hi, s.image.flat(i));
        }
        CHECK(lo >= 0.0);
        CHECK(hi <= 1.0);
        CHECK(hi - lo > 0.05);
    }
    CHECK_THROWS_AS(synth_scanlines(8, 8, 9, 0.5, DepthModel::constant, 0), std::invalid_argument);
    CHECK_THROWS_AS(synth_scanlines(8, 8, 2, 1.0, DepthModel::constant, 0), std::invalid_argument);
    CHECK(parse_depth_model("ramp") == DepthModel::ramp);
    CHECK_THROWS_AS(parse_depth_model("sphere"), std::invalid_argument);
}

TEST_CASE("metrics hand cases") {
    SUBCASE("identical maps") {
        std::mt19937_64 rng(7);
        auto gt = fuzzed_map(rng);
        auto pred = constant_map(gt.height, gt.width, 3.0);
        for (std::size_t i = 0; i < gt.depth.size(); ++i)
            if (gt.depth[i] > 0) pred.depth[i] = gt.depth[i];
        const auto r = evaluate(pred, gt);
        CHECK(r.rmse_mm == 0.0);
        CHECK(r.mae_mm == 0.0);
        CHECK(r.irmse_per_km == 0.0);
        CHECK(r.imae_per_km == 0.0);
        CHECK(r.evaluated_pixels == gt.mask().count());
    }
    SUBCASE("5.1 m against 5.0 m is 100 mm") {
        const auto r = evaluate(constant_map(1, 1, 5.1), constant_map(1, 1, 5.0));
        CHECK(r.rmse_mm == 100.0);
        CHECK(r.mae_mm == 100.0);
        CHECK(r.evaluated_pixels == 1);
    }
    SUBCASE("4 m against 2 m is 250 per km in inverse depth") {
        const auto r = evaluate(constant_map(1, 1, 4.0), constant_map(1, 1, 2.0));
        CHECK(r.irmse_per_km == 250.0);
        CHECK(r.imae_per_km == 250.0);
        CHECK(r.rmse_mm == 2000.0);
    }
    SUBCASE("unobserved ground truth is ignored") {
        DepthMap gt(1, 3), pred(1, 3);
        gt.depth = {2.0, 0.0, 4.0};
        pred.depth = {3.0, 0.0, 4.0};  // pred 0 at an unobserved pixel is fine
        const auto r = evaluate(pred, gt);
        CHECK(r.evaluated_pixels == 2);
        CHECK(r.mae_mm == doctest::Approx(500.0));
        CHECK(r.rmse_mm == doctest::Approx(std::sqrt(1e6 / 2)));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(evaluate(constant_map(2, 2, 1.0), DepthMap(2, 2)), std::invalid_argument);
        CHECK_THROWS_AS(evaluate(constant_map(2, 2, 1.0), constant_map(2, 3, 1.0)), std::invalid_argument);
        DepthMap pred = constant_map(2, 2, 1.0);
        pred.depth[3] = 0.0;
        CHECK_THROWS_AS(evaluate(pred, constant_map(2, 2, 1.0)), std::domain_error);
    }
}

TEST_CASE("metrics properties") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> depth(1.0, 80.0);
    for (int trial = 0; trial < 50; ++trial) {
        DepthMap a(6, 9), b(6, 9);
        for (auto& d : a.depth) d = depth(rng);
        for (auto& d : b.depth) d = depth(rng);
        const auto ab = evaluate(a, b), ba = evaluate(b, a);
        CHECK(ab.rmse_mm == doctest::Approx(ba.rmse_mm).epsilon(1e-12));
        CHECK(ab.mae_mm == doctest::Approx(ba.mae_mm).epsilon(1e-12));
        CHECK(ab.irmse_per_km == doctest::Approx(ba.irmse_per_km).epsilon(1e-12));
        CHECK(ab.rmse_mm >= ab.mae_mm);
        CHECK(ab.irmse_per_km >= ab.imae_per_km);

        // pooling two halves equals evaluating the whole
        DepthMap a1(3, 9), a2(3, 9), b1(3, 9), b2(3, 9);
        std::copy(a.depth.begin(), a.depth.begin() + 27, a1.depth.begin());
        std::copy(a.depth.begin() + 27, a.depth.end(), a2.depth.begin());
        std::copy(b.depth.begin(), b.depth.begin() + 27, b1.depth.begin());
        std::copy(b.depth.begin() + 27, b.depth.end(), b2.depth.begin());
        const std::array parts{evaluate(a1, b1), evaluate(a2, b2)};
        const auto pooled = combine(parts);
        CHECK(pooled.rmse_mm == doctest::Approx(ab.rmse_mm).epsilon(1e-12));
        CHECK(pooled.imae_per_km == doctest::Approx(ab.imae_per_km).epsilon(1e-12));
        CHECK(pooled.evaluated_pixels == 54);
    }
}

TEST_CASE("synthetic dataset on disk") {
    TempDir dir("sparseconv_test_dataset");
    SynthSpec spec;
    spec.height = 16;
    spec.width = 32;
    spec.n_lines = 4;
    spec.count = 3;
    const auto manifest = write_synth_dataset(spec, 21, dir.path / "a");
    write_synth_dataset(spec, 21, dir.path / "b");
    for (const char* f : {"manifest.tsv", "sparse/000002.png", "gt/000000.png", "image/000001.png"})
        CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
    CHECK(slurp(manifest).rfind("sparse\tgt\timage\nsparse/000000.png\tgt/000000.png\timage/000000.png\n", 0) == 0);

    const auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 3);
    const auto samples = load_dataset(manifest);
    const auto direct = synth_dataset(spec, 21);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto expected = make_sample(direct[i]);
        CHECK(samples[i].depth.bit_equal(expected.depth));
        CHECK(samples[i].gt.bit_equal(expected.gt));
        CHECK(samples[i].image.bit_equal(expected.image));
        CHECK(samples[i].mask == expected.mask);
        CHECK(samples[i].gt_mask.count() == 16 * 32);
    }
    CHECK_FALSE(direct[0].sparse == direct[1].sparse);

    const auto batch = stack_samples(samples);
    CHECK(batch.depth.shape() == Shape{3, 1, 16, 32});
    CHECK(batch.image.shape() == Shape{3, 3, 16, 32});
    CHECK(batch.mask.batch() == 3);

    std::ofstream(dir.path / "bad.tsv") << "sparse\tgt\timage\na.png\tb.png\n";
    CHECK_THROWS_WITH_AS(read_manifest(dir.path / "bad.tsv"), doctest::Contains(":2:"), std::runtime_error);
    std::ofstream(dir.path / "nohead.tsv") << "a.png\tb.png\tc.png\n";
    CHECK_THROWS_AS(read_manifest(dir.path / "nohead.tsv"), std::runtime_error);
}

TEST_CASE("KITTI folder layouts") {
    TempDir dir("sparseconv_test_kitti");
    const auto s = synth_scanlines(8, 12, 2, 0.3, DepthModel::ramp, 4);
    auto put = [&](const fs::path& p, bool depth) {
        fs::create_directories(p.parent_path());
        if (depth)
            write_depth_png(s.sparse, p);
        else
            write_image_png(s.image, p);
    };

    SUBCASE("selection folder") {
        const fs::path root = dir.path / "val_selection_cropped";
        for (const char* frame : {"0000000005", "0000000020"}) {
            const std::string tail = std::string(frame) + "_image_02.png";
            put(root / "velodyne_raw" / ("2011_09_26_drive_0002_sync_velodyne_raw_" + tail), true);
            put(root / "groundtruth_depth" / ("2011_09_26_drive_0002_sync_groundtruth_depth_" + tail), true);
            put(root / "image" / ("2011_09_26_drive_0002_sync_image_" + tail), false);
        }
        const auto entries = dataset_entries(root);
        REQUIRE(entries.size() == 2);
        CHECK(entries[1].gt.filename() == "2011_09_26_drive_0002_sync_groundtruth_depth_0000000020_image_02.png");
        CHECK(entries[1].image.filename() == "2011_09_26_drive_0002_sync_image_0000000020_image_02.png");
        CHECK(load_sample(entries[0]).mask == s.sparse.mask());

        fs::remove(root / "image" / "2011_09_26_drive_0002_sync_image_0000000020_image_02.png");
        CHECK_THROWS_WITH_AS(kitti_entries(root), doctest::Contains("sync_image_0000000020"), std::runtime_error);
    }
    SUBCASE("split folder with raw images") {
        const fs::path root = dir.path / "train", raw = dir.path / "raw";
        const std::string drive = "2011_09_28_drive_0001_sync";
        for (const char* camera : {"image_02", "image_03"}) {
            put(root / drive / "proj_depth" / "velodyne_raw" / camera / "0000000007.png", true);
            put(root / drive / "proj_depth" / "groundtruth" / camera / "0000000007.png", true);
            put(raw / "2011_09_28" / drive / camera / "data" / "0000000007.png", false);
        }
        const auto entries = kitti_entries(root, raw);
        REQUIRE(entries.size() == 2);
        CHECK(entries[1].image == raw / "2011_09_28" / drive / "image_03" / "data" / "0000000007.png");
        CHECK_THROWS_WITH_AS(kitti_entries(root), doctest::Contains("raw recordings"), std::runtime_error);
    }
    SUBCASE("unrecognized folder") {
        fs::create_directories(dir.path / "empty");
        CHECK_THROWS_WITH_AS(kitti_entries(dir.path / "empty"), doctest::Contains("no KITTI samples"), std::runtime_error);
        CHECK_THROWS_AS(kitti_entries(dir.path / "absent"), std::runtime_error);
    }
}

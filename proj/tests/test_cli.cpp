#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"

using namespace sparseconv;
using namespace sparseconv::cli;

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

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "sparseconv");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Rows of a tab-separated report, split into fields.
std::vector<std::vector<std::string>> table(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, '\t')) fields.push_back(f);
        rows.push_back(fields);
    }
    return rows;
}

const char* kToyConfig = R"(# toy run
version = 1
seed = 5
net.C = 4
net.stages = 2
net.bottlenecks_per_stage = 2
net.sisl_count = 2
train.batch_size = 2
train.augment = true
data.synthetic = true
synth.height = 16
synth.width = 16
synth.lines = 4
synth.count = 4
)";

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("run config parsing") {
    const RunConfig c = parse_run_config(std::string(kToyConfig) + "train.epochs = 7\nout = runs/a\n", "/base");
    CHECK(c.seed == 5);
    CHECK(c.net.C == 4);
    CHECK(c.net.stages == 2);
    CHECK(c.train.epochs == 7);
    CHECK(c.train.batch_size == 2);
    CHECK(c.train.augment);
    CHECK(c.train.seed == 5);
    CHECK(c.synthetic);
    CHECK(c.synth.count == 4);
    CHECK(c.out_dir == fs::path("/base/runs/a"));

    // canonical text round-trips
    const std::string text = format_run_config(c);
    CHECK(format_run_config(parse_run_config(text, "/elsewhere")) == text);

    auto error_of = [](const std::string& text) {
        try {
            parse_run_config(text, "", "run.cfg");
        } catch (const std::runtime_error& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(error_of("version = 1\nseed = 1\nnet.widht = 3\n") == "run.cfg:3: unknown key 'net.widht'");
    CHECK(error_of("version = 1\n\n# c\nbogus = 1\n") == "run.cfg:4: unknown key 'bogus'");
    CHECK(error_of("seed = 1\nversion = 1\n").rfind("run.cfg:1: the first setting must be", 0) == 0);
    CHECK(error_of("version = 2\n").find("unsupported config version '2'") != std::string::npos);
    CHECK(error_of("# nothing\n") == "run.cfg: missing 'version = 1' line");
    CHECK(error_of("version = 1\ntrain.epochs = ten\n").rfind("run.cfg:2: invalid value for 'train.epochs'", 0) == 0);
    CHECK(error_of("version = 1\ntrain.epochs\n").rfind("run.cfg:2: expected 'key = value'", 0) == 0);
    CHECK(error_of("version = 1\nseed = 1\nseed = 2\n") == "run.cfg:3: 'seed' is set twice");
    CHECK(error_of("version = 1\ntrain.shuffle = maybe\n").rfind("run.cfg:2:", 0) == 0);
    CHECK(error_of("version = 1\nnet.stages = 0\n").find("stages") != std::string::npos);
}

TEST_CASE("reflect index") {
    const std::vector<std::int64_t> expected{2, 1, 0, 1, 2, 3, 4, 3, 2, 1, 0, 1};
    for (std::int64_t i = -2; i < 10; ++i) CHECK(reflect_index(i, 5) == expected[std::size_t(i + 2)]);
    CHECK(reflect_index(7, 1) == 0);
}

TEST_CASE("synth and eval") {
    TempDir dir("sparseconv_test_cli_synth");
    const auto a = (dir.path / "a").string(), b = (dir.path / "b").string();
    REQUIRE(invoke({"synth", "--out", a, "--count", "3", "--height", "32", "--width", "64", "--seed", "4"}).code == 0);
    REQUIRE(invoke({"synth", "--out", b, "--count", "3", "--height", "32", "--width", "64", "--seed", "4"}).code == 0);
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        CHECK(slurp(e.path()) == slurp(fs::path(b) / rel));
    }

    SUBCASE("ground truth against itself") {
        const auto r = invoke({"eval", "--pred", a + "/gt", "--gt", a + "/gt"});
        CHECK(r.code == 0);
        const auto rows = table(r.out);
        REQUIRE(rows.size() == 5);
        CHECK(rows[0][0] == "file");
        for (std::size_t i = 1; i < rows.size(); ++i)
            for (int k = 1; k <= 4; ++k) CHECK(rows[i][std::size_t(k)] == "0.0000");
        CHECK(rows.back()[0] == "mean");
    }
    SUBCASE("constant offset") {
        // 125 mm is the nearest offset representable in the 1/256 m encoding
        fs::create_directories(dir.path / "pred");
        for (const char* n : {"000000.png", "000001.png", "000002.png"}) {
            DepthMap gt = read_depth_png(fs::path(a) / "gt" / n);
            for (double& d : gt.depth) d += 32.0 / 256.0;
            write_depth_png(gt, dir.path / "pred" / n);
        }
        const auto before = slurp(fs::path(a) / "gt" / "000001.png");
        const auto r = invoke({"eval", "--pred", (dir.path / "pred").string(), "--gt", a + "/gt", "--out",
                               (dir.path / "report.tsv").string()});
        CHECK(r.code == 0);
        const auto rows = table(r.out);
        REQUIRE(rows.size() == 5);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i][1] == "125.0000");
            CHECK(rows[i][2] == "125.0000");
        }
        CHECK(slurp(dir.path / "report.tsv") == r.out);
        CHECK(slurp(fs::path(a) / "gt" / "000001.png") == before);
    }
    SUBCASE("unpaired files") {
        fs::create_directories(dir.path / "pred");
        fs::copy_file(fs::path(a) / "gt" / "000000.png", dir.path / "pred" / "000000.png");
        fs::copy_file(fs::path(a) / "gt" / "000001.png", dir.path / "pred" / "extra.png");
        const auto r = invoke({"eval", "--pred", (dir.path / "pred").string(), "--gt", a + "/gt"});
        CHECK(r.code == 0);
        CHECK(table(r.out).size() == 3);
        CHECK(r.err.find("extra.png") != std::string::npos);
        CHECK(r.err.find("000002.png") != std::string::npos);

        fs::remove(dir.path / "pred" / "000000.png");
        const auto none = invoke({"eval", "--pred", (dir.path / "pred").string(), "--gt", a + "/gt"});
        CHECK(none.code != 0);
        CHECK(invoke({"eval", "--pred", (dir.path / "nowhere").string(), "--gt", a + "/gt"}).err.find("nowhere") !=
              std::string::npos);
    }
}

TEST_CASE("complete") {
    TempDir dir("sparseconv_test_cli_complete");
    NetworkConfig cfg;
    cfg.C = 4;
    cfg.stages = 2;
    cfg.bottlenecks_per_stage = 2;
    cfg.sisl_count = 1;
    save_model(build_dvmn(cfg, 3), dir.path / "model.ckpt");
    // 18x30 is not a multiple of 4, so the command pads and crops
    const auto s = synth_scanlines(18, 30, 6, 0.5, DepthModel::ramp, 2);
    write_depth_png(s.sparse, dir.path / "sparse.png");
    write_image_png(s.image, dir.path / "image.png");
    const auto sparse_bytes = slurp(dir.path / "sparse.png");

    auto args = [&](const std::string& out) {
        return std::vector<std::string>{"complete", "--depth", (dir.path / "sparse.png").string(), "--image",
                                        (dir.path / "image.png").string(), "--checkpoint",
                                        (dir.path / "model.ckpt").string(), "--out", (dir.path / out).string()};
    };
    const auto r1 = invoke(args("one.png"));
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("input density") != std::string::npos);
    CHECK(r1.err.find("reflect-padding to 20x32") != std::string::npos);
    const auto result = read_depth_png(dir.path / "one.png");
    CHECK(result.height == 18);
    CHECK(result.width == 30);
    CHECK(result.density() == 1.0);
    REQUIRE(invoke(args("two.png")).code == 0);
    CHECK(slurp(dir.path / "one.png") == slurp(dir.path / "two.png"));
    CHECK(slurp(dir.path / "sparse.png") == sparse_bytes);

    auto missing = args("three.png");
    missing[2] = (dir.path / "absent.png").string();
    const auto r3 = invoke(missing);
    CHECK(r3.code != 0);
    CHECK(r3.err.find("absent.png") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "three.png"));
}

TEST_CASE("train") {
    TempDir dir("sparseconv_test_cli_train");
    write_text(dir.path / "toy.cfg", std::string(kToyConfig) + "train.epochs = 4\n");
    write_text(dir.path / "two.cfg", std::string(kToyConfig) + "train.epochs = 2\n");
    write_text(dir.path / "zero.cfg", std::string(kToyConfig) + "train.epochs = 0\n");

    SUBCASE("zero epochs saves the initialization") {
        const auto r = invoke({"train", "--config", (dir.path / "zero.cfg").string(), "--out", (dir.path / "z").string()});
        REQUIRE(r.code == 0);
        const auto saved = load_model(dir.path / "z" / "last.ckpt");
        const auto init = build_dvmn(parse_run_config(kToyConfig, "").net, 5);
        for (std::size_t i = 0; i < init.registry.all().size(); ++i)
            CHECK(saved.registry.all()[i]->value.bit_equal(init.registry.all()[i]->value));
        CHECK(fs::exists(dir.path / "z" / "config.txt"));
    }
    SUBCASE("resumed run matches the straight run") {
        const auto full = invoke({"train", "--config", (dir.path / "toy.cfg").string(), "--out", (dir.path / "full").string()});
        REQUIRE(full.code == 0);
        REQUIRE(invoke({"train", "--config", (dir.path / "two.cfg").string(), "--out", (dir.path / "split").string()}).code == 0);
        const auto resumed = invoke({"train", "--config", (dir.path / "toy.cfg").string(), "--out",
                                     (dir.path / "split").string(), "--resume"});
        REQUIRE(resumed.code == 0);
        CHECK(slurp(dir.path / "full" / "train_log.tsv") == slurp(dir.path / "split" / "train_log.tsv"));
        CHECK(slurp(dir.path / "full" / "last.ckpt") == slurp(dir.path / "split" / "last.ckpt"));
        CHECK(table(slurp(dir.path / "full" / "train_log.tsv")).size() == 5);

        const auto again = invoke({"train", "--config", (dir.path / "toy.cfg").string(), "--out", (dir.path / "again").string()});
        CHECK(slurp(dir.path / "full" / "train_log.tsv") == slurp(dir.path / "again" / "train_log.tsv"));
        const auto other_seed = invoke({"train", "--config", (dir.path / "toy.cfg").string(), "--out",
                                        (dir.path / "seed9").string(), "--seed", "9"});
        CHECK(slurp(dir.path / "full" / "train_log.tsv") != slurp(dir.path / "seed9" / "train_log.tsv"));
    }
    SUBCASE("toy run converges") {
        write_text(dir.path / "fit.cfg", R"(version = 1
seed = 1
net.C = 8
net.stages = 2
net.bottlenecks_per_stage = 2
net.sisl_count = 2
train.epochs = 200
train.batch_size = 4
train.patience = 1000
data.synthetic = true
synth.height = 16
synth.width = 32
synth.lines = 4
synth.count = 4
)");
        const auto r = invoke({"train", "--config", (dir.path / "fit.cfg").string(), "--out", (dir.path / "fit").string()});
        REQUIRE(r.code == 0);
        std::istringstream summary(r.out.substr(r.out.rfind("loss ")));
        std::string word, arrow;
        double first = 0, last = 0;
        summary >> word >> first >> arrow >> last;
        CHECK(first > 0);
        CHECK(last <= 0.1 * first);
    }
    SUBCASE("errors name the problem") {
        write_text(dir.path / "bad.cfg", "version = 1\nnet.C = 4\ntrain.epochz = 3\n");
        const auto bad = invoke({"train", "--config", (dir.path / "bad.cfg").string(), "--out", (dir.path / "x").string()});
        CHECK(bad.code != 0);
        CHECK(bad.err.find("bad.cfg:3: unknown key 'train.epochz'") != std::string::npos);

        write_text(dir.path / "nodata.cfg", "version = 1\n");
        const auto nodata = invoke({"train", "--config", (dir.path / "nodata.cfg").string(), "--out", (dir.path / "x").string()});
        CHECK(nodata.code != 0);
        CHECK(nodata.err.find("no training data") != std::string::npos);

        write_text(dir.path / "missing.cfg", "version = 1\ndata.train = nothere/manifest.tsv\n");
        const auto missing = invoke({"train", "--config", (dir.path / "missing.cfg").string(), "--out", (dir.path / "x").string()});
        CHECK(missing.code != 0);
        CHECK(missing.err.find("nothere") != std::string::npos);
        CHECK_FALSE(fs::exists(dir.path / "x"));
    }
}

TEST_CASE("mask report") {
    TempDir dir("sparseconv_test_cli_masks");
    SUBCASE("scan lines") {
        const auto r = invoke({"mask-report", "--out", (dir.path / "r").string(), "--net", "stages=2", "--net", "C=8",
                               "--net", "bottlenecks_per_stage=3", "--net", "sisl_count=2", "--height", "64",
                               "--width", "256", "--seed", "3"});
        REQUIRE(r.code == 0);
        CHECK(slurp(dir.path / "r" / "density.tsv") == r.out);
        const auto rows = table(r.out);
        REQUIRE(rows.size() == 1 + 1 + 2 * 4);
        const double input = std::stod(rows[1][3]);
        CHECK(input == doctest::Approx(0.05).epsilon(0.2));
        CHECK(rows[2][1] == "depth.stage1.block0");
        CHECK(std::stod(rows[2][3]) > std::stod(rows[2][4]));
        for (std::size_t i = 2; i < rows.size(); ++i) {
            if (rows[i][2] != "1") continue;
            CHECK(std::stod(rows[i][3]) >= std::stod(rows[i - 1][3]));
            CHECK(std::stod(rows[i][4]) >= std::stod(rows[i - 1][4]));
            CHECK(fs::exists(dir.path / "r" / "masks" / ((i - 1 < 10 ? "0" : "") + std::to_string(i - 1) + "_" + rows[i][1] + ".png")));
        }
        const auto first = read_mask_png(dir.path / "r" / "masks" / "01_depth.stage1.block0.png");
        CHECK(mask_density(first) == doctest::Approx(std::stod(rows[2][3])).epsilon(1e-5));
    }
    SUBCASE("dense input") {
        DepthMap dense(32, 32);
        for (auto& d : dense.depth) d = 3.0;
        write_depth_png(dense, dir.path / "dense.png");
        const auto r = invoke({"mask-report", "--out", (dir.path / "d").string(), "--depth",
                               (dir.path / "dense.png").string(), "--net", "stages=2", "--net", "C=4"});
        REQUIRE(r.code == 0);
        const auto rows = table(r.out);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            CHECK(rows[i][3] == "1.000000");
            CHECK(rows[i][4] == "1.000000");
        }
    }
    CHECK(invoke({"mask-report", "--out", (dir.path / "e").string(), "--net", "nonsense"}).code != 0);
}

TEST_CASE("command line surface") {
    CHECK(invoke({}).code != 0);
    CHECK(invoke({"frobnicate"}).code != 0);
    CHECK(invoke({"synth", "--out", "x", "--bogus", "1"}).code != 0);
    CHECK(invoke({"complete", "--depth", "a.png"}).code != 0);
    const auto help = invoke({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("mask-report") != std::string::npos);
}

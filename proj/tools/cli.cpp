#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "sparseconv/metrics.hpp"

namespace sparseconv::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string number(double v) { return format_double(v); }

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw std::invalid_argument("'" + value + "' is not a valid number for " + key);
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    // from_chars for double is missing from older standard libraries
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size()) {
        throw std::invalid_argument("'" + value + "' is not a valid number for " + key);
    }
    return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("'" + value + "' is not a boolean for " + key + " (use true or false)");
}

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

void apply_key(RunConfig& c, const std::string& key, const std::string& value, const fs::path& base) {
    TrainConfig& t = c.train;
    auto sub = [&](const char* prefix) -> std::optional<std::string> {
        const std::string p(prefix);
        if (key.rfind(p, 0) == 0) return key.substr(p.size());
        return std::nullopt;
    };
    if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "out") {
        c.out_dir = resolve(base, value);
    } else if (auto k = sub("net.")) {
        if (!c.net.apply(*k, value)) throw std::out_of_range("unknown key '" + key + "'");
    } else if (auto k = sub("train.")) {
        if (*k == "epochs") t.epochs = parse_number<int>(key, value);
        else if (*k == "batch_size") t.batch_size = parse_number<int>(key, value);
        else if (*k == "max_steps") t.max_steps = parse_number<std::int64_t>(key, value);
        else if (*k == "shuffle") t.shuffle = parse_flag(key, value);
        else if (*k == "augment") t.augment = parse_flag(key, value);
        else if (*k == "lr") t.optimizer.lr = parse_real(key, value);
        else if (*k == "optimizer") t.optimizer.kind = parse_optimizer_kind(value);
        else if (*k == "weight_decay") t.optimizer.weight_decay = parse_real(key, value);
        else if (*k == "lambda_smooth") t.loss.lambda_smooth = parse_real(key, value);
        else if (*k == "patience") t.schedule.patience = parse_number<int>(key, value);
        else if (*k == "factor") t.schedule.factor = parse_real(key, value);
        else if (*k == "lr_floor") t.schedule.floor = parse_real(key, value);
        else throw std::out_of_range("unknown key '" + key + "'");
    } else if (auto k = sub("augment.")) {
        if (*k == "flip_h") t.augmentation.flip_h = parse_flag(key, value);
        else if (*k == "flip_v") t.augmentation.flip_v = parse_flag(key, value);
        else if (*k == "rot_max_deg") t.augmentation.rot_max_deg = parse_real(key, value);
        else if (*k == "noise_sigma") t.augmentation.noise_sigma = parse_real(key, value);
        else throw std::out_of_range("unknown key '" + key + "'");
    } else if (key == "data.train") {
        c.train_manifest = resolve(base, value);
    } else if (key == "data.val") {
        c.val_manifest = resolve(base, value);
    } else if (key == "data.kitti_raw") {
        c.kitti_raw = resolve(base, value);
    } else if (key == "data.synthetic") {
        c.synthetic = parse_flag(key, value);
    } else if (auto k = sub("synth.")) {
        if (*k == "height") c.synth.height = parse_number<std::int64_t>(key, value);
        else if (*k == "width") c.synth.width = parse_number<std::int64_t>(key, value);
        else if (*k == "lines") c.synth.n_lines = parse_number<int>(key, value);
        else if (*k == "dropout") c.synth.dropout = parse_real(key, value);
        else if (*k == "model") c.synth.model = parse_depth_model(value);
        else if (*k == "count") c.synth.count = parse_number<int>(key, value);
        else if (*k == "seed") c.synth_seed = parse_number<std::uint64_t>(key, value);
        else throw std::out_of_range("unknown key '" + key + "'");
    } else {
        throw std::out_of_range("unknown key '" + key + "'");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir, const std::string& source) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool have_version = false;
    std::set<std::string> seen;
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) fail("expected 'key = value', got '" + body + "'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) fail("missing key before '='");
        if (!seen.insert(key).second) fail("'" + key + "' is set twice");
        if (!have_version) {
            if (key != "version") fail("the first setting must be 'version = " + std::to_string(RunConfig::kVersion) + "'");
            if (value != std::to_string(RunConfig::kVersion)) {
                fail("unsupported config version '" + value + "' (this build reads version " +
                     std::to_string(RunConfig::kVersion) + ")");
            }
            have_version = true;
            continue;
        }
        try {
            apply_key(c, key, value, base_dir);
        } catch (const std::out_of_range& e) {
            fail(e.what());
        } catch (const std::invalid_argument& e) {
            fail("invalid value for '" + key + "': " + e.what());
        }
    }
    if (!have_version) {
        throw std::runtime_error(source + ": missing 'version = " + std::to_string(RunConfig::kVersion) + "' line");
    }
    try {
        c.net.validate();
        c.train.augmentation.seed = c.seed;
        c.train.seed = c.seed;
        c.train.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(source + ": " + e.what());
    }
    return c;
}

RunConfig read_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.parent_path(), path.string());
}

std::string format_run_config(const RunConfig& c) {
    std::ostringstream o;
    const TrainConfig& t = c.train;
    o << "version = " << RunConfig::kVersion << '\n';
    o << "seed = " << c.seed << '\n';
    if (!c.out_dir.empty()) o << "out = " << c.out_dir.string() << '\n';
    for (const auto& [k, v] : c.net.to_pairs()) o << "net." << k << " = " << v << '\n';
    o << "train.epochs = " << t.epochs << '\n'
      << "train.batch_size = " << t.batch_size << '\n'
      << "train.max_steps = " << t.max_steps << '\n'
      << "train.shuffle = " << (t.shuffle ? "true" : "false") << '\n'
      << "train.augment = " << (t.augment ? "true" : "false") << '\n'
      << "train.optimizer = " << to_string(t.optimizer.kind) << '\n'
      << "train.lr = " << number(t.optimizer.lr) << '\n'
      << "train.weight_decay = " << number(t.optimizer.decay()) << '\n'
      << "train.lambda_smooth = " << number(t.loss.lambda_smooth) << '\n'
      << "train.patience = " << t.schedule.patience << '\n'
      << "train.factor = " << number(t.schedule.factor) << '\n'
      << "train.lr_floor = " << number(t.schedule.floor) << '\n'
      << "augment.flip_h = " << (t.augmentation.flip_h ? "true" : "false") << '\n'
      << "augment.flip_v = " << (t.augmentation.flip_v ? "true" : "false") << '\n'
      << "augment.rot_max_deg = " << number(t.augmentation.rot_max_deg) << '\n'
      << "augment.noise_sigma = " << number(t.augmentation.noise_sigma) << '\n';
    if (c.train_manifest) o << "data.train = " << c.train_manifest->string() << '\n';
    if (c.val_manifest) o << "data.val = " << c.val_manifest->string() << '\n';
    if (c.kitti_raw) o << "data.kitti_raw = " << c.kitti_raw->string() << '\n';
    o << "data.synthetic = " << (c.synthetic ? "true" : "false") << '\n'
      << "synth.height = " << c.synth.height << '\n'
      << "synth.width = " << c.synth.width << '\n'
      << "synth.lines = " << c.synth.n_lines << '\n'
      << "synth.dropout = " << number(c.synth.dropout) << '\n'
      << "synth.model = " << to_string(c.synth.model) << '\n'
      << "synth.count = " << c.synth.count << '\n'
      << "synth.seed = " << c.synth_seed << '\n';
    return o.str();
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n <= 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    std::int64_t m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

namespace {

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) {
        throw std::runtime_error(std::string(what) + " '" + p.string() + "' does not exist");
    }
}

Tensor reflect_pad(const Tensor& t, std::int64_t h, std::int64_t w) {
    const Shape s = t.shape();
    Tensor out(Shape{s.n, s.c, h, w}, t.dtype());
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x)
                    out.set(n, c, y, x, t.at(n, c, reflect_index(y, s.h), reflect_index(x, s.w)));
    return out;
}

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::vector<std::string> png_names(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

int cmd_complete(const CompleteArgs& a, std::ostream& out, std::ostream& err) {
    try {
        require_file(a.depth, "depth map");
        require_file(a.image, "image");
        require_file(a.checkpoint, "checkpoint");
        if (a.out.empty()) throw std::runtime_error("no output path given (--out)");
        const DvmnModel model = load_model(a.checkpoint);
        const DepthMap depth = read_depth_png(a.depth);
        Tensor image = read_image_png(a.image, model.config.dtype);
        if (image.shape().h != depth.height || image.shape().w != depth.width) {
            throw std::runtime_error("image '" + a.image.string() + "' is " + std::to_string(image.shape().h) +
                                     "x" + std::to_string(image.shape().w) + " but depth map is " +
                                     std::to_string(depth.height) + "x" + std::to_string(depth.width));
        }
        if (model.config.image_channels == 1) {
            Tensor gray(Shape{1, 1, depth.height, depth.width}, model.config.dtype);
            for (std::int64_t y = 0; y < depth.height; ++y)
                for (std::int64_t x = 0; x < depth.width; ++x)
                    gray.set(0, 0, y, x, (image.at(0, 0, y, x) + image.at(0, 1, y, x) + image.at(0, 2, y, x)) / 3.0);
            image = gray;
        } else if (model.config.image_channels != 3) {
            throw std::runtime_error("checkpoint expects " + std::to_string(model.config.image_channels) +
                                     " image channels; only 1 or 3 can be read from PNG");
        }
        out << "input density " << fixed(depth.density(), 6) << '\n';

        const std::int64_t factor = std::int64_t{1} << model.config.stages;
        const std::int64_t h = round_up(depth.height, factor), w = round_up(depth.width, factor);
        Tensor d = depth.to_tensor(model.config.dtype);
        if (h != depth.height || w != depth.width) {
            err << "warning: " << depth.height << "x" << depth.width << " is not divisible by " << factor
                << "; reflect-padding to " << h << "x" << w << " and cropping the result back\n";
            d = reflect_pad(d, h, w);
            image = reflect_pad(image, h, w);
        }
        const Tensor pred = complete(model, d, ValidityMask::from_depth(d), image);
        DepthMap full = depth_from_prediction(pred);
        DepthMap cropped(depth.height, depth.width);
        for (std::int64_t y = 0; y < depth.height; ++y)
            for (std::int64_t x = 0; x < depth.width; ++x) cropped.at(y, x) = full.at(y, x);
        if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
        write_depth_png(cropped, a.out);
        out << "wrote " << a.out.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    try {
        RunConfig c = read_run_config(a.config);
        if (a.seed) {
            c.seed = *a.seed;
            c.train.seed = c.train.augmentation.seed = *a.seed;
        }
        if (a.out) c.out_dir = *a.out;
        if (c.out_dir.empty()) throw std::runtime_error(a.config.string() + ": no output directory (set 'out' or pass --out)");
        if (!c.synthetic && !c.train_manifest) {
            throw std::runtime_error(a.config.string() + ": no training data (set data.train or data.synthetic = true)");
        }
        // check every input before any work starts
        std::vector<ManifestEntry> train_entries, val_entries;
        if (!c.synthetic) {
            train_entries = dataset_entries(*c.train_manifest, c.kitti_raw.value_or(fs::path{}));
        }
        if (c.val_manifest) val_entries = dataset_entries(*c.val_manifest, c.kitti_raw.value_or(fs::path{}));
        for (const auto* list : {&train_entries, &val_entries})
            for (const auto& e : *list) {
                require_file(e.sparse, "sparse depth");
                require_file(e.gt, "ground truth");
                require_file(e.image, "image");
            }

        std::vector<Sample> train, val;
        if (c.synthetic) {
            for (const auto& s : synth_dataset(c.synth, c.synth_seed)) train.push_back(make_sample(s, c.net.dtype));
        } else {
            for (const auto& e : train_entries) train.push_back(load_sample(e, c.net.dtype));
        }
        for (const auto& e : val_entries) val.push_back(load_sample(e, c.net.dtype));
        if (train.empty()) throw std::runtime_error("training set is empty");

        fs::create_directories(c.out_dir);
        {
            std::ofstream record(c.out_dir / "config.txt");
            record << format_run_config(c);
        }
        DvmnModel model = build_dvmn(c.net, c.seed);
        TrainConfig t = c.train;
        t.out_dir = c.out_dir;
        t.resume = a.resume;
        out << "training " << parameter_count(model) << " parameters on " << train.size() << " samples\n";
        const TrainResult r = train_loop(model, train, val, t, &out);
        if (r.aborted) {
            err << "error: training stopped, " << r.abort_reason << "; last good state kept in "
                << (c.out_dir / "last.ckpt").string() << '\n';
            return 3;
        }
        if (!r.step_losses.empty()) {
            out << "loss " << number(r.step_losses.front()) << " -> " << number(r.step_losses.back())
                << " over " << r.step_losses.size() << " steps\n";
        }
        if (!r.log.empty()) out << "best validation rmse " << fixed(r.best_val_rmse_mm, 3) << " mm\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    try {
        if (a.out.empty()) throw std::runtime_error("no output directory given (--out)");
        const fs::path manifest = write_synth_dataset(a.spec, a.seed, a.out);
        out << "wrote " << a.spec.count << " samples, manifest " << manifest.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    try {
        for (const auto* d : {&a.pred_dir, &a.gt_dir}) {
            if (!fs::is_directory(*d)) throw std::runtime_error("directory '" + d->string() + "' does not exist");
        }
        const auto preds = png_names(a.pred_dir);
        const auto gts = png_names(a.gt_dir);
        const std::set<std::string> pred_set(preds.begin(), preds.end()), gt_set(gts.begin(), gts.end());
        for (const auto& n : preds)
            if (!gt_set.contains(n)) err << "warning: no ground truth for " << (a.pred_dir / n).string() << ", skipped\n";
        for (const auto& n : gts)
            if (!pred_set.contains(n)) err << "warning: no prediction for " << (a.gt_dir / n).string() << ", skipped\n";

        out << "file\trmse_mm\tmae_mm\tirmse_per_km\timae_per_km\tpixels\n";
        auto row = [&](const std::string& name, const MetricsReport& r) {
            out << name << '\t' << fixed(r.rmse_mm, 4) << '\t' << fixed(r.mae_mm, 4) << '\t'
                << fixed(r.irmse_per_km, 4) << '\t' << fixed(r.imae_per_km, 4) << '\t' << r.evaluated_pixels << '\n';
        };
        MetricsReport sum;
        int paired = 0, failed = 0;
        for (const auto& n : gts) {
            if (!pred_set.contains(n)) continue;
            try {
                const MetricsReport r = evaluate(read_depth_png(a.pred_dir / n), read_depth_png(a.gt_dir / n));
                row(n, r);
                sum.rmse_mm += r.rmse_mm;
                sum.mae_mm += r.mae_mm;
                sum.irmse_per_km += r.irmse_per_km;
                sum.imae_per_km += r.imae_per_km;
                sum.evaluated_pixels += r.evaluated_pixels;
                ++paired;
            } catch (const std::exception& e) {
                err << "error: " << n << ": " << e.what() << '\n';
                ++failed;
            }
        }
        if (paired == 0) {
            err << "error: no prediction/ground-truth pairs could be evaluated\n";
            return 1;
        }
        sum.rmse_mm /= paired;
        sum.mae_mm /= paired;
        sum.irmse_per_km /= paired;
        sum.imae_per_km /= paired;
        row("mean", sum);
        return failed == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_mask_report(const MaskReportArgs& a, std::ostream& out, std::ostream& err) {
    try {
        if (a.out.empty()) throw std::runtime_error("no output directory given (--out)");
        ValidityMask mask;
        if (a.depth) {
            require_file(*a.depth, "depth map");
            mask = read_depth_png(*a.depth).mask();
        } else {
            mask = synth_scanlines(a.synth.height, a.synth.width, a.synth.n_lines, a.synth.dropout,
                                   a.synth.model, a.seed).sparse.mask();
        }
        NetworkConfig plain_cfg = a.net;
        plain_cfg.sisl_count = 0;
        const auto trace = layer_mask_trace(build_dvmn(a.net, 0), mask);
        const auto plain = layer_mask_trace(build_dvmn(plain_cfg, 0), mask);

        fs::create_directories(a.out / "masks");
        fs::create_directories(a.out / "plain");
        write_mask_png(mask, a.out / "input.png");
        std::ofstream table(a.out / "density.tsv");
        const std::string header = "index\tlayer\tstride\tdensity\tplain_density\n";
        table << header;
        out << header;
        auto line = [&](const std::string& text) {
            table << text;
            out << text;
        };
        line("0\tinput\t1\t" + fixed(mask_density(mask), 6) + "\t" + fixed(mask_density(mask), 6) + "\n");
        for (std::size_t i = 0; i < trace.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%02zu_", i + 1);
            const std::string file = name + trace[i].layer + ".png";
            write_mask_png(trace[i].mask, a.out / "masks" / file);
            write_mask_png(plain[i].mask, a.out / "plain" / file);
            line(std::to_string(i + 1) + "\t" + trace[i].layer + "\t" + std::to_string(trace[i].stride) + "\t" +
                 fixed(trace[i].density, 6) + "\t" + fixed(plain[i].density, 6) + "\n");
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparsity-invariant depth completion"};
    app.name("sparseconv");
    app.require_subcommand(1);

    CompleteArgs complete_args;
    auto* complete = app.add_subcommand("complete", "complete a sparse depth map with a trained model");
    complete->add_option("--depth", complete_args.depth, "sparse 16-bit depth PNG")->required();
    complete->add_option("--image", complete_args.image, "aligned RGB or gray PNG")->required();
    complete->add_option("--checkpoint", complete_args.checkpoint, "model checkpoint")->required();
    complete->add_option("--out", complete_args.out, "output 16-bit depth PNG")->required();

    TrainArgs train_args;
    std::uint64_t train_seed = 0;
    fs::path train_out;
    auto* train = app.add_subcommand("train", "train a model from a run configuration");
    train->add_option("--config", train_args.config, "key=value run configuration")->required();
    auto* train_seed_opt = train->add_option("--seed", train_seed, "overrides 'seed'");
    auto* train_out_opt = train->add_option("--out", train_out, "overrides 'out'");
    train->add_flag("--resume", train_args.resume, "continue from <out>/last.ckpt");

    SynthArgs synth_args;
    fs::path synth_config;
    auto* synth = app.add_subcommand("synth", "write a synthetic scan-line dataset and manifest");
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--config", synth_config, "run configuration providing synth.* keys");
    auto* synth_seed_opt = synth->add_option("--seed", synth_args.seed, "generator seed");
    auto* synth_count = synth->add_option("--count", synth_args.spec.count, "number of samples");
    auto* synth_height = synth->add_option("--height", synth_args.spec.height);
    auto* synth_width = synth->add_option("--width", synth_args.spec.width);
    auto* synth_lines = synth->add_option("--lines", synth_args.spec.n_lines, "scan lines per frame");
    auto* synth_dropout = synth->add_option("--dropout", synth_args.spec.dropout, "per-pixel drop probability");
    std::string synth_model;
    auto* synth_model_opt = synth->add_option("--model", synth_model, "planar_ground, constant or ramp");

    EvalArgs eval_args;
    fs::path eval_out;
    auto* eval = app.add_subcommand("eval", "score predicted depth maps against ground truth");
    eval->add_option("--pred", eval_args.pred_dir, "directory of predicted depth PNGs")->required();
    eval->add_option("--gt", eval_args.gt_dir, "directory of ground-truth depth PNGs")->required();
    eval->add_option("--out", eval_out, "also write the report to this file");

    MaskReportArgs mask_args;
    fs::path mask_config;
    std::vector<std::string> net_overrides;
    std::string mask_model;
    auto* mask = app.add_subcommand("mask-report", "per-layer validity masks of the depth encoder");
    mask->add_option("--out", mask_args.out, "output directory")->required();
    mask->add_option("--depth", mask_args.depth, "sparse depth PNG (default: synthetic scan lines)");
    mask->add_option("--config", mask_config, "run configuration providing net.* and synth.* keys");
    mask->add_option("--net", net_overrides, "network setting KEY=VALUE, repeatable");
    mask->add_option("--seed", mask_args.seed, "seed of the synthetic frame");
    mask->add_option("--height", mask_args.synth.height);
    mask->add_option("--width", mask_args.synth.width);
    mask->add_option("--lines", mask_args.synth.n_lines);
    mask->add_option("--dropout", mask_args.synth.dropout);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*complete) return cmd_complete(complete_args, out, err);
        if (*train) {
            if (*train_seed_opt) train_args.seed = train_seed;
            if (*train_out_opt) train_args.out = train_out;
            return cmd_train(train_args, out, err);
        }
        if (*synth) {
            if (!synth_config.empty()) {
                const RunConfig c = read_run_config(synth_config);
                SynthSpec flags = synth_args.spec;
                synth_args.spec = c.synth;
                if (!*synth_seed_opt) synth_args.seed = c.synth_seed;
                if (*synth_count) synth_args.spec.count = flags.count;
                if (*synth_height) synth_args.spec.height = flags.height;
                if (*synth_width) synth_args.spec.width = flags.width;
                if (*synth_lines) synth_args.spec.n_lines = flags.n_lines;
                if (*synth_dropout) synth_args.spec.dropout = flags.dropout;
            }
            if (*synth_model_opt) synth_args.spec.model = parse_depth_model(synth_model);
            return cmd_synth(synth_args, out, err);
        }
        if (*eval) {
            if (eval_out.empty()) return cmd_eval(eval_args, out, err);
            std::ostringstream report;
            const int code = cmd_eval(eval_args, report, err);
            out << report.str();
            std::ofstream(eval_out) << report.str();
            return code;
        }
        if (*mask) {
            if (!mask_config.empty()) mask_args.net = read_run_config(mask_config).net;
            for (const auto& kv : net_overrides) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos || !mask_args.net.apply(kv.substr(0, eq), kv.substr(eq + 1))) {
                    throw std::runtime_error("--net expects a network KEY=VALUE, got '" + kv + "'");
                }
            }
            mask_args.net.validate();
            return cmd_mask_report(mask_args, out, err);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace sparseconv::cli

#include "sparseconv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sparseconv {

namespace fs = std::filesystem;

void LossConfig::validate() const {
    if (!(lambda_smooth >= 0.0)) throw std::invalid_argument("loss: lambda_smooth must be >= 0");
}

Var completion_loss(Tape& tape, const Var& pred, const Tensor& gt, const ValidityMask& gt_mask,
                    const LossConfig& cfg) {
    cfg.validate();
    const Shape s = pred.shape();
    require_same_shape(pred.value(), gt, "completion_loss");
    if (s.c != 1) throw std::invalid_argument("completion_loss: prediction needs one channel");
    if (gt_mask.shape() != Shape{s.n, 1, s.h, s.w}) {
        throw std::invalid_argument("completion_loss: gt_mask shape does not match " + to_string(s));
    }
    const std::int64_t supervised = gt_mask.count();
    if (supervised == 0) {
        throw std::invalid_argument("completion_loss: gt_mask is empty, nothing to supervise");
    }
    const std::vector<double> p = pred.value().to_vector();
    const std::vector<double> g = gt.to_vector();
    const auto& m = gt_mask.values();
    const std::int64_t pairs = s.n * (s.h * (s.w - 1) + (s.h - 1) * s.w);
    const double lambda = cfg.lambda_smooth;

    double sq = 0, smooth = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i]) sq += (p[i] - g[i]) * (p[i] - g[i]);
    }
    auto each_pair = [s](auto&& f) {
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t x = 0; x < s.w; ++x) {
                    const std::int64_t i = (n * s.h + y) * s.w + x;
                    if (x + 1 < s.w) f(i, i + 1);
                    if (y + 1 < s.h) f(i, i + s.w);
                }
    };
    if (lambda != 0.0 && pairs > 0) {
        each_pair([&](std::int64_t a, std::int64_t b) { smooth += std::abs(p[b] - p[a]); });
    }
    const double mse = sq / double(supervised);
    const double tv = pairs > 0 ? smooth / double(pairs) : 0.0;
    const double loss = mse + lambda * tv;

    return tape.record(
        OpKind::completion_loss, Tensor::scalar(loss, pred.dtype()), {pred},
        [p, g, m, s, supervised, pairs, lambda, each_pair, dtype = pred.dtype()](const Tensor& go) {
            const double gs = go.item();
            std::vector<double> grad(p.size(), 0.0);
            const double k = 2.0 * gs / double(supervised);
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (m[i]) grad[i] = k * (p[i] - g[i]);
            }
            if (lambda != 0.0 && pairs > 0) {
                const double w = gs * lambda / double(pairs);
                each_pair([&](std::int64_t a, std::int64_t b) {
                    const double d = p[b] - p[a];
                    const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                    grad[b] += w * sign;
                    grad[a] -= w * sign;
                });
            }
            return std::vector<std::optional<Tensor>>{Tensor::from_values(s, grad, dtype)};
        });
}

void ScheduleConfig::validate() const {
    if (patience < 1) throw std::invalid_argument("schedule: patience must be >= 1");
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("schedule: factor must lie in (0, 1)");
    if (!(floor >= 0.0)) throw std::invalid_argument("schedule: floor must be >= 0");
}

double plateau_schedule(std::span<const double> history, double initial_lr, int patience,
                        double factor, double floor) {
    ScheduleConfig{patience, factor, floor}.validate();
    double lr = initial_lr;
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;
    for (double score : history) {
        if (score < best) {
            best = score;
            bad = 0;
            continue;
        }
        if (++bad >= patience) {
            lr = std::min(lr, std::max(lr * factor, floor));
            bad = 0;
        }
    }
    return lr;
}

void AugmentConfig::validate() const {
    if (!(rot_max_deg >= 0.0)) throw std::invalid_argument("augment: rot_max_deg must be >= 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("augment: noise_sigma must be >= 0");
}

AugmentConfig AugmentConfig::none() {
    AugmentConfig c;
    c.flip_h = c.flip_v = false;
    c.rot_max_deg = 0.0;
    c.noise_sigma = 0.0;
    return c;
}

namespace {

template <typename F>
Tensor remap(const Tensor& t, F&& source) {
    const Shape s = t.shape();
    Tensor out(s, t.dtype());
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t x = 0; x < s.w; ++x) out.set(n, c, y, x, source(t, n, c, y, x));
    return out;
}

ValidityMask positive(const Tensor& depth) {
    return ValidityMask::from_depth(depth);
}

ValidityMask remap_mask(const ValidityMask& m, bool flip_x, bool flip_y) {
    ValidityMask out(m.batch(), m.height(), m.width());
    for (std::int64_t n = 0; n < m.batch(); ++n)
        for (std::int64_t y = 0; y < m.height(); ++y)
            for (std::int64_t x = 0; x < m.width(); ++x)
                out.set(n, y, x,
                        m.at(n, flip_y ? m.height() - 1 - y : y, flip_x ? m.width() - 1 - x : x));
    return out;
}

Sample flip(const Sample& s, bool fx, bool fy) {
    auto f = [&](const Tensor& t) {
        const Shape sh = t.shape();
        return remap(t, [&](const Tensor& src, auto n, auto c, auto y, auto x) {
            return src.at(n, c, fy ? sh.h - 1 - y : y, fx ? sh.w - 1 - x : x);
        });
    };
    return Sample{f(s.depth), remap_mask(s.mask, fx, fy), f(s.image), f(s.gt),
                  remap_mask(s.gt_mask, fx, fy)};
}

}  // namespace

Sample flip_horizontal(const Sample& s) { return flip(s, true, false); }
Sample flip_vertical(const Sample& s) { return flip(s, false, true); }

Sample rotate(const Sample& s, double degrees) {
    const double th = degrees * std::numbers::pi / 180.0;
    const double co = std::cos(th), si = std::sin(th);
    const Shape sh = s.depth.shape();
    const double cx = double(sh.w - 1) / 2.0, cy = double(sh.h - 1) / 2.0;
    auto src_of = [&](std::int64_t y, std::int64_t x) {
        const double dx = double(x) - cx, dy = double(y) - cy;
        return std::pair{co * dy - si * dx + cy, co * dx + si * dy + cx};
    };
    auto nearest = [&](const Tensor& t) {
        return remap(t, [&](const Tensor& src, auto n, auto c, auto y, auto x) {
            const auto [ys, xs] = src_of(y, x);
            const auto yi = static_cast<std::int64_t>(std::lround(ys));
            const auto xi = static_cast<std::int64_t>(std::lround(xs));
            if (yi < 0 || yi >= sh.h || xi < 0 || xi >= sh.w) return 0.0;
            return src.at(n, c, yi, xi);
        });
    };
    auto bilinear = [&](const Tensor& t) {
        return remap(t, [&](const Tensor& src, auto n, auto c, auto y, auto x) {
            auto [ys, xs] = src_of(y, x);
            ys = std::clamp(ys, 0.0, double(sh.h - 1));
            xs = std::clamp(xs, 0.0, double(sh.w - 1));
            const auto y0 = static_cast<std::int64_t>(std::floor(ys));
            const auto x0 = static_cast<std::int64_t>(std::floor(xs));
            const std::int64_t y1 = std::min(y0 + 1, sh.h - 1), x1 = std::min(x0 + 1, sh.w - 1);
            const double fy = ys - double(y0), fx = xs - double(x0);
            const double top = src.at(n, c, y0, x0) * (1 - fx) + src.at(n, c, y0, x1) * fx;
            const double bot = src.at(n, c, y1, x0) * (1 - fx) + src.at(n, c, y1, x1) * fx;
            return top * (1 - fy) + bot * fy;
        });
    };
    Sample out;
    out.depth = nearest(s.depth);
    out.gt = nearest(s.gt);
    out.image = bilinear(s.image);
    out.mask = positive(out.depth);
    out.gt_mask = positive(out.gt);
    return out;
}

Sample add_image_noise(const Sample& s, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    Sample out = s;
    for (std::int64_t i = 0; i < out.image.numel(); ++i) {
        out.image.set_flat(i, std::clamp(out.image.flat(i) + noise(rng), 0.0, 1.0));
    }
    return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, std::uint64_t sample_seed) {
    cfg.validate();
    std::mt19937_64 rng(sample_seed);
    std::bernoulli_distribution coin(0.5);
    Sample out = s;
    const bool fh = cfg.flip_h && coin(rng);
    const bool fv = cfg.flip_v && coin(rng);
    if (fh || fv) out = flip(out, fh, fv);
    if (cfg.rot_max_deg > 0.0) {
        std::uniform_real_distribution<double> angle(-cfg.rot_max_deg, cfg.rot_max_deg);
        out = rotate(out, angle(rng));
    }
    if (cfg.noise_sigma > 0.0) out = add_image_noise(out, cfg.noise_sigma, rng());
    return out;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
    if (resume && out_dir.empty()) throw std::invalid_argument("train: resume needs an output directory");
    loss.validate();
    optimizer.validate();
    schedule.validate();
    augmentation.validate();
}

const char* const kTrainLogHeader = "epoch\tstep\tlr\ttrain_loss\tval_rmse_mm\tval_mae_mm";

std::string format_log_line(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d\t%lld\t%.17g\t%.17g\t%.17g\t%.17g", r.epoch,
                  static_cast<long long>(r.step), r.lr, r.train_loss, r.val_rmse_mm, r.val_mae_mm);
    return buf;
}

namespace {

EpochRecord parse_log_line(const std::string& line) {
    std::istringstream in(line);
    EpochRecord r;
    in >> r.epoch >> r.step >> r.lr >> r.train_loss >> r.val_rmse_mm >> r.val_mae_mm;
    if (!in) throw std::runtime_error("malformed training log record '" + line + "'");
    return r;
}

Sample cast_sample(const Sample& s, DType dtype) {
    if (s.depth.dtype() == dtype && s.image.dtype() == dtype && s.gt.dtype() == dtype) return s;
    return Sample{s.depth.cast(dtype), s.mask, s.image.cast(dtype), s.gt.cast(dtype), s.gt_mask};
}

void save_state(const fs::path& path, const DvmnModel& model, const OptimizerState& opt,
                int epoch, const std::vector<EpochRecord>& log) {
    Checkpoint ckpt = model_checkpoint(model);
    ckpt.set_meta("train.epoch", std::to_string(epoch));
    for (std::size_t i = 0; i < log.size(); ++i) {
        ckpt.set_meta("train.log." + std::to_string(i), format_log_line(log[i]));
    }
    opt.save(ckpt);
    // write then rename so an interrupted save never replaces a good file
    const fs::path tmp = path.string() + ".tmp";
    write_checkpoint(tmp, ckpt);
    fs::rename(tmp, path);
}

}  // namespace

MetricsReport validate_model(const DvmnModel& model, const std::vector<Sample>& samples) {
    std::vector<MetricsReport> reports;
    for (const auto& raw : samples) {
        const Sample s = cast_sample(raw, model.config.dtype);
        const Tensor pred = complete(model, s.depth, s.mask, s.image);
        reports.push_back(evaluate(depth_from_prediction(pred), DepthMap::from_tensor(s.gt)));
    }
    return combine(reports);
}

TrainResult train_loop(DvmnModel& model, const std::vector<Sample>& train,
                       const std::vector<Sample>& val, const TrainConfig& cfg,
                       std::ostream* progress) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("train: dataset is empty");
    const DType dtype = model.config.dtype;
    std::vector<Sample> train_set;
    for (const auto& s : train) train_set.push_back(cast_sample(s, dtype));
    const std::vector<Sample>& val_set = val.empty() ? train : val;

    TrainResult result;
    OptimizerState opt(cfg.optimizer);
    int first_epoch = 1;
    const bool files = !cfg.out_dir.empty();
    const fs::path last_path = cfg.out_dir / "last.ckpt";
    const fs::path best_path = cfg.out_dir / "best.ckpt";
    const fs::path log_path = cfg.out_dir / "train_log.tsv";

    if (files) fs::create_directories(cfg.out_dir);
    if (cfg.resume && fs::exists(last_path)) {
        const Checkpoint ckpt = read_checkpoint(last_path);
        DvmnModel saved = model_from_checkpoint(ckpt);
        if (saved.config.to_pairs() != model.config.to_pairs()) {
            throw std::runtime_error("resume: '" + last_path.string() +
                                     "' was trained with a different network configuration");
        }
        model = std::move(saved);
        opt = OptimizerState::load(ckpt);
        first_epoch = std::stoi(ckpt.require_meta("train.epoch")) + 1;
        for (int i = 0;; ++i) {
            auto line = ckpt.get_meta("train.log." + std::to_string(i));
            if (!line) break;
            result.log.push_back(parse_log_line(*line));
        }
    } else if (files) {
        save_state(last_path, model, opt, 0, {});
        std::ofstream(log_path, std::ios::trunc) << kTrainLogHeader << '\n';
    }

    std::vector<double> history;
    result.best_val_rmse_mm = std::numeric_limits<double>::infinity();
    for (const auto& r : result.log) {
        history.push_back(r.val_rmse_mm);
        result.best_val_rmse_mm = std::min(result.best_val_rmse_mm, r.val_rmse_mm);
    }

    const auto params = model.registry.trainable();
    const auto n = static_cast<std::int64_t>(train_set.size());
    for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
        if (cfg.max_steps > 0 && opt.step >= cfg.max_steps) break;
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[std::size_t(i)] = i;
        if (cfg.shuffle) {
            std::mt19937_64 rng(sample_seed(cfg.seed, std::uint64_t(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
        }
        const double lr = opt.lr;
        double loss_sum = 0;
        int steps = 0;
        try {
            for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
                if (cfg.max_steps > 0 && opt.step >= cfg.max_steps) break;
                std::vector<Sample> batch;
                for (std::int64_t j = start; j < std::min(n, start + cfg.batch_size); ++j) {
                    const auto idx = order[std::size_t(j)];
                    const Sample& s = train_set[std::size_t(idx)];
                    batch.push_back(cfg.augment
                                        ? augment(s, cfg.augmentation,
                                                  sample_seed(sample_seed(cfg.augmentation.seed,
                                                                          std::uint64_t(epoch)),
                                                              std::uint64_t(idx)))
                                        : s);
                }
                const Batch b = stack_samples(batch);
                Tape tape;
                const Var pred = forward(tape, model, b.depth, b.mask, b.image, Mode::train);
                const Var loss = completion_loss(tape, pred, b.gt, b.gt_mask, cfg.loss);
                const double value = loss.value().item();
                if (!std::isfinite(value)) throw std::domain_error("training loss is not finite");
                const Gradients grads = tape.backward(loss);
                optimizer_step(opt, params, grads);
                result.step_losses.push_back(value);
                loss_sum += value;
                ++steps;
            }
        } catch (const std::domain_error& e) {
            result.aborted = true;
            result.abort_reason = "epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(opt.step + 1) + ": " + e.what();
            if (progress) *progress << "aborted: " << result.abort_reason << '\n';
            break;
        }
        if (steps == 0) break;

        const MetricsReport metrics = validate_model(model, val_set);
        EpochRecord rec{epoch, opt.step, lr, loss_sum / steps, metrics.rmse_mm, metrics.mae_mm};
        result.log.push_back(rec);
        history.push_back(metrics.rmse_mm);
        opt.lr = plateau_schedule(history, cfg.optimizer.lr, cfg.schedule.patience,
                                  cfg.schedule.factor, cfg.schedule.floor);
        const bool improved = metrics.rmse_mm < result.best_val_rmse_mm;
        if (improved) result.best_val_rmse_mm = metrics.rmse_mm;
        if (files) {
            if (improved) save_model(model, best_path);
            save_state(last_path, model, opt, epoch, result.log);
            std::ofstream(log_path, std::ios::app) << format_log_line(rec) << '\n';
        }
        if (progress) {
            char buf[200];
            std::snprintf(buf, sizeof buf,
                          "epoch %d step %lld lr %.3g loss %.6g val rmse %.1f mm mae %.1f mm%s\n",
                          epoch, static_cast<long long>(rec.step), rec.lr, rec.train_loss,
                          rec.val_rmse_mm, rec.val_mae_mm, improved ? " *" : "");
            *progress << buf;
        }
    }
    return result;
}

}  // namespace sparseconv

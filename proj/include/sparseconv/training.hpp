#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sparseconv/dataset.hpp"
#include "sparseconv/metrics.hpp"
#include "sparseconv/network.hpp"
#include "sparseconv/optimizer.hpp"

namespace sparseconv {

struct LossConfig {
    double lambda_smooth = 0.1;
    void validate() const;
};

/// Mean squared error over pixels with gt_mask set, plus lambda times the mean absolute
/// first-order difference of pred over all horizontal and vertical neighbour pairs.
/// pred and gt are (N, 1, H, W); returns a scalar Var. Throws if gt_mask is empty.
Var completion_loss(Tape& tape, const Var& pred, const Tensor& gt, const ValidityMask& gt_mask,
                    const LossConfig& cfg = {});

struct ScheduleConfig {
    int patience = 3;
    double factor = 0.5;
    double floor = 1e-6;
    void validate() const;
};

/// Learning rate after replaying `history` (validation scores, lower is better) from
/// `initial_lr`: whenever `patience` consecutive scores fail to beat the best so far, the
/// rate is multiplied by `factor` (never below `floor`) and the count restarts.
double plateau_schedule(std::span<const double> history, double initial_lr, int patience,
                        double factor, double floor = 1e-6);

struct AugmentConfig {
    bool flip_h = true;   // each applied with probability 1/2
    bool flip_v = true;
    double rot_max_deg = 5.0;
    double noise_sigma = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
    /// Flips off, no rotation, no noise.
    static AugmentConfig none();
};

Sample flip_horizontal(const Sample& s);
Sample flip_vertical(const Sample& s);
/// Rotation about the image centre. Depth and ground truth use nearest-neighbour sampling,
/// the image bilinear; pixels from outside become 0 (depth) or the nearest edge (image).
/// Both masks are rebuilt from their depth planes.
Sample rotate(const Sample& s, double degrees);
/// Adds N(0, sigma) to the image, clamped to [0, 1]. Depth is left alone.
Sample add_image_noise(const Sample& s, double sigma, std::uint64_t seed);

/// Random flips, rotation and noise drawn from a generator seeded by `sample_seed`.
Sample augment(const Sample& s, const AugmentConfig& cfg, std::uint64_t sample_seed);

struct TrainConfig {
    int epochs = 1;
    int batch_size = 4;
    std::int64_t max_steps = 0;  // 0 = no limit
    bool shuffle = true;
    bool augment = false;
    std::uint64_t seed = 0;  // shuffling and augmentation
    LossConfig loss;
    OptimizerConfig optimizer;
    ScheduleConfig schedule;
    AugmentConfig augmentation;
    /// When set: train_log.tsv, last.ckpt (resumable state) and best.ckpt go here.
    std::filesystem::path out_dir;
    /// Continue from out_dir/last.ckpt if it exists.
    bool resume = false;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    std::int64_t step = 0;
    double lr = 0;
    double train_loss = 0;
    double val_rmse_mm = 0;
    double val_mae_mm = 0;
};

struct TrainResult {
    std::vector<EpochRecord> log;    // every epoch, including ones before a resume
    std::vector<double> step_losses; // steps run by this call
    bool aborted = false;
    std::string abort_reason;
    double best_val_rmse_mm = 0;
};

/// Header line of the training log.
extern const char* const kTrainLogHeader;
std::string format_log_line(const EpochRecord& r);

/// Validation metrics of `model` in evaluation mode, pooled over all samples.
MetricsReport validate_model(const DvmnModel& model, const std::vector<Sample>& samples);

/// Adam(W) training with a plateau schedule on validation RMSE. `val` may be empty, in
/// which case the training samples are evaluated. A non-finite loss or gradient stops
/// training with `aborted` set; files from the last completed epoch are left in place.
/// `progress`, when set, receives one human-readable line per epoch.
TrainResult train_loop(DvmnModel& model, const std::vector<Sample>& train,
                       const std::vector<Sample>& val, const TrainConfig& cfg,
                       std::ostream* progress = nullptr);

}  // namespace sparseconv

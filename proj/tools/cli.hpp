#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparseconv/dataset.hpp"
#include "sparseconv/network.hpp"
#include "sparseconv/training.hpp"

namespace sparseconv::cli {

namespace fs = std::filesystem;

/// Everything a training run needs, read from a flat key=value file:
///
///   # comment
///   version = 1
///   seed = 0                      model init, shuffling and augmentation
///   out = runs/toy                relative paths resolve against the file's directory
///   net.<key> = ...               any NetworkConfig key (C, stages, ...)
///   train.<key> = ...             epochs, batch_size, max_steps, shuffle, augment, lr,
///                                 optimizer, weight_decay, lambda_smooth, patience,
///                                 factor, lr_floor
///   augment.<key> = ...           flip_h, flip_v, rot_max_deg, noise_sigma
///   data.train = manifest.tsv     or data.synthetic = true with synth.<key> below
///   data.val = manifest.tsv       optional
///   synth.<key> = ...             height, width, lines, dropout, model, count, seed
struct RunConfig {
    static constexpr int kVersion = 1;

    std::uint64_t seed = 0;
    NetworkConfig net;
    TrainConfig train;
    // each a manifest file or a KITTI folder
    std::optional<fs::path> train_manifest;
    std::optional<fs::path> val_manifest;
    std::optional<fs::path> kitti_raw;  // raw recordings holding the images of KITTI split folders
    bool synthetic = false;
    SynthSpec synth;
    std::uint64_t synth_seed = 0;
    fs::path out_dir;
};

/// Throws std::runtime_error "<path>:<line>: ..." for malformed lines, a missing or
/// unsupported version, unknown keys and invalid values.
RunConfig read_run_config(const fs::path& path);
RunConfig parse_run_config(const std::string& text, const fs::path& base_dir,
                           const std::string& source = "<config>");
/// Canonical text form; parse_run_config(format_run_config(c)) reproduces c.
std::string format_run_config(const RunConfig& cfg);

struct CompleteArgs {
    fs::path depth;
    fs::path image;
    fs::path checkpoint;
    fs::path out;
};

struct TrainArgs {
    fs::path config;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out;
    bool resume = false;
};

struct SynthArgs {
    SynthSpec spec;
    std::uint64_t seed = 0;
    fs::path out;
};

struct EvalArgs {
    fs::path pred_dir;
    fs::path gt_dir;
};

struct MaskReportArgs {
    std::optional<fs::path> depth;  // otherwise a synthetic scan-line frame from `synth`
    SynthSpec synth;
    std::uint64_t seed = 0;
    NetworkConfig net;
    fs::path out;
};

// Each command returns a process exit code: 0 on success, nonzero on any error, with the
// reason written to `err`.
int cmd_complete(const CompleteArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_mask_report(const MaskReportArgs& args, std::ostream& out, std::ostream& err);

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Index into [0, n) for position i of a mirror-extended axis (edge not repeated).
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

}  // namespace sparseconv::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sparseconv/depth_map.hpp"
#include "sparseconv/synthetic.hpp"

namespace sparseconv {

/// One training or evaluation example. Tensors are (1, C, H, W); depths in metres.
struct Sample {
    Tensor depth;
    ValidityMask mask;
    Tensor image;
    Tensor gt;
    ValidityMask gt_mask;

    std::int64_t height() const { return depth.shape().h; }
    std::int64_t width() const { return depth.shape().w; }
};

/// Batched form of several samples, (N, C, H, W).
struct Batch {
    Tensor depth;
    ValidityMask mask;
    Tensor image;
    Tensor gt;
    ValidityMask gt_mask;
};

Sample make_sample(const DepthMap& sparse, const DepthMap& gt, const Tensor& image,
                   DType dtype = DType::f32);
Sample make_sample(const SynthSample& s, DType dtype = DType::f32);
Batch stack_samples(const std::vector<Sample>& samples);

/// Manifest rows reference one sample each. Paths are stored relative to the manifest's
/// directory and returned resolved.
struct ManifestEntry {
    std::filesystem::path sparse;
    std::filesystem::path gt;
    std::filesystem::path image;
};

/// Tab-separated text with the header line "sparse\tgt\timage".
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

/// Samples of a KITTI depth-completion folder, sorted by path. Two layouts are recognized:
///  - selection folders with velodyne_raw/, groundtruth_depth/ and image/ side by side;
///  - split folders (train/ or val/) of drives with proj_depth/{velodyne_raw,groundtruth}/image_0X/,
///    whose camera images come from the raw recordings under `raw_root`
///    (<raw_root>/<date>/<drive>/image_0X/data/<frame>.png).
/// Throws if the layout is not recognized, no samples are found, or a counterpart is missing.
std::vector<ManifestEntry> kitti_entries(const std::filesystem::path& root,
                                         const std::filesystem::path& raw_root = {});
/// Manifest file or KITTI folder, whichever `path` is.
std::vector<ManifestEntry> dataset_entries(const std::filesystem::path& path,
                                           const std::filesystem::path& raw_root = {});

Sample load_sample(const ManifestEntry& entry, DType dtype = DType::f32);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest, DType dtype = DType::f32);

struct SynthSpec {
    std::int64_t height = 64;
    std::int64_t width = 256;
    int n_lines = 8;
    double dropout = 0.6;
    DepthModel model = DepthModel::planar_ground;
    int count = 4;
};

/// Seed of sample `index` in a set generated from `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

std::vector<SynthSample> synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Writes sparse/, gt/ and image/ PNGs named 000000.png, ... plus manifest.tsv into `dir`.
/// Returns the manifest path.
std::filesystem::path write_synth_dataset(const SynthSpec& spec, std::uint64_t seed,
                                          const std::filesystem::path& dir);

}  // namespace sparseconv

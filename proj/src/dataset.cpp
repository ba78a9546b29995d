#include "sparseconv/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sparseconv {

namespace fs = std::filesystem;

Sample make_sample(const DepthMap& sparse, const DepthMap& gt, const Tensor& image, DType dtype) {
    if (sparse.height != gt.height || sparse.width != gt.width) {
        throw std::invalid_argument("sample: sparse depth and ground truth differ in size");
    }
    const Shape& is = image.shape();
    if (is.n != 1 || is.h != sparse.height || is.w != sparse.width) {
        throw std::invalid_argument("sample: image " + to_string(is) +
                                    " does not match depth size " + std::to_string(sparse.height) +
                                    "x" + std::to_string(sparse.width));
    }
    return Sample{sparse.to_tensor(dtype), sparse.mask(), image.cast(dtype), gt.to_tensor(dtype),
                  gt.mask()};
}

Sample make_sample(const SynthSample& s, DType dtype) {
    return make_sample(s.sparse, s.ground_truth, s.image, dtype);
}

Batch stack_samples(const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("stack_samples: no samples");
    std::vector<Tensor> depth, image, gt;
    std::vector<ValidityMask> mask, gt_mask;
    for (const auto& s : samples) {
        depth.push_back(s.depth);
        image.push_back(s.image);
        gt.push_back(s.gt);
        mask.push_back(s.mask);
        gt_mask.push_back(s.gt_mask);
    }
    return Batch{Tensor::stack_batch(depth), ValidityMask::stack_batch(mask),
                 Tensor::stack_batch(image), Tensor::stack_batch(gt),
                 ValidityMask::stack_batch(gt_mask)};
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    const fs::path base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "sparse\tgt\timage") {
                throw std::runtime_error(path.string() +
                                         ":1: expected header 'sparse<TAB>gt<TAB>image'");
            }
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 3) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected 3 tab-separated paths, got " +
                                     std::to_string(fields.size()));
        }
        auto resolve = [&](const std::string& p) {
            fs::path q(p);
            return q.is_absolute() ? q : base / q;
        };
        entries.push_back({resolve(fields[0]), resolve(fields[1]), resolve(fields[2])});
    }
    if (line_no == 0) throw std::runtime_error("manifest '" + path.string() + "' is empty");
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    auto rel = [&](const fs::path& p) {
        return p.is_absolute() ? p.lexically_relative(fs::absolute(base)).generic_string()
                               : p.lexically_relative(base).generic_string();
    };
    out << "sparse\tgt\timage\n";
    for (const auto& e : entries) out << rel(e.sparse) << '\t' << rel(e.gt) << '\t' << rel(e.image) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest '" + path.string() + "'");
}

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void require_counterpart(const fs::path& p, const fs::path& sparse) {
    if (!fs::is_regular_file(p))
        throw std::runtime_error("'" + p.string() + "' (counterpart of '" + sparse.string() + "') not found");
}

std::vector<ManifestEntry> kitti_selection(const fs::path& root) {
    std::vector<ManifestEntry> out;
    for (const auto& sparse : png_files(root / "velodyne_raw")) {
        // 2011_09_26_drive_0002_sync_velodyne_raw_0000000005_image_02.png and friends
        const std::string name = sparse.filename().string();
        const std::string token = "_velodyne_raw_";
        const auto at = name.find(token);
        if (at == std::string::npos)
            throw std::runtime_error("unexpected file name '" + sparse.string() + "' in a KITTI selection folder");
        auto renamed = [&](const std::string& with) {
            return name.substr(0, at) + "_" + with + "_" + name.substr(at + token.size());
        };
        ManifestEntry e{sparse, root / "groundtruth_depth" / renamed("groundtruth_depth"), root / "image" / renamed("image")};
        require_counterpart(e.gt, sparse);
        require_counterpart(e.image, sparse);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> kitti_split(const fs::path& root, const fs::path& raw_root) {
    std::vector<fs::path> drives;
    for (const auto& e : fs::directory_iterator(root))
        if (fs::is_directory(e.path() / "proj_depth" / "velodyne_raw")) drives.push_back(e.path());
    std::sort(drives.begin(), drives.end());
    if (drives.empty()) return {};
    if (raw_root.empty())
        throw std::runtime_error("KITTI split folder '" + root.string() + "' needs the raw recordings root for its images");
    std::vector<ManifestEntry> out;
    for (const auto& drive : drives) {
        const std::string drive_name = drive.filename().string();
        const std::string date = drive_name.substr(0, 10);
        std::vector<fs::path> cameras;
        for (const auto& e : fs::directory_iterator(drive / "proj_depth" / "velodyne_raw"))
            if (e.is_directory()) cameras.push_back(e.path().filename());
        std::sort(cameras.begin(), cameras.end());
        for (const auto& camera : cameras)
            for (const auto& sparse : png_files(drive / "proj_depth" / "velodyne_raw" / camera)) {
                ManifestEntry e{sparse, drive / "proj_depth" / "groundtruth" / camera / sparse.filename(),
                                raw_root / date / drive_name / camera / "data" / sparse.filename()};
                require_counterpart(e.gt, sparse);
                require_counterpart(e.image, sparse);
                out.push_back(std::move(e));
            }
    }
    return out;
}

}  // namespace

std::vector<ManifestEntry> kitti_entries(const fs::path& root, const fs::path& raw_root) {
    if (!fs::is_directory(root)) throw std::runtime_error("KITTI folder '" + root.string() + "' not found");
    std::vector<ManifestEntry> out;
    if (fs::is_directory(root / "velodyne_raw")) {
        out = kitti_selection(root);
    } else {
        out = kitti_split(root, raw_root);
    }
    if (out.empty())
        throw std::runtime_error("'" + root.string() +
                                 "' holds no KITTI samples (expected velodyne_raw/ or drive folders with proj_depth/)");
    return out;
}

std::vector<ManifestEntry> dataset_entries(const fs::path& path, const fs::path& raw_root) {
    return fs::is_directory(path) ? kitti_entries(path, raw_root) : read_manifest(path);
}

Sample load_sample(const ManifestEntry& entry, DType dtype) {
    return make_sample(read_depth_png(entry.sparse), read_depth_png(entry.gt),
                       read_image_png(entry.image, dtype), dtype);
}

std::vector<Sample> load_dataset(const fs::path& manifest, DType dtype) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(manifest)) out.push_back(load_sample(e, dtype));
    if (out.empty()) throw std::runtime_error("manifest '" + manifest.string() + "' lists no samples");
    return out;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<SynthSample> synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.count < 1) throw std::invalid_argument("synth: count must be at least 1");
    std::vector<SynthSample> out;
    for (int i = 0; i < spec.count; ++i) {
        out.push_back(synth_scanlines(spec.height, spec.width, spec.n_lines, spec.dropout, spec.model,
                                      sample_seed(seed, std::uint64_t(i))));
    }
    return out;
}

fs::path write_synth_dataset(const SynthSpec& spec, std::uint64_t seed, const fs::path& dir) {
    const auto samples = synth_dataset(spec, seed);
    for (const char* sub : {"sparse", "gt", "image"}) fs::create_directories(dir / sub);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        ManifestEntry e{dir / "sparse" / name, dir / "gt" / name, dir / "image" / name};
        write_depth_png(samples[i].sparse, e.sparse);
        write_depth_png(samples[i].ground_truth, e.gt);
        write_image_png(samples[i].image, e.image);
        entries.push_back(e);
    }
    const fs::path manifest = dir / "manifest.tsv";
    write_manifest(entries, manifest);
    return manifest;
}

}  // namespace sparseconv

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sparseconv/tensor.hpp"

namespace sparseconv {

/// Binary container: metadata strings plus named tensors.
///
/// Layout (all integers little-endian):
///   8 bytes  magic "SPCNVCKP"
///   u32      format version
///   u32      metadata count, then per entry: u32 length + key bytes, u32 length + value bytes
///   u32      tensor count, then per tensor: u32 length + name bytes, u8 dtype (0 = f32,
///            1 = f64), 4 x i64 shape (n, c, h, w), raw values in row-major order
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void set_meta(const std::string& key, std::string value);
    std::optional<std::string> get_meta(const std::string& key) const;
    std::string require_meta(const std::string& key) const;
    const Tensor* find(const std::string& name) const;
    const Tensor& require(const std::string& name) const;
};

/// Shortest decimal text that parses back to exactly `v`; used for metadata values.
std::string format_double(double v);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace sparseconv

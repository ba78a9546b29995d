#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparseconv/tensor.hpp"

namespace sparseconv {

/// Binary (N, 1, H, W) validity map; 1 marks an observed pixel.
class ValidityMask {
   public:
    ValidityMask() = default;
    ValidityMask(std::int64_t n, std::int64_t h, std::int64_t w, bool valid = false);

    /// Accepts a one-channel tensor of exact zeros and ones; anything else throws.
    static ValidityMask from_tensor(const Tensor& t);
    /// 1 wherever the (N, 1, H, W) depth is strictly positive.
    static ValidityMask from_depth(const Tensor& depth);
    static ValidityMask stack_batch(std::span<const ValidityMask> parts);

    std::int64_t batch() const { return n_; }
    std::int64_t height() const { return h_; }
    std::int64_t width() const { return w_; }
    std::int64_t numel() const { return n_ * h_ * w_; }
    Shape shape() const { return {n_, 1, h_, w_}; }

    bool at(std::int64_t n, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>((n * h_ + y) * w_ + x)] != 0;
    }
    void set(std::int64_t n, std::int64_t y, std::int64_t x, bool valid) {
        data_[static_cast<std::size_t>((n * h_ + y) * w_ + x)] = valid ? 1 : 0;
    }
    std::span<const std::uint8_t> values() const { return data_; }

    Tensor to_tensor(DType dtype = DType::f64) const;
    ValidityMask slice_batch(std::int64_t first, std::int64_t count) const;

    std::int64_t count() const;
    bool operator==(const ValidityMask&) const = default;

   private:
    std::int64_t n_ = 0;
    std::int64_t h_ = 0;
    std::int64_t w_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Fraction of valid pixels; 0 for an empty mask.
double mask_density(const ValidityMask& o);

/// Pointwise a >= b.
bool mask_dominates(const ValidityMask& a, const ValidityMask& b);

/// Window maximum with half-kernel k, dilation d, stride and zero padding.
ValidityMask propagate_mask(const ValidityMask& o, int k, int dilation, int stride, int padding);

/// Throws std::invalid_argument unless o matches the batch and spatial extent of x.
void require_mask_matches(const ValidityMask& o, const Tensor& x, const char* what);

}  // namespace sparseconv

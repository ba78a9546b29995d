#include "sparseconv/mask.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "sparseconv/conv.hpp"

namespace sparseconv {

ValidityMask::ValidityMask(std::int64_t n, std::int64_t h, std::int64_t w, bool valid)
    : n_(n), h_(h), w_(w) {
    if (n < 0 || h < 0 || w < 0) throw std::invalid_argument("ValidityMask: negative extent");
    data_.assign(static_cast<std::size_t>(n * h * w), valid ? 1 : 0);
}

ValidityMask ValidityMask::from_tensor(const Tensor& t) {
    if (t.shape().c != 1) {
        throw std::invalid_argument("validity mask needs one channel, got shape " +
                                    to_string(t.shape()));
    }
    ValidityMask m(t.shape().n, t.shape().h, t.shape().w);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v = t.flat(i);
        if (v != 0.0 && v != 1.0) {
            throw std::invalid_argument("validity mask holds non-binary value " +
                                        std::to_string(v));
        }
        m.data_[static_cast<std::size_t>(i)] = v == 1.0 ? 1 : 0;
    }
    return m;
}

ValidityMask ValidityMask::from_depth(const Tensor& depth) {
    if (depth.shape().c != 1) {
        throw std::invalid_argument("depth map needs one channel, got shape " +
                                    to_string(depth.shape()));
    }
    ValidityMask m(depth.shape().n, depth.shape().h, depth.shape().w);
    for (std::int64_t i = 0; i < depth.numel(); ++i) {
        m.data_[static_cast<std::size_t>(i)] = depth.flat(i) > 0.0 ? 1 : 0;
    }
    return m;
}

ValidityMask ValidityMask::stack_batch(std::span<const ValidityMask> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_batch: no masks");
    ValidityMask out(0, parts[0].h_, parts[0].w_);
    for (const auto& p : parts) {
        if (p.h_ != out.h_ || p.w_ != out.w_) {
            throw std::invalid_argument("stack_batch: masks differ in spatial extent");
        }
        out.n_ += p.n_;
        out.data_.insert(out.data_.end(), p.data_.begin(), p.data_.end());
    }
    return out;
}

Tensor ValidityMask::to_tensor(DType dtype) const {
    Tensor t(shape(), dtype);
    for (std::int64_t i = 0; i < numel(); ++i) {
        if (data_[static_cast<std::size_t>(i)]) t.set_flat(i, 1.0);
    }
    return t;
}

ValidityMask ValidityMask::slice_batch(std::int64_t first, std::int64_t count) const {
    if (first < 0 || count < 0 || first + count > n_) {
        throw std::out_of_range("ValidityMask::slice_batch out of range");
    }
    ValidityMask out(count, h_, w_);
    auto plane = static_cast<std::ptrdiff_t>(h_ * w_);
    std::copy(data_.begin() + first * plane, data_.begin() + (first + count) * plane,
              out.data_.begin());
    return out;
}

std::int64_t ValidityMask::count() const {
    return std::count(data_.begin(), data_.end(), std::uint8_t{1});
}

double mask_density(const ValidityMask& o) {
    if (o.numel() == 0) return 0.0;
    return static_cast<double>(o.count()) / static_cast<double>(o.numel());
}

bool mask_dominates(const ValidityMask& a, const ValidityMask& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mask_dominates: shape mismatch");
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] < bv[i]) return false;
    }
    return true;
}

ValidityMask propagate_mask(const ValidityMask& o, int k, int dilation, int stride, int padding) {
    return ValidityMask::from_tensor(
        max_pool_window(o.to_tensor(DType::f32), k, dilation, stride, padding));
}

void require_mask_matches(const ValidityMask& o, const Tensor& x, const char* what) {
    const Shape& s = x.shape();
    if (o.batch() != s.n || o.height() != s.h || o.width() != s.w) {
        throw std::invalid_argument(std::string(what) + ": mask shape " + to_string(o.shape()) +
                                    " does not match features " + to_string(s));
    }
}

}  // namespace sparseconv

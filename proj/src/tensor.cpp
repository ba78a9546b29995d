#include "sparseconv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace sparseconv {

std::string to_string(DType dtype) {
    return dtype == DType::f32 ? "f32" : "f64";
}

DType parse_dtype(const std::string& name) {
    if (name == "f32" || name == "float32") return DType::f32;
    if (name == "f64" || name == "float64") return DType::f64;
    throw std::invalid_argument("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::string to_string(const Shape& shape) {
    return "(" + std::to_string(shape.n) + ", " + std::to_string(shape.c) + ", " +
           std::to_string(shape.h) + ", " + std::to_string(shape.w) + ")";
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(shape), dtype_(dtype) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw std::invalid_argument("negative extent in shape " + to_string(shape));
    }
    const auto count = static_cast<std::size_t>(shape.numel());
    if (dtype == DType::f32) {
        data_ = std::vector<float>(count, 0.0F);
    } else {
        data_ = std::vector<double>(count, 0.0);
    }
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto v = t.values<T>();
        std::fill(v.begin(), v.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
    if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not match shape " + to_string(shape));
    }
    Tensor t(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto v = t.values<T>();
        std::transform(values.begin(), values.end(), v.begin(),
                       [](double x) { return static_cast<T>(x); });
    });
    return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
    return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) {
    return full(Shape{1, 1, 1, 1}, value, dtype);
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return flat(index(n, c, h, w));
}

void Tensor::set(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, double value) {
    set_flat(index(n, c, h, w), value);
}

double Tensor::flat(std::int64_t i) const {
    return dispatch(dtype_, [&]<typename T>() {
        return static_cast<double>(values<T>()[static_cast<std::size_t>(i)]);
    });
}

void Tensor::set_flat(std::int64_t i, double value) {
    dispatch(dtype_, [&]<typename T>() {
        values<T>()[static_cast<std::size_t>(i)] = static_cast<T>(value);
    });
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item() on tensor of shape " + to_string(shape_));
    }
    return flat(0);
}

Tensor Tensor::cast(DType dtype) const {
    if (dtype == dtype_) return *this;
    Tensor out(shape_, dtype);
    dispatch(dtype_, [&]<typename S>() {
        dispatch(dtype, [&]<typename D>() {
            auto src = values<S>();
            auto dst = out.values<D>();
            std::transform(src.begin(), src.end(), dst.begin(),
                           [](S x) { return static_cast<D>(x); });
        });
    });
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != numel()) {
        throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " +
                                    to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = shape;
    return out;
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<std::size_t>(numel()));
    dispatch(dtype_, [&]<typename T>() {
        auto v = values<T>();
        std::transform(v.begin(), v.end(), out.begin(), [](T x) { return static_cast<double>(x); });
    });
    return out;
}

Tensor Tensor::slice_batch(std::int64_t first, std::int64_t count) const {
    if (first < 0 || count < 0 || first + count > shape_.n) {
        throw std::out_of_range("batch slice [" + std::to_string(first) + ", " +
                                std::to_string(first + count) + ") outside " + to_string(shape_));
    }
    Shape s = shape_;
    s.n = count;
    Tensor out(s, dtype_);
    const std::int64_t per = shape_.c * shape_.h * shape_.w;
    dispatch(dtype_, [&]<typename T>() {
        auto src = values<T>().subspan(static_cast<std::size_t>(first * per),
                                       static_cast<std::size_t>(count * per));
        std::copy(src.begin(), src.end(), out.values<T>().begin());
    });
    return out;
}

Tensor Tensor::stack_batch(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_batch of zero tensors");
    Shape s = parts.front().shape();
    const DType dtype = parts.front().dtype();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        const Shape& q = p.shape();
        if (q.c != s.c || q.h != s.h || q.w != s.w || p.dtype() != dtype) {
            throw std::invalid_argument("stack_batch: incompatible part " + to_string(q) +
                                        " vs " + to_string(s));
        }
        total += q.n;
    }
    s.n = total;
    Tensor out(s, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto dst = out.values<T>().begin();
        for (const auto& p : parts) {
            auto src = p.values<T>();
            dst = std::copy(src.begin(), src.end(), dst);
        }
    });
    return out;
}

bool Tensor::all_finite() const {
    return dispatch(dtype_, [&]<typename T>() {
        auto v = values<T>();
        return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
    });
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
    return dispatch(dtype_, [&]<typename T>() {
        auto a = values<T>();
        auto b = other.values<T>();
        return a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
    });
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(what + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
    }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const std::string& what) {
    if (a.dtype() != b.dtype()) {
        throw std::invalid_argument(what + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                                    to_string(b.dtype()));
    }
}

}  // namespace sparseconv

#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace sparseconv {

enum class DType : std::uint8_t { f32, f64 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

/// Extents of a (batch, channel, height, width) tensor.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    std::int64_t plane() const { return h * w; }
    auto operator<=>(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Calls `f.template operator()<T>()` with T = float or double.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
    switch (dtype) {
        case DType::f32:
            return f.template operator()<float>();
        case DType::f64:
            return f.template operator()<double>();
    }
    throw std::logic_error("unknown dtype");
}

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Dense 4-axis array stored row-major (n, c, h, w) in single or double precision.
class Tensor {
   public:
    Tensor() : Tensor(Shape{}, DType::f64) {}
    explicit Tensor(Shape shape, DType dtype = DType::f64);

    static Tensor full(Shape shape, double value, DType dtype = DType::f64);
    static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::f64);
    static Tensor from_values(Shape shape, std::initializer_list<double> values,
                              DType dtype = DType::f64);
    static Tensor scalar(double value, DType dtype = DType::f64);

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return numel() == 0; }

    template <typename T>
    std::span<T> values() {
        check_type<T>();
        return std::span<T>(std::get<std::vector<T>>(data_));
    }
    template <typename T>
    std::span<const T> values() const {
        check_type<T>();
        return std::span<const T>(std::get<std::vector<T>>(data_));
    }

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
    void set(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, double value);
    double flat(std::int64_t i) const;
    void set_flat(std::int64_t i, double value);

    /// Value of a one-element tensor.
    double item() const;

    Tensor cast(DType dtype) const;
    Tensor reshaped(Shape shape) const;
    std::vector<double> to_vector() const;

    /// Batch slice [first, first + count).
    Tensor slice_batch(std::int64_t first, std::int64_t count) const;
    static Tensor stack_batch(std::span<const Tensor> parts);

    bool all_finite() const;
    /// Exact equality of shape, dtype and every stored bit.
    bool bit_equal(const Tensor& other) const;

   private:
    template <typename T>
    void check_type() const {
        if (dtype_of<T>() != dtype_) {
            throw std::invalid_argument("tensor holds " + to_string(dtype_) + ", requested " +
                                        to_string(dtype_of<T>()));
        }
    }

    Shape shape_;
    DType dtype_;
    std::variant<std::vector<float>, std::vector<double>> data_;
};

/// Throws std::invalid_argument with `what` and both shapes if they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);
void require_same_dtype(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace sparseconv

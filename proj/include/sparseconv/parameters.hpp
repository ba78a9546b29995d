#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparseconv/autograd.hpp"

namespace sparseconv {

/// Ordered, uniquely named collection of parameters and buffers. Enumeration order is the
/// insertion order.
class ParameterRegistry {
   public:
    ParameterPtr add(std::string name, Tensor value, bool trainable = true);
    ParameterPtr find(const std::string& name) const;
    const std::vector<ParameterPtr>& all() const { return items_; }
    std::vector<ParameterPtr> trainable() const;
    std::int64_t trainable_count() const;

   private:
    std::vector<ParameterPtr> items_;
    std::unordered_map<std::string, ParameterPtr> by_name_;
};

/// Creates initialized parameters in a registry from one deterministic stream.
class ParameterFactory {
   public:
    ParameterFactory(ParameterRegistry& registry, std::uint64_t seed, DType dtype)
        : registry_(registry), rng_(seed), dtype_(dtype) {}

    /// Zero-mean normal with standard deviation sqrt(gain / fan_in).
    ParameterPtr normal(const std::string& name, Shape shape, double fan_in, double gain = 2.0);
    ParameterPtr constant(const std::string& name, Shape shape, double value,
                          bool trainable = true);

    DType dtype() const { return dtype_; }
    ParameterRegistry& registry() { return registry_; }

   private:
    ParameterRegistry& registry_;
    std::mt19937_64 rng_;
    DType dtype_;
};

}  // namespace sparseconv

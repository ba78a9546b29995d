#include "sparseconv/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace sparseconv {

ParameterPtr ParameterRegistry::add(std::string name, Tensor value, bool trainable) {
    if (by_name_.contains(name)) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    auto p = std::make_shared<Parameter>(Parameter{name, std::move(value), trainable});
    items_.push_back(p);
    by_name_.emplace(std::move(name), p);
    return p;
}

ParameterPtr ParameterRegistry::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

std::vector<ParameterPtr> ParameterRegistry::trainable() const {
    std::vector<ParameterPtr> out;
    for (const auto& p : items_) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

std::int64_t ParameterRegistry::trainable_count() const {
    std::int64_t total = 0;
    for (const auto& p : items_) {
        if (p->trainable) total += p->value.numel();
    }
    return total;
}

ParameterPtr ParameterFactory::normal(const std::string& name, Shape shape, double fan_in,
                                      double gain) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    Tensor t(shape, dtype_);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, dist(rng_));
    return registry_.add(name, std::move(t));
}

ParameterPtr ParameterFactory::constant(const std::string& name, Shape shape, double value,
                                        bool trainable) {
    return registry_.add(name, Tensor::full(shape, value, dtype_), trainable);
}

}  // namespace sparseconv

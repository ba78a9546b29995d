#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparseconv/autograd.hpp"
#include "sparseconv/checkpoint.hpp"

namespace sparseconv {

enum class OptimizerKind { adam, adamw };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Unset means the kind's default: 0 for adam, 0.01 for adamw.
    std::optional<double> weight_decay{};

    double decay() const;
    void validate() const;
};

/// Adam moments per parameter name, kept in 64-bit regardless of parameter precision.
struct OptimizerState {
    OptimizerConfig config;
    double lr = 1e-3;
    std::int64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;

    explicit OptimizerState(OptimizerConfig cfg = {});

    /// Stores moments as "optim.m.<name>" / "optim.v.<name>" tensors plus step, lr and config.
    void save(Checkpoint& ckpt) const;
    static OptimizerState load(const Checkpoint& ckpt);
};

/// One bias-corrected Adam update of `params` from `grads` (same order and shapes). adam
/// folds weight decay into the gradient; adamw first scales parameters by 1 - lr*wd.
/// Every gradient is checked before anything is modified; a non-finite entry throws
/// std::domain_error naming the parameter.
void optimizer_step(OptimizerState& state, std::span<const ParameterPtr> params,
                    std::span<const Tensor> grads);

void optimizer_step(OptimizerState& state, std::span<const ParameterPtr> params,
                    const Gradients& grads);

}  // namespace sparseconv

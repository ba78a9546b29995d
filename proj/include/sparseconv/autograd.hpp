#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparseconv/tensor.hpp"

namespace sparseconv {

/// Named, mutable model state. Trainable parameters receive gradients; buffers such as
/// batch-norm running statistics do not.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

using ParameterPtr = std::shared_ptr<Parameter>;

enum class OpKind : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    scale,
    relu,
    mask_select,
    scale_by_map,
    switch_select,
    add_bias,
    conv2d,
    transposed_conv2d,
    concat_channels,
    block_mean,
    batch_norm,
    sum,
    weighted_sum,
    completion_loss,
};

const char* op_name(OpKind kind);

namespace detail {
struct Node;
}

class Tape;

/// Handle to a value produced on (or outside of) a Tape.
class Var {
   public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    DType dtype() const { return value().dtype(); }
    bool requires_grad() const;
    OpKind op() const;
    bool defined() const { return node_ != nullptr; }

   private:
    friend class Tape;
    friend class Gradients;
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// Gradient rule: receives the gradient of the op's output and returns one gradient per
/// input (std::nullopt for inputs that do not need one).
using BackwardFn = std::function<std::vector<std::optional<Tensor>>(const Tensor& grad_out)>;

/// Gradients of a scalar with respect to every differentiable leaf reached from it.
class Gradients {
   public:
    /// Gradient for `v`; zeros of the right shape if `v` did not influence the loss.
    Tensor of(const Var& v) const;
    Tensor of(const Parameter& p) const;
    bool contains(const Var& v) const;

   private:
    friend class Tape;
    std::unordered_map<const detail::Node*, Tensor> by_node_;
    std::unordered_map<const Parameter*, const detail::Node*> params_;
};

/// Ordered record of executed differentiable ops. A tape built with `record = false`
/// only evaluates values; nothing is retained for differentiation.
class Tape {
   public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    /// Value that never receives a gradient.
    Var constant(Tensor value);
    /// Differentiable input leaf.
    Var input(Tensor value);
    /// Leaf for a parameter, bound once per tape so shared parameters accumulate gradients
    /// from every use. Buffers and non-recording tapes yield constants.
    Var param(const ParameterPtr& p);

    /// Appends an op. The result carries a gradient only if some input does.
    Var record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    /// Reverse sweep from a scalar `loss`. `seed` defaults to one; it must be one element.
    /// `visit`, when set, is called for each op in the order it is differentiated.
    Gradients backward(const Var& loss, std::optional<Tensor> seed = std::nullopt,
                       const std::function<void(OpKind)>& visit = {}) const;

    std::size_t size() const { return nodes_.size(); }
    std::vector<OpKind> ops() const;

   private:
    bool record_;
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    std::unordered_map<const Parameter*, Var> params_;
};

}  // namespace sparseconv

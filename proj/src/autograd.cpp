#include "sparseconv/autograd.hpp"

#include <stdexcept>

namespace sparseconv {

namespace detail {

struct Node {
    Tensor value;
    OpKind op = OpKind::leaf;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
};

}  // namespace detail

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
    require_same_shape(dst, src, "gradient accumulation");
    dispatch(dst.dtype(), [&]<typename T>() {
        auto d = dst.values<T>();
        auto s = src.values<T>();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    });
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::relu: return "relu";
        case OpKind::mask_select: return "mask_select";
        case OpKind::scale_by_map: return "scale_by_map";
        case OpKind::switch_select: return "switch_select";
        case OpKind::add_bias: return "add_bias";
        case OpKind::conv2d: return "conv2d";
        case OpKind::transposed_conv2d: return "transposed_conv2d";
        case OpKind::concat_channels: return "concat_channels";
        case OpKind::block_mean: return "block_mean";
        case OpKind::batch_norm: return "batch_norm";
        case OpKind::sum: return "sum";
        case OpKind::weighted_sum: return "weighted_sum";
        case OpKind::completion_loss: return "completion_loss";
    }
    return "unknown";
}

const Tensor& Var::value() const {
    if (!node_) throw std::logic_error("use of an undefined Var");
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

OpKind Var::op() const { return node_ ? node_->op : OpKind::leaf; }

Tensor Gradients::of(const Var& v) const {
    auto it = by_node_.find(v.node_.get());
    if (it == by_node_.end()) return Tensor(v.shape(), v.dtype());
    return it->second;
}

Tensor Gradients::of(const Parameter& p) const {
    auto pit = params_.find(&p);
    if (pit != params_.end()) {
        auto it = by_node_.find(pit->second);
        if (it != by_node_.end()) return it->second;
    }
    return Tensor(p.value.shape(), p.value.dtype());
}

bool Gradients::contains(const Var& v) const { return by_node_.contains(v.node_.get()); }

Var Tape::constant(Tensor value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Tape::input(Tensor value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = record_;
    return Var(std::move(node));
}

Var Tape::param(const ParameterPtr& p) {
    if (!p) throw std::invalid_argument("Tape::param: null parameter");
    if (auto it = params_.find(p.get()); it != params_.end()) return it->second;
    Var v = p->trainable ? input(p->value) : constant(p->value);
    params_.emplace(p.get(), v);
    return v;
}

Var Tape::record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (kind == OpKind::leaf) throw std::logic_error("Tape::record: leaf is not an op");
    if (!value.all_finite()) {
        throw std::domain_error(std::string("non-finite value produced by ") + op_name(kind));
    }
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->op = kind;
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (record_ && needs_grad) {
        if (!backward) {
            throw std::logic_error(std::string("op ") + op_name(kind) + " has no gradient rule");
        }
        node->requires_grad = true;
        node->backward = std::move(backward);
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(std::move(in.node_));
        nodes_.push_back(node);
    }
    return Var(std::move(node));
}

std::vector<OpKind> Tape::ops() const {
    std::vector<OpKind> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n->op);
    return out;
}

Gradients Tape::backward(const Var& loss, std::optional<Tensor> seed,
                         const std::function<void(OpKind)>& visit) const {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
    if (loss.value().numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    to_string(loss.shape()));
    }
    Tensor start = seed ? *seed : Tensor::full(loss.shape(), 1.0, loss.dtype());
    if (start.numel() != 1) {
        throw std::invalid_argument("backward: seed must be scalar, got shape " +
                                    to_string(start.shape()));
    }
    start = start.cast(loss.dtype()).reshaped(loss.shape());

    Gradients grads;
    for (const auto& [param, var] : params_) grads.params_.emplace(param, var.node_.get());
    if (!loss.requires_grad()) return grads;
    grads.by_node_.emplace(loss.node_.get(), std::move(start));

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const detail::Node* node = it->get();
        auto g = grads.by_node_.find(node);
        if (g == grads.by_node_.end()) continue;
        if (visit) visit(node->op);
        auto input_grads = node->backward(g->second);
        if (input_grads.size() != node->inputs.size()) {
            throw std::logic_error(std::string("gradient rule of ") + op_name(node->op) +
                                   " returned the wrong number of gradients");
        }
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const auto& in = node->inputs[i];
            if (!in->requires_grad || !input_grads[i]) continue;
            auto [slot, inserted] = grads.by_node_.try_emplace(in.get(), *input_grads[i]);
            if (!inserted) accumulate(slot->second, *input_grads[i]);
        }
    }
    return grads;
}

}  // namespace sparseconv

#include "sparseconv/optimizer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sparseconv {

std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "adamw";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "adamw") return OptimizerKind::adamw;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or adamw)");
}

double OptimizerConfig::decay() const {
    if (weight_decay) return *weight_decay;
    return kind == OptimizerKind::adamw ? 0.01 : 0.0;
}

void OptimizerConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be positive");
    if (!(decay() >= 0.0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
}

OptimizerState::OptimizerState(OptimizerConfig cfg) : config(cfg), lr(cfg.lr) { config.validate(); }

namespace {

std::string number(double v) { return format_double(v); }

}  // namespace

void OptimizerState::save(Checkpoint& ckpt) const {
    ckpt.set_meta("optim.kind", to_string(config.kind));
    ckpt.set_meta("optim.base_lr", number(config.lr));
    ckpt.set_meta("optim.beta1", number(config.beta1));
    ckpt.set_meta("optim.beta2", number(config.beta2));
    ckpt.set_meta("optim.eps", number(config.eps));
    ckpt.set_meta("optim.weight_decay", number(config.decay()));
    ckpt.set_meta("optim.lr", number(lr));
    ckpt.set_meta("optim.step", std::to_string(step));
    for (const auto& [name, values] : m) {
        const auto n = static_cast<std::int64_t>(values.size());
        ckpt.tensors.emplace_back("optim.m." + name, Tensor::from_values(Shape{1, 1, 1, n}, values));
        ckpt.tensors.emplace_back("optim.v." + name,
                                  Tensor::from_values(Shape{1, 1, 1, n}, v.at(name)));
    }
}

OptimizerState OptimizerState::load(const Checkpoint& ckpt) {
    OptimizerConfig cfg;
    cfg.kind = parse_optimizer_kind(ckpt.require_meta("optim.kind"));
    cfg.lr = std::stod(ckpt.require_meta("optim.base_lr"));
    cfg.beta1 = std::stod(ckpt.require_meta("optim.beta1"));
    cfg.beta2 = std::stod(ckpt.require_meta("optim.beta2"));
    cfg.eps = std::stod(ckpt.require_meta("optim.eps"));
    cfg.weight_decay = std::stod(ckpt.require_meta("optim.weight_decay"));
    OptimizerState s(cfg);
    s.lr = std::stod(ckpt.require_meta("optim.lr"));
    s.step = std::stoll(ckpt.require_meta("optim.step"));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.starts_with("optim.m.")) {
            const std::string key = name.substr(8);
            s.m[key] = t.to_vector();
            s.v[key] = ckpt.require("optim.v." + key).to_vector();
        }
    }
    return s;
}

void optimizer_step(OptimizerState& state, std::span<const ParameterPtr> params,
                    std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("optimizer_step: " + std::to_string(params.size()) +
                                    " parameters but " + std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i]->value.shape()) {
            throw std::invalid_argument("optimizer_step: gradient of '" + params[i]->name +
                                        "' has shape " + to_string(grads[i].shape()) +
                                        ", parameter has " + to_string(params[i]->value.shape()));
        }
        if (!grads[i].all_finite()) {
            throw std::domain_error("optimizer_step: non-finite gradient for parameter '" +
                                    params[i]->name + "'");
        }
    }
    const OptimizerConfig& c = state.config;
    const double wd = c.decay();
    const double lr = state.lr;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        const auto n = static_cast<std::size_t>(p.value.numel());
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
        if (m.size() != n) {
            throw std::invalid_argument("optimizer_step: stored moments of '" + p.name +
                                        "' do not match its size");
        }
        dispatch(p.value.dtype(), [&]<typename T>() {
            auto pv = p.value.values<T>();
            const std::vector<double> g = grads[i].to_vector();
            for (std::size_t j = 0; j < n; ++j) {
                double x = pv[j];
                double gj = g[j];
                if (c.kind == OptimizerKind::adamw) {
                    x *= 1.0 - lr * wd;
                } else if (wd != 0.0) {
                    gj += wd * x;
                }
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                x -= lr * mhat / (std::sqrt(vhat) + c.eps);
                pv[j] = static_cast<T>(x);
            }
        });
    }
}

void optimizer_step(OptimizerState& state, std::span<const ParameterPtr> params,
                    const Gradients& grads) {
    std::vector<Tensor> g;
    g.reserve(params.size());
    for (const auto& p : params) g.push_back(grads.of(*p));
    optimizer_step(state, params, g);
}

}  // namespace sparseconv

#include "sparseconv/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sparseconv {

double grad_check(const ScalarFunction& f, const std::vector<ParameterPtr>& params,
                  double fd_step) {
    if (fd_step <= 0) throw std::invalid_argument("grad_check: fd_step must be positive");
    for (const auto& p : params) {
        if (p->value.dtype() != DType::f64) {
            throw std::invalid_argument("grad_check: parameter '" + p->name + "' is not 64-bit");
        }
    }

    Tape tape;
    Var loss = f(tape);
    Gradients grads = tape.backward(loss);

    auto evaluate = [&]() {
        Tape probe(false);
        const double v = f(probe).value().item();
        if (std::isnan(v)) throw std::domain_error("grad_check: NaN in function value");
        return v;
    };

    double worst = 0;
    for (const auto& p : params) {
        const Tensor analytic = grads.of(*p);
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double original = p->value.flat(i);
            p->value.set_flat(i, original + fd_step);
            const double plus = evaluate();
            p->value.set_flat(i, original - fd_step);
            const double minus = evaluate();
            p->value.set_flat(i, original);
            const double numeric = (plus - minus) / (2 * fd_step);
            const double a = analytic.flat(i);
            if (std::isnan(a) || std::isnan(numeric)) {
                throw std::domain_error("grad_check: NaN gradient for '" + p->name + "'");
            }
            const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& inputs, double fd_step) {
    std::vector<ParameterPtr> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        params.push_back(std::make_shared<Parameter>(
            Parameter{"input" + std::to_string(i), inputs[i], true}));
    }
    return grad_check(
        [&](Tape& tape) {
            std::vector<Var> vars;
            for (const auto& p : params) vars.push_back(tape.param(p));
            return f(tape, vars);
        },
        params, fd_step);
}

}  // namespace sparseconv

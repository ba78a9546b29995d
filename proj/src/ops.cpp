#include "sparseconv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sparseconv::ops {

namespace {

using Grads = std::vector<std::optional<Tensor>>;

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto av = a.values<T>();
        auto ov = out.values<T>();
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
    });
    return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
    Tensor out(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<typename T>() {
        auto av = a.values<T>();
        auto bv = b.values<T>();
        auto ov = out.values<T>();
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i], bv[i]);
    });
    return out;
}

void check_binary(const Var& a, const Var& b, const char* what) {
    require_same_shape(a.value(), b.value(), what);
    require_same_dtype(a.value(), b.value(), what);
}

/// Validates a (N, 1, H, W) map against x and returns it in x's dtype.
Tensor spatial_map(const Tensor& x, const Tensor& map, const char* what) {
    const Shape& xs = x.shape();
    const Shape& ms = map.shape();
    if (ms.c != 1 || ms.n != xs.n || ms.h != xs.h || ms.w != xs.w) {
        throw std::invalid_argument(std::string(what) + ": map " + to_string(ms) +
                                    " does not match features " + to_string(xs));
    }
    return map.cast(x.dtype());
}

/// out[n, c, p] = f(x[n, c, p], m[n, p]) over all channels.
template <typename F>
Tensor map_with_spatial(const Tensor& x, const Tensor& m, F f) {
    Tensor out(x.shape(), x.dtype());
    const Shape& s = x.shape();
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.values<T>();
        auto mv = m.values<T>();
        auto ov = out.values<T>();
        const std::int64_t plane = s.plane();
        for (std::int64_t n = 0; n < s.n; ++n) {
            const T* mp = mv.data() + n * plane;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t base = (n * s.c + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    ov[static_cast<std::size_t>(base + i)] =
                        f(xv[static_cast<std::size_t>(base + i)], mp[i]);
                }
            }
        }
    });
    return out;
}

Tensor select_by_map(const Tensor& a, const Tensor& b, const Tensor& s) {
    Tensor out(a.shape(), a.dtype());
    const Shape& sh = a.shape();
    dispatch(a.dtype(), [&]<typename T>() {
        auto av = a.values<T>();
        auto bv = b.values<T>();
        auto sv = s.values<T>();
        auto ov = out.values<T>();
        const std::int64_t plane = sh.plane();
        for (std::int64_t n = 0; n < sh.n; ++n) {
            for (std::int64_t c = 0; c < sh.c; ++c) {
                const std::int64_t base = (n * sh.c + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const auto k = static_cast<std::size_t>(base + i);
                    ov[k] = sv[static_cast<std::size_t>(n * plane + i)] != T(0) ? av[k] : bv[k];
                }
            }
        }
    });
    return out;
}

/// Input gradient of conv2d: the transposed convolution of grad_out, with output_padding
/// covering input rows/columns left over by the stride.
Tensor conv_input_grad(const Tensor& grad_out, const Tensor& w, const Shape& in_shape,
                       const ConvGeometry& g) {
    ConvGeometry bg = g;
    bg.output_padding = 0;
    const int kh = static_cast<int>(w.shape().h);
    const int kw = static_cast<int>(w.shape().w);
    const auto rh = in_shape.h - transposed_output_size(grad_out.shape().h, kh, bg);
    const auto rw = in_shape.w - transposed_output_size(grad_out.shape().w, kw, bg);
    if (rh == rw) {
        bg.output_padding = static_cast<int>(rh);
        return transposed_conv2d(grad_out, w, nullptr, bg);
    }
    // Unequal remainders: extend by the larger one and crop the other axis.
    bg.output_padding = static_cast<int>(std::max(rh, rw));
    Tensor full = transposed_conv2d(grad_out, w, nullptr, bg);
    Tensor out(Shape{full.shape().n, full.shape().c, in_shape.h, in_shape.w}, full.dtype());
    dispatch(full.dtype(), [&]<typename T>() {
        auto fv = full.values<T>();
        auto ov = out.values<T>();
        for (std::int64_t n = 0; n < out.shape().n; ++n)
            for (std::int64_t c = 0; c < out.shape().c; ++c)
                for (std::int64_t y = 0; y < in_shape.h; ++y)
                    for (std::int64_t x = 0; x < in_shape.w; ++x)
                        ov[static_cast<std::size_t>(out.index(n, c, y, x))] =
                            fv[static_cast<std::size_t>(full.index(n, c, y, x))];
    });
    return out;
}

}  // namespace

Var add(Tape& tape, const Var& a, const Var& b) {
    check_binary(a, b, "add");
    Tensor y = map_binary(a.value(), b.value(), [](auto p, auto q) { return p + q; });
    return tape.record(OpKind::add, std::move(y), {a, b},
                       [](const Tensor& g) { return Grads{g, g}; });
}

Var sub(Tape& tape, const Var& a, const Var& b) {
    check_binary(a, b, "sub");
    Tensor y = map_binary(a.value(), b.value(), [](auto p, auto q) { return p - q; });
    return tape.record(OpKind::sub, std::move(y), {a, b}, [](const Tensor& g) {
        return Grads{g, map_unary(g, [](auto v) { return -v; })};
    });
}

Var mul(Tape& tape, const Var& a, const Var& b) {
    check_binary(a, b, "mul");
    Tensor y = map_binary(a.value(), b.value(), [](auto p, auto q) { return p * q; });
    Tensor av = a.value();
    Tensor bv = b.value();
    return tape.record(OpKind::mul, std::move(y), {a, b}, [av, bv](const Tensor& g) {
        auto prod = [](auto p, auto q) { return p * q; };
        return Grads{map_binary(g, bv, prod), map_binary(g, av, prod)};
    });
}

Var scale(Tape& tape, const Var& a, double factor) {
    auto f = [factor](auto v) { return v * static_cast<decltype(v)>(factor); };
    Tensor y = map_unary(a.value(), f);
    return tape.record(OpKind::scale, std::move(y), {a},
                       [f](const Tensor& g) { return Grads{map_unary(g, f)}; });
}

Var relu(Tape& tape, const Var& a) {
    Tensor y = map_unary(a.value(), [](auto v) { return v > 0 ? v : decltype(v)(0); });
    Tensor av = a.value();
    return tape.record(OpKind::relu, std::move(y), {a}, [av](const Tensor& g) {
        return Grads{map_binary(g, av, [](auto gv, auto x) { return x > 0 ? gv : decltype(gv)(0); })};
    });
}

Var mask_select(Tape& tape, const Var& x, const Tensor& mask) {
    Tensor m = spatial_map(x.value(), mask, "mask_select");
    auto gate = [](auto v, auto mv) { return mv != 0 ? v : decltype(v)(0); };
    Tensor y = map_with_spatial(x.value(), m, gate);
    return tape.record(OpKind::mask_select, std::move(y), {x}, [m, gate](const Tensor& g) {
        return Grads{map_with_spatial(g, m, gate)};
    });
}

Var scale_by_map(Tape& tape, const Var& x, const Tensor& map) {
    Tensor m = spatial_map(x.value(), map, "scale_by_map");
    auto prod = [](auto v, auto mv) { return v * mv; };
    Tensor y = map_with_spatial(x.value(), m, prod);
    return tape.record(OpKind::scale_by_map, std::move(y), {x}, [m, prod](const Tensor& g) {
        return Grads{map_with_spatial(g, m, prod)};
    });
}

Var switch_select(Tape& tape, const Var& a, const Var& b, const Tensor& s) {
    check_binary(a, b, "switch_select");
    Tensor sm = spatial_map(a.value(), s, "switch_select");
    Tensor y = select_by_map(a.value(), b.value(), sm);
    return tape.record(OpKind::switch_select, std::move(y), {a, b}, [sm](const Tensor& g) {
        Tensor zero(g.shape(), g.dtype());
        return Grads{select_by_map(g, zero, sm), select_by_map(zero, g, sm)};
    });
}

Var add_bias(Tape& tape, const Var& x, const Var& bias) {
    const Shape& s = x.shape();
    if (bias.value().numel() != s.c) {
        throw std::invalid_argument("add_bias: " + std::to_string(bias.value().numel()) +
                                    " bias values for " + std::to_string(s.c) + " channels");
    }
    require_same_dtype(x.value(), bias.value(), "add_bias");
    Tensor y = x.value();
    dispatch(y.dtype(), [&]<typename T>() {
        auto yv = y.values<T>();
        auto bv = bias.value().values<T>();
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                T* p = yv.data() + (n * s.c + c) * s.plane();
                for (std::int64_t i = 0; i < s.plane(); ++i) p[i] += bv[static_cast<std::size_t>(c)];
            }
    });
    const Shape bshape = bias.shape();
    return tape.record(OpKind::add_bias, std::move(y), {x, bias}, [bshape](const Tensor& g) {
        return Grads{g, channel_sums(g).reshaped(bshape)};
    });
}

Var conv2d(Tape& tape, const Var& x, const Var& w, const std::optional<Var>& bias,
           const ConvGeometry& g) {
    const Tensor* b = bias ? &bias->value() : nullptr;
    Tensor y = sparseconv::conv2d(x.value(), w.value(), b, g);
    std::vector<Var> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    Tensor xv = x.value();
    Tensor wv = w.value();
    const bool need_x = x.requires_grad();
    const bool need_w = w.requires_grad();
    const bool has_bias = bias.has_value();
    const Shape bshape = bias ? bias->shape() : Shape{};
    return tape.record(
        OpKind::conv2d, std::move(y), std::move(inputs),
        [xv, wv, g, need_x, need_w, has_bias, bshape](const Tensor& gy) {
            Grads out;
            out.push_back(need_x ? std::optional<Tensor>(conv_input_grad(gy, wv, xv.shape(), g))
                                 : std::nullopt);
            out.push_back(need_w ? std::optional<Tensor>(conv2d_weight_grad(
                                       gy, xv, static_cast<int>(wv.shape().h),
                                       static_cast<int>(wv.shape().w), g))
                                 : std::nullopt);
            if (has_bias) out.push_back(channel_sums(gy).reshaped(bshape));
            return out;
        });
}

Var transposed_conv2d(Tape& tape, const Var& x, const Var& w, const std::optional<Var>& bias,
                      const ConvGeometry& g) {
    const Tensor* b = bias ? &bias->value() : nullptr;
    Tensor y = sparseconv::transposed_conv2d(x.value(), w.value(), b, g);
    std::vector<Var> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    Tensor xv = x.value();
    Tensor wv = w.value();
    const bool need_x = x.requires_grad();
    const bool need_w = w.requires_grad();
    const bool has_bias = bias.has_value();
    const Shape bshape = bias ? bias->shape() : Shape{};
    return tape.record(
        OpKind::transposed_conv2d, std::move(y), std::move(inputs),
        [xv, wv, g, need_x, need_w, has_bias, bshape](const Tensor& gy) {
            ConvGeometry fg = g;
            fg.output_padding = 0;
            Grads out;
            out.push_back(need_x ? std::optional<Tensor>(sparseconv::conv2d(gy, wv, nullptr, fg))
                                 : std::nullopt);
            out.push_back(need_w ? std::optional<Tensor>(conv2d_weight_grad(
                                       xv, gy, static_cast<int>(wv.shape().h),
                                       static_cast<int>(wv.shape().w), fg))
                                 : std::nullopt);
            if (has_bias) out.push_back(channel_sums(gy).reshaped(bshape));
            return out;
        });
}

Var concat_channels(Tape& tape, std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    Shape s = parts.front().shape();
    const DType dtype = parts.front().dtype();
    std::vector<std::int64_t> channels;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        const Shape& q = p.shape();
        if (q.n != s.n || q.h != s.h || q.w != s.w || p.dtype() != dtype) {
            throw std::invalid_argument("concat_channels: part " + to_string(q) +
                                        " incompatible with " + to_string(s));
        }
        channels.push_back(q.c);
        total += q.c;
    }
    s.c = total;
    Tensor y(s, dtype);
    dispatch(dtype, [&]<typename T>() {
        auto yv = y.values<T>();
        const std::int64_t plane = s.plane();
        for (std::int64_t n = 0; n < s.n; ++n) {
            std::int64_t c0 = 0;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                auto pv = parts[k].value().values<T>();
                const std::int64_t len = channels[k] * plane;
                std::copy_n(pv.begin() + n * len, len, yv.begin() + (n * s.c + c0) * plane);
                c0 += channels[k];
            }
        }
    });
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(OpKind::concat_channels, std::move(y), std::move(inputs),
                       [channels, s](const Tensor& g) {
                           Grads out;
                           std::int64_t c0 = 0;
                           for (std::int64_t ch : channels) {
                               Tensor part(Shape{s.n, ch, s.h, s.w}, g.dtype());
                               dispatch(g.dtype(), [&]<typename T>() {
                                   auto gv = g.values<T>();
                                   auto pv = part.values<T>();
                                   const std::int64_t plane = s.plane();
                                   for (std::int64_t n = 0; n < s.n; ++n) {
                                       std::copy_n(gv.begin() + (n * s.c + c0) * plane,
                                                   ch * plane, pv.begin() + n * ch * plane);
                                   }
                               });
                               out.emplace_back(std::move(part));
                               c0 += ch;
                           }
                           return out;
                       });
}

namespace {

Tensor block_average(const Tensor& x, int block) {
    const Shape& s = x.shape();
    Tensor out(s, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.values<T>();
        auto ov = out.values<T>();
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t base = (n * s.c + c) * s.plane();
                for (std::int64_t by = 0; by < s.h; by += block)
                    for (std::int64_t bx = 0; bx < s.w; bx += block) {
                        const std::int64_t ey = std::min<std::int64_t>(by + block, s.h);
                        const std::int64_t ex = std::min<std::int64_t>(bx + block, s.w);
                        T acc = 0;
                        for (std::int64_t y = by; y < ey; ++y)
                            for (std::int64_t x0 = bx; x0 < ex; ++x0)
                                acc += xv[static_cast<std::size_t>(base + y * s.w + x0)];
                        const T mean = acc / static_cast<T>((ey - by) * (ex - bx));
                        for (std::int64_t y = by; y < ey; ++y)
                            for (std::int64_t x0 = bx; x0 < ex; ++x0)
                                ov[static_cast<std::size_t>(base + y * s.w + x0)] = mean;
                    }
            }
    });
    return out;
}

}  // namespace

Var block_mean(Tape& tape, const Var& x, int block) {
    if (block < 1) throw std::invalid_argument("block_mean: block must be >= 1");
    Tensor y = block_average(x.value(), block);
    // The block-mean operator is symmetric, so it is its own adjoint.
    return tape.record(OpKind::block_mean, std::move(y), {x},
                       [block](const Tensor& g) { return Grads{block_average(g, block)}; });
}

Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, Parameter& running_mean,
               Parameter& running_var, const BatchNormOptions& opt) {
    const Shape& s = x.shape();
    if (gamma.value().numel() != s.c || beta.value().numel() != s.c ||
        running_mean.value.numel() != s.c || running_var.value.numel() != s.c) {
        throw std::invalid_argument("batch_norm: parameter size does not match " +
                                    std::to_string(s.c) + " channels");
    }
    const std::int64_t count = s.n * s.plane();
    std::vector<double> mean(static_cast<std::size_t>(s.c));
    std::vector<double> inv_std(static_cast<std::size_t>(s.c));
    const std::vector<double> gv = gamma.value().to_vector();
    const std::vector<double> bv = beta.value().to_vector();
    Tensor xhat(s, x.dtype());
    Tensor y(s, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.value().values<T>();
        auto rm = running_mean.value.values<T>();
        auto rv = running_var.value.values<T>();
        for (std::int64_t c = 0; c < s.c; ++c) {
            const auto ci = static_cast<std::size_t>(c);
            double m = 0;
            double v = 0;
            if (opt.training) {
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const T* p = xv.data() + (n * s.c + c) * s.plane();
                    for (std::int64_t i = 0; i < s.plane(); ++i) m += p[i];
                }
                m /= static_cast<double>(count);
                for (std::int64_t n = 0; n < s.n; ++n) {
                    const T* p = xv.data() + (n * s.c + c) * s.plane();
                    for (std::int64_t i = 0; i < s.plane(); ++i) v += (p[i] - m) * (p[i] - m);
                }
                v /= static_cast<double>(count);
                const double unbiased = count > 1 ? v * count / (count - 1) : v;
                rm[ci] = static_cast<T>((1 - opt.momentum) * rm[ci] + opt.momentum * m);
                rv[ci] = static_cast<T>((1 - opt.momentum) * rv[ci] + opt.momentum * unbiased);
            } else {
                m = rm[ci];
                v = rv[ci];
            }
            mean[ci] = m;
            inv_std[ci] = 1.0 / std::sqrt(v + opt.epsilon);
        }
        auto hv = xhat.values<T>();
        auto yv = y.values<T>();
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                const std::int64_t base = (n * s.c + c) * s.plane();
                for (std::int64_t i = 0; i < s.plane(); ++i) {
                    const auto k = static_cast<std::size_t>(base + i);
                    const double h = (xv[k] - mean[ci]) * inv_std[ci];
                    hv[k] = static_cast<T>(h);
                    yv[k] = static_cast<T>(gv[ci] * h + bv[ci]);
                }
            }
    });
    const Shape gshape = gamma.shape();
    const bool training = opt.training;
    return tape.record(
        OpKind::batch_norm, std::move(y), {x, gamma, beta},
        [xhat, inv_std, gv, gshape, training, count, s](const Tensor& g) {
            Tensor gx(s, g.dtype());
            Tensor ggamma(gshape, g.dtype());
            Tensor gbeta(gshape, g.dtype());
            dispatch(g.dtype(), [&]<typename T>() {
                auto gvv = g.values<T>();
                auto hv = xhat.values<T>();
                auto gxv = gx.values<T>();
                for (std::int64_t c = 0; c < s.c; ++c) {
                    const auto ci = static_cast<std::size_t>(c);
                    double sum_g = 0;
                    double sum_gh = 0;
                    for (std::int64_t n = 0; n < s.n; ++n) {
                        const std::int64_t base = (n * s.c + c) * s.plane();
                        for (std::int64_t i = 0; i < s.plane(); ++i) {
                            const auto k = static_cast<std::size_t>(base + i);
                            sum_g += gvv[k];
                            sum_gh += gvv[k] * hv[k];
                        }
                    }
                    ggamma.set_flat(c, sum_gh);
                    gbeta.set_flat(c, sum_g);
                    const double mg = sum_g / static_cast<double>(count);
                    const double mgh = sum_gh / static_cast<double>(count);
                    const double k0 = gv[ci] * inv_std[ci];
                    for (std::int64_t n = 0; n < s.n; ++n) {
                        const std::int64_t base = (n * s.c + c) * s.plane();
                        for (std::int64_t i = 0; i < s.plane(); ++i) {
                            const auto k = static_cast<std::size_t>(base + i);
                            const double d = training ? gvv[k] - mg - hv[k] * mgh : gvv[k];
                            gxv[k] = static_cast<T>(k0 * d);
                        }
                    }
                }
            });
            return Grads{std::move(gx), std::move(ggamma), std::move(gbeta)};
        });
}

Var sum(Tape& tape, const Var& x) {
    double acc = 0;
    dispatch(x.dtype(), [&]<typename T>() {
        for (T v : x.value().values<T>()) acc += v;
    });
    const Shape s = x.shape();
    return tape.record(OpKind::sum, Tensor::scalar(acc, x.dtype()), {x}, [s](const Tensor& g) {
        return Grads{Tensor::full(s, g.item(), g.dtype())};
    });
}

Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights) {
    require_same_shape(x.value(), weights, "weighted_sum");
    Tensor w = weights.cast(x.dtype());
    double acc = 0;
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.value().values<T>();
        auto wv = w.values<T>();
        for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * wv[i];
    });
    return tape.record(OpKind::weighted_sum, Tensor::scalar(acc, x.dtype()), {x},
                       [w](const Tensor& g) {
                           const double gs = g.item();
                           return Grads{map_unary(w, [gs](auto v) {
                               return v * static_cast<decltype(v)>(gs);
                           })};
                       });
}

}  // namespace sparseconv::ops

#include "sparseconv/conv.hpp"

#include <algorithm>
#include <string>

namespace sparseconv {

namespace {

struct Range {
    std::int64_t lo;
    std::int64_t hi;  // exclusive
};

/// Small-grid indices o in [0, small) with 0 <= o * stride + offset < large.
Range tap_range(std::int64_t small, std::int64_t large, std::int64_t stride, std::int64_t offset) {
    std::int64_t lo = 0;
    if (offset < 0) lo = (-offset + stride - 1) / stride;
    std::int64_t hi = 0;
    if (large - 1 - offset >= 0) hi = (large - 1 - offset) / stride + 1;
    return {std::min(lo, small), std::clamp(hi, std::int64_t{0}, small)};
}

void check_geometry(const ConvGeometry& g, const char* what) {
    if (g.stride < 1 || g.dilation < 1 || g.padding < 0 || g.output_padding < 0) {
        throw std::invalid_argument(std::string(what) +
                                    ": stride and dilation must be >= 1, padding >= 0");
    }
}

void check_bias(const Tensor* bias, std::int64_t channels, DType dtype, const char* what) {
    if (bias == nullptr) return;
    if (bias->numel() != channels) {
        throw std::invalid_argument(std::string(what) + ": bias has " +
                                    std::to_string(bias->numel()) + " values for " +
                                    std::to_string(channels) + " output channels");
    }
    if (bias->dtype() != dtype) {
        throw std::invalid_argument(std::string(what) + ": bias dtype mismatch");
    }
}

template <typename T>
void add_bias_planes(Tensor& y, const Tensor& bias) {
    auto out = y.values<T>();
    auto b = bias.values<T>();
    const Shape& s = y.shape();
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            T* p = out.data() + (n * s.c + c) * plane;
            const T bv = b[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < plane; ++i) p[i] += bv;
        }
    }
}

/// out[o] += wv * in[o * stride + offset] for o in r.
template <typename T>
inline void gather_row(T* out, const T* in, Range r, std::int64_t stride, std::int64_t offset,
                       T wv) {
    if (stride == 1) {
        for (std::int64_t o = r.lo; o < r.hi; ++o) out[o] += wv * in[o + offset];
    } else {
        for (std::int64_t o = r.lo; o < r.hi; ++o) out[o] += wv * in[o * stride + offset];
    }
}

/// out[o * stride + offset] += wv * in[o] for o in r.
template <typename T>
inline void scatter_row(T* out, const T* in, Range r, std::int64_t stride, std::int64_t offset,
                        T wv) {
    if (stride == 1) {
        for (std::int64_t o = r.lo; o < r.hi; ++o) out[o + offset] += wv * in[o];
    } else {
        for (std::int64_t o = r.lo; o < r.hi; ++o) out[o * stride + offset] += wv * in[o];
    }
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, int kernel, const ConvGeometry& g) {
    const std::int64_t span = static_cast<std::int64_t>(g.dilation) * (kernel - 1) + 1;
    const std::int64_t padded = in + 2 * static_cast<std::int64_t>(g.padding);
    if (padded < span) return 0;
    return (padded - span) / g.stride + 1;
}

std::int64_t transposed_output_size(std::int64_t in, int kernel, const ConvGeometry& g) {
    return (in - 1) * g.stride - 2 * static_cast<std::int64_t>(g.padding) +
           static_cast<std::int64_t>(g.dilation) * (kernel - 1) + 1 + g.output_padding;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g) {
    check_geometry(g, "conv2d");
    require_same_dtype(x, w, "conv2d");
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.c != xs.c) {
        throw std::invalid_argument("conv2d: weight " + to_string(ws) + " expects " +
                                    std::to_string(ws.c) + " input channels, input is " +
                                    to_string(xs));
    }
    check_bias(bias, ws.n, x.dtype(), "conv2d");
    const std::int64_t oh = conv_output_size(xs.h, static_cast<int>(ws.h), g);
    const std::int64_t ow = conv_output_size(xs.w, static_cast<int>(ws.w), g);
    if (oh <= 0 || ow <= 0 || xs.n == 0) {
        throw std::invalid_argument("conv2d: zero-size output for input " + to_string(xs) +
                                    " and kernel " + to_string(ws));
    }
    Tensor y(Shape{xs.n, ws.n, oh, ow}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.values<T>();
        auto wv = w.values<T>();
        auto yv = y.values<T>();
        for (std::int64_t n = 0; n < xs.n; ++n) {
            for (std::int64_t co = 0; co < ws.n; ++co) {
                T* yp = yv.data() + (n * ws.n + co) * oh * ow;
                for (std::int64_t ci = 0; ci < xs.c; ++ci) {
                    const T* xp = xv.data() + (n * xs.c + ci) * xs.h * xs.w;
                    for (std::int64_t ky = 0; ky < ws.h; ++ky) {
                        const std::int64_t offy = ky * g.dilation - g.padding;
                        const Range ry = tap_range(oh, xs.h, g.stride, offy);
                        for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                            const T wt = wv[static_cast<std::size_t>(w.index(co, ci, ky, kx))];
                            const std::int64_t offx = kx * g.dilation - g.padding;
                            const Range rx = tap_range(ow, xs.w, g.stride, offx);
                            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                                gather_row<T>(yp + oy * ow, xp + (oy * g.stride + offy) * xs.w,
                                              rx, g.stride, offx, wt);
                            }
                        }
                    }
                }
            }
        }
        if (bias != nullptr) add_bias_planes<T>(y, *bias);
    });
    return y;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias,
                         const ConvGeometry& g) {
    check_geometry(g, "transposed_conv2d");
    require_same_dtype(x, w, "transposed_conv2d");
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.n != xs.c) {
        throw std::invalid_argument("transposed_conv2d: weight " + to_string(ws) + " expects " +
                                    std::to_string(ws.n) + " input channels, input is " +
                                    to_string(xs));
    }
    if (g.output_padding >= g.stride) {
        throw std::invalid_argument("transposed_conv2d: output_padding must be below stride");
    }
    check_bias(bias, ws.c, x.dtype(), "transposed_conv2d");
    const std::int64_t oh = transposed_output_size(xs.h, static_cast<int>(ws.h), g);
    const std::int64_t ow = transposed_output_size(xs.w, static_cast<int>(ws.w), g);
    if (oh <= 0 || ow <= 0 || xs.n == 0) {
        throw std::invalid_argument("transposed_conv2d: zero-size output for input " +
                                    to_string(xs) + " and kernel " + to_string(ws));
    }
    Tensor y(Shape{xs.n, ws.c, oh, ow}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.values<T>();
        auto wv = w.values<T>();
        auto yv = y.values<T>();
        for (std::int64_t n = 0; n < xs.n; ++n) {
            for (std::int64_t co = 0; co < ws.c; ++co) {
                T* yp = yv.data() + (n * ws.c + co) * oh * ow;
                for (std::int64_t ci = 0; ci < xs.c; ++ci) {
                    const T* xp = xv.data() + (n * xs.c + ci) * xs.h * xs.w;
                    for (std::int64_t ky = 0; ky < ws.h; ++ky) {
                        const std::int64_t offy = ky * g.dilation - g.padding;
                        const Range ry = tap_range(xs.h, oh, g.stride, offy);
                        for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                            const T wt = wv[static_cast<std::size_t>(w.index(ci, co, ky, kx))];
                            const std::int64_t offx = kx * g.dilation - g.padding;
                            const Range rx = tap_range(xs.w, ow, g.stride, offx);
                            for (std::int64_t iy = ry.lo; iy < ry.hi; ++iy) {
                                scatter_row<T>(yp + (iy * g.stride + offy) * ow, xp + iy * xs.w,
                                               rx, g.stride, offx, wt);
                            }
                        }
                    }
                }
            }
        }
        if (bias != nullptr) add_bias_planes<T>(y, *bias);
    });
    return y;
}

Tensor conv2d_weight_grad(const Tensor& small, const Tensor& large, int kh, int kw,
                          const ConvGeometry& g) {
    check_geometry(g, "conv2d_weight_grad");
    require_same_dtype(small, large, "conv2d_weight_grad");
    const Shape& ss = small.shape();
    const Shape& ls = large.shape();
    if (ss.n != ls.n) throw std::invalid_argument("conv2d_weight_grad: batch mismatch");
    Tensor gw(Shape{ss.c, ls.c, kh, kw}, small.dtype());
    dispatch(small.dtype(), [&]<typename T>() {
        auto sv = small.values<T>();
        auto lv = large.values<T>();
        auto gv = gw.values<T>();
        for (std::int64_t cs = 0; cs < ss.c; ++cs) {
            for (std::int64_t cl = 0; cl < ls.c; ++cl) {
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t offy = ky * g.dilation - g.padding;
                    const Range ry = tap_range(ss.h, ls.h, g.stride, offy);
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t offx = kx * g.dilation - g.padding;
                        const Range rx = tap_range(ss.w, ls.w, g.stride, offx);
                        T acc = 0;
                        for (std::int64_t n = 0; n < ss.n; ++n) {
                            const T* sp = sv.data() + (n * ss.c + cs) * ss.h * ss.w;
                            const T* lp = lv.data() + (n * ls.c + cl) * ls.h * ls.w;
                            for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                                const T* srow = sp + oy * ss.w;
                                const T* lrow = lp + (oy * g.stride + offy) * ls.w;
                                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) {
                                    acc += srow[ox] * lrow[ox * g.stride + offx];
                                }
                            }
                        }
                        gv[static_cast<std::size_t>(gw.index(cs, cl, ky, kx))] = acc;
                    }
                }
            }
        }
    });
    return gw;
}

Tensor channel_sums(const Tensor& x) {
    const Shape& s = x.shape();
    Tensor out(Shape{1, s.c, 1, 1}, x.dtype());
    dispatch(x.dtype(), [&]<typename T>() {
        auto xv = x.values<T>();
        auto ov = out.values<T>();
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T* p = xv.data() + (n * s.c + c) * s.plane();
                T acc = 0;
                for (std::int64_t i = 0; i < s.plane(); ++i) acc += p[i];
                ov[static_cast<std::size_t>(c)] += acc;
            }
        }
    });
    return out;
}

Tensor max_pool_window(const Tensor& o, int k, int dilation, int stride, int padding,
                       bool strict) {
    const Shape& s = o.shape();
    if (s.c != 1) {
        throw std::invalid_argument("max_pool_window: expected one channel, got " + to_string(s));
    }
    if (k < 0) throw std::invalid_argument("max_pool_window: negative half-kernel");
    const ConvGeometry g{stride, dilation, padding, 0};
    check_geometry(g, "max_pool_window");
    const int kernel = 2 * k + 1;
    const std::int64_t oh = conv_output_size(s.h, kernel, g);
    const std::int64_t ow = conv_output_size(s.w, kernel, g);
    if (oh <= 0 || ow <= 0) {
        throw std::invalid_argument("max_pool_window: zero-size output for " + to_string(s));
    }
    Tensor out(Shape{s.n, 1, oh, ow}, o.dtype());
    dispatch(o.dtype(), [&]<typename T>() {
        auto iv = o.values<T>();
        if (strict) {
            for (T v : iv) {
                if (v != T(0) && v != T(1)) {
                    throw std::invalid_argument("max_pool_window: non-binary mask value " +
                                                std::to_string(static_cast<double>(v)));
                }
            }
        }
        auto ov = out.values<T>();
        for (std::int64_t n = 0; n < s.n; ++n) {
            const T* ip = iv.data() + n * s.plane();
            T* op = ov.data() + n * oh * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    // Zero padding never raises the maximum of a {0,1} map, so skipping
                    // out-of-range taps is exact; for general inputs padding acts as 0.
                    T best = 0;
                    bool any_outside = false;
                    bool first = true;
                    for (int i = 0; i < kernel; ++i) {
                        const std::int64_t iy = oy * stride + i * dilation - padding;
                        for (int j = 0; j < kernel; ++j) {
                            const std::int64_t ix = ox * stride + j * dilation - padding;
                            if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) {
                                any_outside = true;
                                continue;
                            }
                            const T v = ip[iy * s.w + ix];
                            if (first || v > best) best = v;
                            first = false;
                        }
                    }
                    if (any_outside && best < T(0)) best = 0;
                    op[oy * ow + ox] = best;
                }
            }
        }
    });
    return out;
}

}  // namespace sparseconv

#pragma once

#include <algorithm>

#include "dpt/ops.hpp"

namespace dpt {

namespace detail {

// Smallest oy with oy*stride - pad + k >= 0 (stride > 0).
inline int conv_lo(int pad, int k, int stride) {
    const int a = pad - k;
    return a <= 0 ? 0 : (a + stride - 1) / stride;
}

// Largest oy with oy*stride - pad + k <= limit - 1.
inline int conv_hi(int limit, int pad, int k, int stride) {
    const int a = limit - 1 + pad - k;
    return a < 0 ? -1 : a / stride;
}

}  // namespace detail

// 2D convolution, zero padding. x:[N,C,H,W], w:[O,C/groups,kh,kw], bias:[O] or
// undefined. Each output element accumulates bias first, then taps in
// (c, ky, kx) order; other code relies on that exact order.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad, int groups = 1) {
    check(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    check(w.rank() == 4, "conv2d: weight must be [O,C/g,kh,kw], got " + shape_str(w.shape()));
    check(stride >= 1 && pad >= 0 && groups >= 1, "conv2d: bad stride/pad/groups");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    check(ci % groups == 0 && co % groups == 0, "conv2d: channels not divisible by groups");
    check(cg == ci / groups, "conv2d: weight expects " + std::to_string(cg) +
                                 " channels per group, input provides " +
                                 std::to_string(ci / groups));
    if (bias.defined())
        check(bias.rank() == 1 && bias.dim(0) == co, "conv2d: bias must be [O]");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    check(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");

    const auto& xv = x.data();
    const auto& wv = w.data();
    std::vector<T> out(static_cast<size_t>(n) * co * ho * wo, T(0));
    const int64_t x_cs = static_cast<int64_t>(h) * wd;       // channel stride in x
    const int64_t o_cs = static_cast<int64_t>(ho) * wo;      // channel stride in out
    const int64_t w_os = static_cast<int64_t>(cg) * kh * kw; // per-output-channel weight size

    parallel_for(static_cast<int64_t>(n) * co, [&](int64_t lo, int64_t hi) {
        for (int64_t no = lo; no < hi; ++no) {
            const int ni = static_cast<int>(no / co);
            const int o = static_cast<int>(no % co);
            const int g = o / (co / groups);
            T* oplane = out.data() + no * o_cs;
            if (bias.defined()) {
                const T b = bias.data()[static_cast<size_t>(o)];
                for (int64_t i = 0; i < o_cs; ++i) oplane[i] = b;
            }
            for (int c = 0; c < cg; ++c) {
                const T* xplane =
                    xv.data() + (static_cast<int64_t>(ni) * ci + g * cg + c) * x_cs;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy_lo = detail::conv_lo(pad, ky, stride);
                    const int oy_hi = std::min(ho - 1, detail::conv_hi(h, pad, ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wk = wv[static_cast<size_t>(o) * w_os +
                                        (static_cast<int64_t>(c) * kh + ky) * kw + kx];
                        const int ox_lo = detail::conv_lo(pad, kx, stride);
                        const int ox_hi =
                            std::min(wo - 1, detail::conv_hi(wd, pad, kx, stride));
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            const T* xrow = xplane + static_cast<int64_t>(iy) * wd - pad + kx;
                            T* orow = oplane + static_cast<int64_t>(oy) * wo;
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                orow[ox] += wk * xrow[static_cast<int64_t>(ox) * stride];
                        }
                    }
                }
            }
        }
    });

    std::vector<Tensor<T>> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_op<T>(
        "conv2d", {n, co, ho, wo}, std::move(out), inputs,
        [xn, wn, bn, n, ci, h, wd, co, cg, kh, kw, ho, wo, stride, pad, groups, x_cs, o_cs,
         w_os](Node<T>& self) {
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int o = 0; o < co; ++o) {
                        const T* gplane =
                            self.grad.data() + (static_cast<int64_t>(ni) * co + o) * o_cs;
                        T acc = T(0);
                        for (int64_t i = 0; i < o_cs; ++i) acc += gplane[i];
                        bn->grad[static_cast<size_t>(o)] += acc;
                    }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int o = 0; o < co; ++o) {
                        const int g = o / (co / groups);
                        const T* gplane =
                            self.grad.data() + (static_cast<int64_t>(ni) * co + o) * o_cs;
                        for (int c = 0; c < cg; ++c) {
                            const T* xplane = xn->value.data() +
                                              (static_cast<int64_t>(ni) * ci + g * cg + c) * x_cs;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int oy_lo = detail::conv_lo(pad, ky, stride);
                                const int oy_hi =
                                    std::min(ho - 1, detail::conv_hi(h, pad, ky, stride));
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ox_lo = detail::conv_lo(pad, kx, stride);
                                    const int ox_hi =
                                        std::min(wo - 1, detail::conv_hi(wd, pad, kx, stride));
                                    T acc = T(0);
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const int iy = oy * stride - pad + ky;
                                        const T* xrow =
                                            xplane + static_cast<int64_t>(iy) * wd - pad + kx;
                                        const T* grow = gplane + static_cast<int64_t>(oy) * wo;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                            acc += grow[ox] * xrow[static_cast<int64_t>(ox) * stride];
                                    }
                                    wn->grad[static_cast<size_t>(o) * w_os +
                                             (static_cast<int64_t>(c) * kh + ky) * kw + kx] += acc;
                                }
                            }
                        }
                    }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int o = 0; o < co; ++o) {
                        const int g = o / (co / groups);
                        const T* gplane =
                            self.grad.data() + (static_cast<int64_t>(ni) * co + o) * o_cs;
                        for (int c = 0; c < cg; ++c) {
                            T* xgplane = xn->grad.data() +
                                         (static_cast<int64_t>(ni) * ci + g * cg + c) * x_cs;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int oy_lo = detail::conv_lo(pad, ky, stride);
                                const int oy_hi =
                                    std::min(ho - 1, detail::conv_hi(h, pad, ky, stride));
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wk = wn->value[static_cast<size_t>(o) * w_os +
                                                           (static_cast<int64_t>(c) * kh + ky) * kw +
                                                           kx];
                                    const int ox_lo = detail::conv_lo(pad, kx, stride);
                                    const int ox_hi =
                                        std::min(wo - 1, detail::conv_hi(wd, pad, kx, stride));
                                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                        const int iy = oy * stride - pad + ky;
                                        T* xrow =
                                            xgplane + static_cast<int64_t>(iy) * wd - pad + kx;
                                        const T* grow = gplane + static_cast<int64_t>(oy) * wo;
                                        for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                            xrow[static_cast<int64_t>(ox) * stride] += wk * grow[ox];
                                    }
                                }
                            }
                        }
                    }
            }
        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad, int groups = 1) {
    return conv2d(x, w, Tensor<T>(), stride, pad, groups);
}

// Transposed convolution as the exact adjoint of conv2d: it shares the conv2d
// weight layout [O,C,kh,kw] and maps [N,O,H,W] -> [N,C,(H-1)*stride-2*pad+kh, ...],
// so <conv2d(x,w), y> == <x, conv_transpose2d(y,w)> holds per coefficient.
// Each source pixel scatters into the output window it came from under conv2d.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>& bias,
                           int stride, int pad) {
    check(y.rank() == 4, "conv_transpose2d: input must be [N,O,H,W], got " +
                             shape_str(y.shape()));
    check(w.rank() == 4, "conv_transpose2d: weight must be [O,C,kh,kw]");
    check(stride >= 1 && pad >= 0, "conv_transpose2d: bad stride/pad");
    const int n = y.dim(0), co = y.dim(1), h = y.dim(2), wd = y.dim(3);
    check(w.dim(0) == co, "conv_transpose2d: weight expects " + std::to_string(w.dim(0)) +
                              " input channels, got " + std::to_string(co));
    const int ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (bias.defined())
        check(bias.rank() == 1 && bias.dim(0) == ci, "conv_transpose2d: bias must be [C]");
    const int ho = (h - 1) * stride - 2 * pad + kh;
    const int wo = (wd - 1) * stride - 2 * pad + kw;
    check(ho >= 1 && wo >= 1, "conv_transpose2d: output would be empty");

    const auto& yv = y.data();
    const auto& wv = w.data();
    std::vector<T> out(static_cast<size_t>(n) * ci * ho * wo, T(0));
    const int64_t y_cs = static_cast<int64_t>(h) * wd;
    const int64_t o_cs = static_cast<int64_t>(ho) * wo;
    const int64_t w_os = static_cast<int64_t>(ci) * kh * kw;

    parallel_for(static_cast<int64_t>(n) * ci, [&](int64_t lo_i, int64_t hi_i) {
        for (int64_t nc = lo_i; nc < hi_i; ++nc) {
            const int ni = static_cast<int>(nc / ci);
            const int c = static_cast<int>(nc % ci);
            T* oplane = out.data() + nc * o_cs;
            if (bias.defined()) {
                const T b = bias.data()[static_cast<size_t>(c)];
                for (int64_t i = 0; i < o_cs; ++i) oplane[i] = b;
            }
            for (int o = 0; o < co; ++o) {
                const T* yplane = yv.data() + (static_cast<int64_t>(ni) * co + o) * y_cs;
                const T* wplane =
                    wv.data() + static_cast<size_t>(o) * w_os + static_cast<int64_t>(c) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const int sy_lo = detail::conv_lo(pad, ky, stride);
                    const int sy_hi = std::min(h - 1, detail::conv_hi(ho, pad, ky, stride));
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wk = wplane[static_cast<int64_t>(ky) * kw + kx];
                        const int sx_lo = detail::conv_lo(pad, kx, stride);
                        const int sx_hi = std::min(wd - 1, detail::conv_hi(wo, pad, kx, stride));
                        for (int sy = sy_lo; sy <= sy_hi; ++sy) {
                            const int iy = sy * stride - pad + ky;
                            const T* yrow = yplane + static_cast<int64_t>(sy) * wd;
                            T* orow = oplane + static_cast<int64_t>(iy) * wo - pad + kx;
                            for (int sx = sx_lo; sx <= sx_hi; ++sx)
                                orow[static_cast<int64_t>(sx) * stride] += wk * yrow[sx];
                        }
                    }
                }
            }
        }
    });

    std::vector<Tensor<T>> inputs = {y, w};
    if (bias.defined()) inputs.push_back(bias);
    auto yn = y.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_op<T>(
        "conv_transpose2d", {n, ci, ho, wo}, std::move(out), inputs,
        [yn, wn, bn, n, co, h, wd, ci, kh, kw, ho, wo, stride, pad, y_cs, o_cs,
         w_os](Node<T>& self) {
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int c = 0; c < ci; ++c) {
                        const T* gplane =
                            self.grad.data() + (static_cast<int64_t>(ni) * ci + c) * o_cs;
                        T acc = T(0);
                        for (int64_t i = 0; i < o_cs; ++i) acc += gplane[i];
                        bn->grad[static_cast<size_t>(c)] += acc;
                    }
            }
            // d y = conv2d(g, w): the adjoint of a gather is the original scatter.
            if (yn->requires_grad) {
                yn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int o = 0; o < co; ++o) {
                        T* ygplane = yn->grad.data() + (static_cast<int64_t>(ni) * co + o) * y_cs;
                        for (int c = 0; c < ci; ++c) {
                            const T* gplane =
                                self.grad.data() + (static_cast<int64_t>(ni) * ci + c) * o_cs;
                            const T* wplane = wn->value.data() + static_cast<size_t>(o) * w_os +
                                              static_cast<int64_t>(c) * kh * kw;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int sy_lo = detail::conv_lo(pad, ky, stride);
                                const int sy_hi =
                                    std::min(h - 1, detail::conv_hi(ho, pad, ky, stride));
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wk = wplane[static_cast<int64_t>(ky) * kw + kx];
                                    const int sx_lo = detail::conv_lo(pad, kx, stride);
                                    const int sx_hi =
                                        std::min(wd - 1, detail::conv_hi(wo, pad, kx, stride));
                                    for (int sy = sy_lo; sy <= sy_hi; ++sy) {
                                        const int iy = sy * stride - pad + ky;
                                        T* yrow = ygplane + static_cast<int64_t>(sy) * wd;
                                        const T* grow =
                                            gplane + static_cast<int64_t>(iy) * wo - pad + kx;
                                        for (int sx = sx_lo; sx <= sx_hi; ++sx)
                                            yrow[sx] += wk * grow[static_cast<int64_t>(sx) * stride];
                                    }
                                }
                            }
                        }
                    }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int o = 0; o < co; ++o) {
                        const T* yplane =
                            yn->value.data() + (static_cast<int64_t>(ni) * co + o) * y_cs;
                        for (int c = 0; c < ci; ++c) {
                            const T* gplane =
                                self.grad.data() + (static_cast<int64_t>(ni) * ci + c) * o_cs;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int sy_lo = detail::conv_lo(pad, ky, stride);
                                const int sy_hi =
                                    std::min(h - 1, detail::conv_hi(ho, pad, ky, stride));
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int sx_lo = detail::conv_lo(pad, kx, stride);
                                    const int sx_hi =
                                        std::min(wd - 1, detail::conv_hi(wo, pad, kx, stride));
                                    T acc = T(0);
                                    for (int sy = sy_lo; sy <= sy_hi; ++sy) {
                                        const int iy = sy * stride - pad + ky;
                                        const T* yrow = yplane + static_cast<int64_t>(sy) * wd;
                                        const T* grow =
                                            gplane + static_cast<int64_t>(iy) * wo - pad + kx;
                                        for (int sx = sx_lo; sx <= sx_hi; ++sx)
                                            acc += yrow[sx] * grow[static_cast<int64_t>(sx) * stride];
                                    }
                                    wn->grad[static_cast<size_t>(o) * w_os +
                                             (static_cast<int64_t>(c) * kh + ky) * kw + kx] += acc;
                                }
                            }
                        }
                    }
            }
        });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& y, const Tensor<T>& w, int stride, int pad) {
    return conv_transpose2d(y, w, Tensor<T>(), stride, pad);
}

// Replicate (edge-clamp) padding on both spatial axes of [N,C,H,W].
template <typename T>
Tensor<T> pad2d_replicate(const Tensor<T>& x, int pad) {
    check(x.rank() == 4, "pad2d_replicate: input must be [N,C,H,W]");
    check(pad >= 0, "pad2d_replicate: negative pad");
    if (pad == 0) return x;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h + 2 * pad, wo = w + 2 * pad;
    const auto& xv = x.data();
    std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        const T* xplane = xv.data() + nc * h * w;
        T* oplane = out.data() + nc * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            const int iy = std::clamp(oy - pad, 0, h - 1);
            const T* xrow = xplane + static_cast<int64_t>(iy) * w;
            T* orow = oplane + static_cast<int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) orow[ox] = xrow[std::clamp(ox - pad, 0, w - 1)];
        }
    }
    auto xn = x.node();
    return make_op<T>("pad2d_replicate", {n, c, ho, wo}, std::move(out), {x},
                      [xn, n, c, h, w, ho, wo, pad](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                              T* xgplane = xn->grad.data() + nc * h * w;
                              const T* gplane = self.grad.data() + nc * ho * wo;
                              for (int oy = 0; oy < ho; ++oy) {
                                  const int iy = std::clamp(oy - pad, 0, h - 1);
                                  T* xrow = xgplane + static_cast<int64_t>(iy) * w;
                                  const T* grow = gplane + static_cast<int64_t>(oy) * wo;
                                  for (int ox = 0; ox < wo; ++ox)
                                      xrow[std::clamp(ox - pad, 0, w - 1)] += grow[ox];
                              }
                          }
                      });
}

}  // namespace dpt

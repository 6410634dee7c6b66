#pragma once

#include <cmath>

#include "dpt/ops.hpp"

namespace dpt {

namespace detail {

// Bilinear interpolation state at a continuous position on an HxW grid with
// zero padding outside: floor corner plus fractional weights.
template <typename T>
struct BilinearTaps {
    int iy0, ix0;
    T wy, wx;
};

template <typename T>
BilinearTaps<T> bilinear_taps(T py, T px) {
    const T fy = std::floor(py), fx = std::floor(px);
    return {static_cast<int>(fy), static_cast<int>(fx), py - fy, px - fx};
}

template <typename T>
T corner(const T* plane, int h, int w, int y, int x) {
    return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<int64_t>(y) * w + x] : T(0);
}

// Sampled value; corners read zero outside the grid.
template <typename T>
T bilinear_value(const T* plane, int h, int w, const BilinearTaps<T>& t) {
    const T v00 = corner(plane, h, w, t.iy0, t.ix0);
    const T v01 = corner(plane, h, w, t.iy0, t.ix0 + 1);
    const T v10 = corner(plane, h, w, t.iy0 + 1, t.ix0);
    const T v11 = corner(plane, h, w, t.iy0 + 1, t.ix0 + 1);
    return (T(1) - t.wy) * ((T(1) - t.wx) * v00 + t.wx * v01) +
           t.wy * ((T(1) - t.wx) * v10 + t.wx * v11);
}

// d(value)/d(py) and d(value)/d(px) at the same taps.
template <typename T>
void bilinear_coord_grads(const T* plane, int h, int w, const BilinearTaps<T>& t, T& dvdy,
                          T& dvdx) {
    const T v00 = corner(plane, h, w, t.iy0, t.ix0);
    const T v01 = corner(plane, h, w, t.iy0, t.ix0 + 1);
    const T v10 = corner(plane, h, w, t.iy0 + 1, t.ix0);
    const T v11 = corner(plane, h, w, t.iy0 + 1, t.ix0 + 1);
    dvdy = (T(1) - t.wx) * (v10 - v00) + t.wx * (v11 - v01);
    dvdx = (T(1) - t.wy) * (v01 - v00) + t.wy * (v11 - v10);
}

template <typename T>
void scatter_corner(T* plane, int h, int w, int y, int x, T g) {
    if (y >= 0 && y < h && x >= 0 && x < w) plane[static_cast<int64_t>(y) * w + x] += g;
}

}  // namespace detail

// Samples one continuous point (y, x) from a [C,H,W] map with bilinear
// interpolation and zero padding; returns [C]. Differentiable with respect to
// both the map and the point.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& point) {
    check(map.rank() == 3, "bilinear_sample: map must be [C,H,W], got " + shape_str(map.shape()));
    check(point.rank() == 1 && point.dim(0) == 2, "bilinear_sample: point must be [2] = (y,x)");
    const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    const T py = point.data()[0], px = point.data()[1];
    const auto taps = detail::bilinear_taps(py, px);
    const auto& mv = map.data();
    std::vector<T> out(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        out[static_cast<size_t>(ch)] =
            detail::bilinear_value(mv.data() + static_cast<int64_t>(ch) * h * w, h, w, taps);
    auto mn = map.node();
    auto pn = point.node();
    return make_op<T>("bilinear_sample", {c}, std::move(out), {map, point},
                      [mn, pn, c, h, w, taps](Node<T>& self) {
                          const T wy = taps.wy, wx = taps.wx;
                          if (mn->requires_grad) {
                              mn->ensure_grad();
                              for (int ch = 0; ch < c; ++ch) {
                                  T* plane = mn->grad.data() + static_cast<int64_t>(ch) * h * w;
                                  const T g = self.grad[static_cast<size_t>(ch)];
                                  detail::scatter_corner(plane, h, w, taps.iy0, taps.ix0,
                                                         g * (T(1) - wy) * (T(1) - wx));
                                  detail::scatter_corner(plane, h, w, taps.iy0, taps.ix0 + 1,
                                                         g * (T(1) - wy) * wx);
                                  detail::scatter_corner(plane, h, w, taps.iy0 + 1, taps.ix0,
                                                         g * wy * (T(1) - wx));
                                  detail::scatter_corner(plane, h, w, taps.iy0 + 1, taps.ix0 + 1,
                                                         g * wy * wx);
                              }
                          }
                          if (pn->requires_grad) {
                              pn->ensure_grad();
                              T gy = T(0), gx = T(0);
                              for (int ch = 0; ch < c; ++ch) {
                                  T dvdy, dvdx;
                                  detail::bilinear_coord_grads(
                                      mn->value.data() + static_cast<int64_t>(ch) * h * w, h, w,
                                      taps, dvdy, dvdx);
                                  const T g = self.grad[static_cast<size_t>(ch)];
                                  gy += g * dvdy;
                                  gx += g * dvdx;
                              }
                              pn->grad[0] += gy;
                              pn->grad[1] += gx;
                          }
                      });
}

// Deformable 2D convolution, stride 1, same padding (kh-1)/2. Each kernel tap
// k = ky*kw+kx reads the input at its regular position shifted by a learned
// per-pixel offset; offsets:[N,2K,H,W] ordered (dy_1, dx_1, ..., dy_K, dx_K).
// Sampling is bilinear with zero padding. Per output element the taps
// accumulate in (c, ky, kx) order starting from the bias, the same order as
// conv2d, so zero offsets reproduce the plain convolution.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& w,
                        const Tensor<T>& bias) {
    check(x.rank() == 4, "deform_conv2d: input must be [N,C,H,W]");
    check(w.rank() == 4, "deform_conv2d: weight must be [O,C,kh,kw]");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == ci, "deform_conv2d: weight channels " + std::to_string(w.dim(1)) +
                              " vs input " + std::to_string(ci));
    check(kh % 2 == 1 && kw % 2 == 1, "deform_conv2d: kernel must be odd for same padding");
    const int K = kh * kw;
    check(offsets.rank() == 4 && offsets.dim(0) == n && offsets.dim(1) == 2 * K &&
              offsets.dim(2) == h && offsets.dim(3) == wd,
          "deform_conv2d: offsets must be [N," + std::to_string(2 * K) + ",H,W], got " +
              shape_str(offsets.shape()));
    if (bias.defined())
        check(bias.rank() == 1 && bias.dim(0) == co, "deform_conv2d: bias must be [O]");
    const int pad_y = (kh - 1) / 2, pad_x = (kw - 1) / 2;

    const auto& xv = x.data();
    const auto& ov = offsets.data();
    const auto& wv = w.data();
    const int64_t plane = static_cast<int64_t>(h) * wd;
    const int64_t ck = static_cast<int64_t>(ci) * K;
    std::vector<T> out(static_cast<size_t>(n) * co * plane);

    parallel_for(static_cast<int64_t>(n) * plane, [&](int64_t lo, int64_t hi) {
        std::vector<detail::BilinearTaps<T>> taps(static_cast<size_t>(K));
        std::vector<T> v(static_cast<size_t>(ck));
        for (int64_t np = lo; np < hi; ++np) {
            const int ni = static_cast<int>(np / plane);
            const int64_t p = np % plane;
            const int y = static_cast<int>(p / wd);
            const int xo = static_cast<int>(p % wd);
            const T* obase = ov.data() + static_cast<int64_t>(ni) * 2 * K * plane + p;
            for (int k = 0; k < K; ++k) {
                const T dy = obase[static_cast<int64_t>(2 * k) * plane];
                const T dx = obase[static_cast<int64_t>(2 * k + 1) * plane];
                const T py = static_cast<T>(y - pad_y + k / kw) + dy;
                const T px = static_cast<T>(xo - pad_x + k % kw) + dx;
                taps[static_cast<size_t>(k)] = detail::bilinear_taps(py, px);
            }
            for (int c = 0; c < ci; ++c) {
                const T* xplane = xv.data() + (static_cast<int64_t>(ni) * ci + c) * plane;
                for (int k = 0; k < K; ++k)
                    v[static_cast<size_t>(c * K + k)] =
                        detail::bilinear_value(xplane, h, wd, taps[static_cast<size_t>(k)]);
            }
            for (int o = 0; o < co; ++o) {
                const T* wrow = wv.data() + static_cast<int64_t>(o) * ck;
                T acc = bias.defined() ? bias.data()[static_cast<size_t>(o)] : T(0);
                for (int64_t i = 0; i < ck; ++i) acc += wrow[i] * v[static_cast<size_t>(i)];
                out[(static_cast<int64_t>(ni) * co + o) * plane + p] = acc;
            }
        }
    });

    std::vector<Tensor<T>> inputs = {x, offsets, w};
    if (bias.defined()) inputs.push_back(bias);
    auto xn = x.node();
    auto on = offsets.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_op<T>(
        "deform_conv2d", {n, co, h, wd}, std::move(out), inputs,
        [xn, on, wn, bn, n, ci, h, wd, co, kh, kw, K, pad_y, pad_x, plane, ck](Node<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (on->requires_grad) on->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) bn->ensure_grad();
            std::vector<detail::BilinearTaps<T>> taps(static_cast<size_t>(K));
            std::vector<T> v(static_cast<size_t>(ck));
            std::vector<T> gv(static_cast<size_t>(ck));
            for (int ni = 0; ni < n; ++ni) {
                for (int64_t p = 0; p < plane; ++p) {
                    const int y = static_cast<int>(p / wd);
                    const int xo = static_cast<int>(p % wd);
                    const T* obase =
                        on->value.data() + static_cast<int64_t>(ni) * 2 * K * plane + p;
                    for (int k = 0; k < K; ++k) {
                        const T dy = obase[static_cast<int64_t>(2 * k) * plane];
                        const T dx = obase[static_cast<int64_t>(2 * k + 1) * plane];
                        const T py = static_cast<T>(y - pad_y + k / kw) + dy;
                        const T px = static_cast<T>(xo - pad_x + k % kw) + dx;
                        taps[static_cast<size_t>(k)] = detail::bilinear_taps(py, px);
                    }
                    for (int c = 0; c < ci; ++c) {
                        const T* xplane =
                            xn->value.data() + (static_cast<int64_t>(ni) * ci + c) * plane;
                        for (int k = 0; k < K; ++k)
                            v[static_cast<size_t>(c * K + k)] =
                                detail::bilinear_value(xplane, h, wd, taps[static_cast<size_t>(k)]);
                    }
                    if (bn && bn->requires_grad) {
                        for (int o = 0; o < co; ++o)
                            bn->grad[static_cast<size_t>(o)] +=
                                self.grad[(static_cast<int64_t>(ni) * co + o) * plane + p];
                    }
                    if (wn->requires_grad) {
                        for (int o = 0; o < co; ++o) {
                            const T g = self.grad[(static_cast<int64_t>(ni) * co + o) * plane + p];
                            T* wrow = wn->grad.data() + static_cast<int64_t>(o) * ck;
                            for (int64_t i = 0; i < ck; ++i)
                                wrow[i] += g * v[static_cast<size_t>(i)];
                        }
                    }
                    if (!xn->requires_grad && !on->requires_grad) continue;
                    // gv[c,k] = sum_o g[o] * w[o,c,k]: upstream gradient of each
                    // sampled value.
                    std::fill(gv.begin(), gv.end(), T(0));
                    for (int o = 0; o < co; ++o) {
                        const T g = self.grad[(static_cast<int64_t>(ni) * co + o) * plane + p];
                        const T* wrow = wn->value.data() + static_cast<int64_t>(o) * ck;
                        for (int64_t i = 0; i < ck; ++i) gv[static_cast<size_t>(i)] += g * wrow[i];
                    }
                    for (int c = 0; c < ci; ++c) {
                        const T* xplane =
                            xn->value.data() + (static_cast<int64_t>(ni) * ci + c) * plane;
                        T* xgplane = xn->requires_grad
                                         ? xn->grad.data() + (static_cast<int64_t>(ni) * ci + c) * plane
                                         : nullptr;
                        for (int k = 0; k < K; ++k) {
                            const T g = gv[static_cast<size_t>(c * K + k)];
                            const auto& t = taps[static_cast<size_t>(k)];
                            if (xgplane) {
                                detail::scatter_corner(xgplane, h, wd, t.iy0, t.ix0,
                                                       g * (T(1) - t.wy) * (T(1) - t.wx));
                                detail::scatter_corner(xgplane, h, wd, t.iy0, t.ix0 + 1,
                                                       g * (T(1) - t.wy) * t.wx);
                                detail::scatter_corner(xgplane, h, wd, t.iy0 + 1, t.ix0,
                                                       g * t.wy * (T(1) - t.wx));
                                detail::scatter_corner(xgplane, h, wd, t.iy0 + 1, t.ix0 + 1,
                                                       g * t.wy * t.wx);
                            }
                            if (on->requires_grad) {
                                T dvdy, dvdx;
                                detail::bilinear_coord_grads(xplane, h, wd, t, dvdy, dvdx);
                                T* ogbase =
                                    on->grad.data() + static_cast<int64_t>(ni) * 2 * K * plane + p;
                                ogbase[static_cast<int64_t>(2 * k) * plane] += g * dvdy;
                                ogbase[static_cast<int64_t>(2 * k + 1) * plane] += g * dvdx;
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& w) {
    return deform_conv2d(x, offsets, w, Tensor<T>());
}

}  // namespace dpt

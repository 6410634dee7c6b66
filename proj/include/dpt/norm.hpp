#pragma once

#include <cmath>

#include "dpt/ops.hpp"

namespace dpt {

// Row-wise layer normalization of [N,D] with per-feature affine parameters.
// Variance is the biased (1/D) estimate.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    check(x.rank() == 2, "layer_norm: input must be [N,D], got " + shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    check(gamma.rank() == 1 && gamma.dim(0) == d, "layer_norm: gamma must be [D]");
    check(beta.rank() == 1 && beta.dim(0) == d, "layer_norm: beta must be [D]");
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    std::vector<T> out(xv.size());
    std::vector<T> mean(static_cast<size_t>(n)), inv_std(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = xv.data() + static_cast<size_t>(i) * d;
        T mu = T(0);
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) {
            const T c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        mean[static_cast<size_t>(i)] = mu;
        inv_std[static_cast<size_t>(i)] = is;
        T* orow = out.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = gv[j] * ((row[j] - mu) * is) + bv[j];
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, n, d, mean = std::move(mean), inv_std = std::move(inv_std)](Node<T>& self) {
            std::vector<T> xhat(static_cast<size_t>(d));
            const bool need_x = xn->requires_grad;
            const bool need_g = gn->requires_grad;
            const bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* row = xn->value.data() + static_cast<size_t>(i) * d;
                const T* g = self.grad.data() + static_cast<size_t>(i) * d;
                const T mu = mean[static_cast<size_t>(i)];
                const T is = inv_std[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (row[j] - mu) * is;
                if (need_b)
                    for (int j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
                if (need_g)
                    for (int j = 0; j < d; ++j)
                        gn->grad[static_cast<size_t>(j)] += g[j] * xhat[static_cast<size_t>(j)];
                if (need_x) {
                    T s1 = T(0), s2 = T(0);
                    for (int j = 0; j < d; ++j) {
                        const T dxh = g[j] * gn->value[static_cast<size_t>(j)];
                        s1 += dxh;
                        s2 += dxh * xhat[static_cast<size_t>(j)];
                    }
                    s1 /= static_cast<T>(d);
                    s2 /= static_cast<T>(d);
                    T* xg = xn->grad.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) {
                        const T dxh = g[j] * gn->value[static_cast<size_t>(j)];
                        xg[j] += is * (dxh - s1 - xhat[static_cast<size_t>(j)] * s2);
                    }
                }
            }
        });
}

// Per-channel batch normalization of [N,C,H,W]. In training mode the batch
// statistics normalize (biased variance) and the running buffers are updated
// in place, with the unbiased variance entering running_var; training needs a
// batch of at least 2. In eval mode the running statistics normalize and
// nothing is mutated.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
    check(x.rank() == 4, "batch_norm2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check(gamma.rank() == 1 && gamma.dim(0) == c, "batch_norm2d: gamma must be [C]");
    check(beta.rank() == 1 && beta.dim(0) == c, "batch_norm2d: beta must be [C]");
    check(running_mean.size() == static_cast<size_t>(c) &&
              running_var.size() == static_cast<size_t>(c),
          "batch_norm2d: running stat size mismatch");
    check(!training || n >= 2, "batch_norm2d: training mode needs a batch of at least 2");

    const int64_t plane = static_cast<int64_t>(h) * w;
    const int64_t cnt = static_cast<int64_t>(n) * plane;
    const auto& xv = x.data();
    std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            T mu = T(0);
            for (int ni = 0; ni < n; ++ni) {
                const T* xp = xv.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) mu += xp[i];
            }
            mu /= static_cast<T>(cnt);
            T var = T(0);
            for (int ni = 0; ni < n; ++ni) {
                const T* xp = xv.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const T d = xp[i] - mu;
                    var += d * d;
                }
            }
            const T var_b = var / static_cast<T>(cnt);
            const T var_u = var / static_cast<T>(cnt - 1);
            mean[static_cast<size_t>(ch)] = mu;
            inv_std[static_cast<size_t>(ch)] = T(1) / std::sqrt(var_b + eps);
            running_mean[static_cast<size_t>(ch)] =
                (T(1) - momentum) * running_mean[static_cast<size_t>(ch)] + momentum * mu;
            running_var[static_cast<size_t>(ch)] =
                (T(1) - momentum) * running_var[static_cast<size_t>(ch)] + momentum * var_u;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = running_mean[static_cast<size_t>(ch)];
            inv_std[static_cast<size_t>(ch)] =
                T(1) / std::sqrt(running_var[static_cast<size_t>(ch)] + eps);
        }
    }

    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    std::vector<T> out(xv.size());
    for (int ni = 0; ni < n; ++ni)
        for (int ch = 0; ch < c; ++ch) {
            const T* xp = xv.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
            T* op = out.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
            const T mu = mean[static_cast<size_t>(ch)];
            const T is = inv_std[static_cast<size_t>(ch)];
            const T ga = gv[static_cast<size_t>(ch)], be = bv[static_cast<size_t>(ch)];
            for (int64_t i = 0; i < plane; ++i) op[i] = ga * ((xp[i] - mu) * is) + be;
        }

    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make_op<T>(
        "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, n, c, plane, cnt, training, mean = std::move(mean),
         inv_std = std::move(inv_std)](Node<T>& self) {
            const bool need_x = xn->requires_grad;
            const bool need_g = gn->requires_grad;
            const bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const T mu = mean[static_cast<size_t>(ch)];
                const T is = inv_std[static_cast<size_t>(ch)];
                const T ga = gn->value[static_cast<size_t>(ch)];
                T sum_g = T(0), sum_gx = T(0);
                for (int ni = 0; ni < n; ++ni) {
                    const T* g = self.grad.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                    const T* xp = xn->value.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_g += g[i];
                        sum_gx += g[i] * ((xp[i] - mu) * is);
                    }
                }
                if (need_b) bn->grad[static_cast<size_t>(ch)] += sum_g;
                if (need_g) gn->grad[static_cast<size_t>(ch)] += sum_gx;
                if (!need_x) continue;
                if (training) {
                    const T m1 = sum_g / static_cast<T>(cnt);
                    const T m2 = sum_gx / static_cast<T>(cnt);
                    for (int ni = 0; ni < n; ++ni) {
                        const T* g =
                            self.grad.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                        const T* xp =
                            xn->value.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                        T* xg = xn->grad.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const T xhat = (xp[i] - mu) * is;
                            xg[i] += ga * is * (g[i] - m1 - xhat * m2);
                        }
                    }
                } else {
                    const T k = ga * is;
                    for (int ni = 0; ni < n; ++ni) {
                        const T* g =
                            self.grad.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                        T* xg = xn->grad.data() + (static_cast<int64_t>(ni) * c + ch) * plane;
                        for (int64_t i = 0; i < plane; ++i) xg[i] += k * g[i];
                    }
                }
            }
        });
}

}  // namespace dpt

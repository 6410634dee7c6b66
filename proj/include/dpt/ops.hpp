#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpt/tensor.hpp"

namespace dpt {

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

// Elementwise unary op: f(x) forward, df(x, y) local derivative.
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, DF df) {
    const auto& xv = x.data();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    auto xn = x.node();
    return make_op<T>(name, x.shape(), std::move(out), {x}, [xn, df](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            xn->grad[i] += self.grad[i] * df(xn->value[i], self.value[i]);
        }
    });
}

// Elementwise binary op over equal shapes. da/db give the local derivatives
// as functions of (a_i, b_i, y_i).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
    check_same_shape(name, a, b);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(name, a.shape(), std::move(out), {a, b}, [an, bn, da, db](Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                an->grad[i] += self.grad[i] * da(an->value[i], bn->value[i], self.value[i]);
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                bn->grad[i] += self.grad[i] * db(an->value[i], bn->value[i], self.value[i]);
            }
        }
    });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

// Ties route the gradient to the first argument.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "minimum", a, b, [](T x, T y) { return x <= y ? x : y; },
        [](T x, T y, T) { return x <= y ? T(1) : T(0); },
        [](T x, T y, T) { return y < x ? T(1) : T(0); });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "maximum", a, b, [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T) { return x >= y ? T(1) : T(0); },
        [](T x, T y, T) { return y > x ? T(1) : T(0); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary_op<T>(
        "scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& x, T c) {
    return detail::unary_op<T>(
        "add_const", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    return detail::unary_op<T>(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "abs", x, [](T v) { return v < T(0) ? -v : v; },
        [](T v, T) { return v < T(0) ? T(-1) : (v > T(0) ? T(1) : T(0)); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

// Exact erf-based GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    return detail::unary_op<T>(
        "gelu", x,
        [](T v) { return v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2)); },
        [](T v, T) {
            T phi = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            return phi + v * pdf;
        });
}

// Multiply by a learnable scalar (shape [1]); gradients flow to both sides.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
    check(s.numel() == 1, "scale_by: coefficient must be a single scalar, got " +
                              shape_str(s.shape()));
    const T c = s.data()[0];
    const auto& xv = x.data();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
    auto xn = x.node();
    auto sn = s.node();
    return make_op<T>("scale_by", x.shape(), std::move(out), {x, s}, [xn, sn, c](Node<T>& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
        }
        if (sn->requires_grad) {
            sn->ensure_grad();
            T acc = T(0);
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->value[i];
            sn->grad[0] += acc;
        }
    });
}

// a[N,K] x b[K,M] -> [N,M]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands");
    check(a.dim(1) == b.dim(0), "matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<T> out(static_cast<size_t>(n) * m, T(0));
    for (int i = 0; i < n; ++i) {
        T* orow = out.data() + static_cast<size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const T aip = av[static_cast<size_t>(i) * k + p];
            const T* brow = bv.data() + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>("matmul", {n, m}, std::move(out), {a, b}, [an, bn, n, k, m](Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            // dA = g . B^T
            for (int i = 0; i < n; ++i) {
                const T* grow = self.grad.data() + static_cast<size_t>(i) * m;
                T* arow = an->grad.data() + static_cast<size_t>(i) * k;
                for (int p = 0; p < k; ++p) {
                    const T* brow = bn->value.data() + static_cast<size_t>(p) * m;
                    T acc = T(0);
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    arow[p] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = A^T . g
            for (int p = 0; p < k; ++p) {
                T* brow = bn->grad.data() + static_cast<size_t>(p) * m;
                for (int i = 0; i < n; ++i) {
                    const T apk = an->value[static_cast<size_t>(i) * k + p];
                    const T* grow = self.grad.data() + static_cast<size_t>(i) * m;
                    for (int j = 0; j < m; ++j) brow[j] += apk * grow[j];
                }
            }
        }
    });
}

// a[N,K] x b[M,K]^T -> [N,M]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul_nt expects rank-2 operands");
    check(a.dim(1) == b.dim(1), "matmul_nt: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
    const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<T> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
        const T* arow = av.data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < m; ++j) {
            const T* brow = bv.data() + static_cast<size_t>(j) * k;
            T acc = T(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out[static_cast<size_t>(i) * m + j] = acc;
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>("matmul_nt", {n, m}, std::move(out), {a, b},
                      [an, bn, n, k, m](Node<T>& self) {
                          if (an->requires_grad) {
                              an->ensure_grad();
                              // dA = g . B
                              for (int i = 0; i < n; ++i) {
                                  T* arow = an->grad.data() + static_cast<size_t>(i) * k;
                                  const T* grow = self.grad.data() + static_cast<size_t>(i) * m;
                                  for (int j = 0; j < m; ++j) {
                                      const T g = grow[j];
                                      const T* brow = bn->value.data() + static_cast<size_t>(j) * k;
                                      for (int p = 0; p < k; ++p) arow[p] += g * brow[p];
                                  }
                              }
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              // dB = g^T . A
                              for (int j = 0; j < m; ++j) {
                                  T* brow = bn->grad.data() + static_cast<size_t>(j) * k;
                                  for (int i = 0; i < n; ++i) {
                                      const T g = self.grad[static_cast<size_t>(i) * m + j];
                                      const T* arow = an->value.data() + static_cast<size_t>(i) * k;
                                      for (int p = 0; p < k; ++p) brow[p] += g * arow[p];
                                  }
                              }
                          }
                      });
}

// x[N,M] + bias[M] broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    check(x.rank() == 2 && bias.rank() == 1, "add_row_bias expects [N,M] plus [M]");
    check(x.dim(1) == bias.dim(0), "add_row_bias: feature dim " + std::to_string(x.dim(1)) +
                                       " vs bias " + std::to_string(bias.dim(0)));
    const int n = x.dim(0), m = x.dim(1);
    const auto& xv = x.data();
    const auto& bv = bias.data();
    std::vector<T> out(xv.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out[static_cast<size_t>(i) * m + j] = xv[static_cast<size_t>(i) * m + j] + bv[j];
    auto xn = x.node();
    auto bn = bias.node();
    return make_op<T>("add_row_bias", x.shape(), std::move(out), {x, bias},
                      [xn, bn, n, m](Node<T>& self) {
                          if (xn->requires_grad) {
                              xn->ensure_grad();
                              for (size_t i = 0; i < self.grad.size(); ++i)
                                  xn->grad[i] += self.grad[i];
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (int i = 0; i < n; ++i)
                                  for (int j = 0; j < m; ++j)
                                      bn->grad[j] += self.grad[static_cast<size_t>(i) * m + j];
                          }
                      });
}

// Row-wise softmax over the last dim of a rank-2 tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    check(x.rank() == 2, "softmax_rows expects rank 2, got " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    const auto& xv = x.data();
    std::vector<T> out(xv.size());
    for (int i = 0; i < n; ++i) {
        const T* row = xv.data() + static_cast<size_t>(i) * m;
        T* orow = out.data() + static_cast<size_t>(i) * m;
        T mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < m; ++j) orow[j] /= sum;
    }
    auto xn = x.node();
    return make_op<T>("softmax_rows", x.shape(), std::move(out), {x}, [xn, n, m](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T* s = self.value.data() + static_cast<size_t>(i) * m;
            const T* g = self.grad.data() + static_cast<size_t>(i) * m;
            T dot = T(0);
            for (int j = 0; j < m; ++j) dot += g[j] * s[j];
            T* xg = xn->grad.data() + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) xg[j] += s[j] * (g[j] - dot);
        }
    });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    auto xn = x.node();
    return make_op<T>("sum_all", {1}, {acc}, {x}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : xn->grad) v += g;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    check(x.numel() > 0, "mean_all of an empty tensor");
    T acc = T(0);
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    auto xn = x.node();
    return make_op<T>("mean_all", {1}, {acc * inv}, {x}, [xn, inv](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0] * inv;
        for (auto& v : xn->grad) v += g;
    });
}

// Picks one element by flat index; result has shape [1].
template <typename T>
Tensor<T> gather_at(const Tensor<T>& x, int64_t flat_index) {
    check(flat_index >= 0 && flat_index < x.numel(),
          "gather_at: index " + std::to_string(flat_index) + " out of range for " +
              shape_str(x.shape()));
    auto xn = x.node();
    return make_op<T>("gather_at", {1}, {x.data()[static_cast<size_t>(flat_index)]}, {x},
                      [xn, flat_index](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          xn->grad[static_cast<size_t>(flat_index)] += self.grad[0];
                      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    check(dpt::numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) +
                                              " as " + shape_str(shape));
    auto xn = x.node();
    return make_op<T>("reshape", std::move(shape), x.data(), {x}, [xn](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

namespace detail {

// Decomposes a shape around `axis` into (outer, extent, inner) strides for
// gather/scatter style ops.
inline void axis_split(const Shape& shape, int axis, int64_t& outer, int64_t& extent,
                       int64_t& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    extent = shape[static_cast<size_t>(axis)];
    inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    check(axis >= 0 && axis < x.rank(), "slice: axis out of range");
    check(start >= 0 && len > 0 && start + len <= x.dim(axis),
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") exceeds dim " + std::to_string(x.dim(axis)));
    int64_t outer, extent, inner;
    detail::axis_split(x.shape(), axis, outer, extent, inner);
    Shape oshape = x.shape();
    oshape[static_cast<size_t>(axis)] = len;
    std::vector<T> out(static_cast<size_t>(outer) * len * inner);
    const auto& xv = x.data();
    for (int64_t o = 0; o < outer; ++o) {
        const T* src = xv.data() + (o * extent + start) * inner;
        T* dst = out.data() + o * len * inner;
        std::copy(src, src + static_cast<size_t>(len) * inner, dst);
    }
    auto xn = x.node();
    return make_op<T>("slice", std::move(oshape), std::move(out), {x},
                      [xn, outer, extent, inner, start, len](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          for (int64_t o = 0; o < outer; ++o) {
                              T* dst = xn->grad.data() + (o * extent + start) * inner;
                              const T* src = self.grad.data() + o * len * inner;
                              for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                          }
                      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    check(!parts.empty(), "concat of zero tensors");
    const Shape& ref = parts[0].shape();
    check(axis >= 0 && axis < parts[0].rank(), "concat: axis out of range");
    int total = 0;
    for (const auto& p : parts) {
        check(p.rank() == parts[0].rank(), "concat: rank mismatch");
        for (int i = 0; i < p.rank(); ++i) {
            if (i != axis)
                check(p.dim(i) == ref[static_cast<size_t>(i)],
                      "concat: dim " + std::to_string(i) + " mismatch, " + shape_str(p.shape()) +
                          " vs " + shape_str(ref));
        }
        total += p.dim(axis);
    }
    Shape oshape = ref;
    oshape[static_cast<size_t>(axis)] = total;
    int64_t outer, extent, inner;
    detail::axis_split(oshape, axis, outer, extent, inner);
    std::vector<T> out(static_cast<size_t>(dpt::numel(oshape)));
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t ext = p.dim(axis);
        const auto& pv = p.data();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(pv.data() + o * ext * inner, pv.data() + (o + 1) * ext * inner,
                      out.data() + (o * extent + off) * inner);
        }
        off += ext;
    }
    std::vector<int64_t> extents;
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) {
        extents.push_back(p.dim(axis));
        nodes.push_back(p.node());
    }
    return make_op<T>("concat", std::move(oshape), std::move(out), parts,
                      [nodes, extents, outer, extent, inner](Node<T>& self) {
                          int64_t off = 0;
                          for (size_t k = 0; k < nodes.size(); ++k) {
                              const int64_t ext = extents[k];
                              if (nodes[k]->requires_grad) {
                                  nodes[k]->ensure_grad();
                                  for (int64_t o = 0; o < outer; ++o) {
                                      const T* src = self.grad.data() + (o * extent + off) * inner;
                                      T* dst = nodes[k]->grad.data() + o * ext * inner;
                                      for (int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
                                  }
                              }
                              off += ext;
                          }
                      });
}

// [C,h,w] feature map -> [h*w, C] token rows (row-major spatial order).
template <typename T>
Tensor<T> channels_to_tokens(const Tensor<T>& map) {
    check(map.rank() == 3, "channels_to_tokens expects [C,h,w], got " + shape_str(map.shape()));
    const int c = map.dim(0), h = map.dim(1), w = map.dim(2);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const auto& mv = map.data();
    std::vector<T> out(static_cast<size_t>(hw) * c);
    for (int ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) out[p * c + ch] = mv[static_cast<size_t>(ch) * hw + p];
    auto mn = map.node();
    return make_op<T>("channels_to_tokens", {static_cast<int>(hw), c}, std::move(out), {map},
                      [mn, c, hw](Node<T>& self) {
                          if (!mn->requires_grad) return;
                          mn->ensure_grad();
                          for (int ch = 0; ch < c; ++ch)
                              for (int64_t p = 0; p < hw; ++p)
                                  mn->grad[static_cast<size_t>(ch) * hw + p] +=
                                      self.grad[p * c + ch];
                      });
}

// [N=h*w, C] token rows -> [C,h,w] feature map.
template <typename T>
Tensor<T> tokens_to_channels(const Tensor<T>& tokens, int h, int w) {
    check(tokens.rank() == 2, "tokens_to_channels expects [N,C]");
    check(tokens.dim(0) == h * w, "tokens_to_channels: " + std::to_string(tokens.dim(0)) +
                                      " tokens cannot fill a " + std::to_string(h) + "x" +
                                      std::to_string(w) + " grid");
    const int c = tokens.dim(1);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const auto& tv = tokens.data();
    std::vector<T> out(static_cast<size_t>(hw) * c);
    for (int64_t p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch) out[static_cast<size_t>(ch) * hw + p] = tv[p * c + ch];
    auto tn = tokens.node();
    return make_op<T>("tokens_to_channels", {c, h, w}, std::move(out), {tokens},
                      [tn, c, hw](Node<T>& self) {
                          if (!tn->requires_grad) return;
                          tn->ensure_grad();
                          for (int64_t p = 0; p < hw; ++p)
                              for (int ch = 0; ch < c; ++ch)
                                  tn->grad[p * c + ch] +=
                                      self.grad[static_cast<size_t>(ch) * hw + p];
                      });
}

// Mean binary cross-entropy of probabilities against a constant target map.
// Logs are clamped away from 0 by eps; targets must lie in [0,1].
template <typename T>
Tensor<T> bce_mean(const Tensor<T>& p, const std::vector<T>& target) {
    check(static_cast<int64_t>(target.size()) == p.numel(),
          "bce_mean: target size does not match prediction " + shape_str(p.shape()));
    constexpr T eps = T(1e-12);
    const auto& pv = p.data();
    T acc = T(0);
    for (size_t i = 0; i < pv.size(); ++i) {
        acc -= target[i] * std::log(pv[i] + eps) + (T(1) - target[i]) * std::log(T(1) - pv[i] + eps);
    }
    const T inv = T(1) / static_cast<T>(pv.size());
    auto pn = p.node();
    return make_op<T>("bce_mean", {1}, {acc * inv}, {p}, [pn, target, inv](Node<T>& self) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        const T g = self.grad[0] * inv;
        for (size_t i = 0; i < pn->value.size(); ++i) {
            const T pi = pn->value[i];
            pn->grad[i] += g * (-target[i] / (pi + eps) + (T(1) - target[i]) / (T(1) - pi + eps));
        }
    });
}

}  // namespace dpt

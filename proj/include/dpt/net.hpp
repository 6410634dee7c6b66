#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dpt/conv.hpp"
#include "dpt/norm.hpp"
#include "dpt/ops.hpp"
#include "dpt/rng.hpp"

namespace dpt {

// Named registry of trainable tensors, in registration order. Order matters:
// the optimizer walks it, so registration must be deterministic.
template <typename T>
struct ParamSet {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) {
        check(t.defined(), "ParamSet: undefined tensor for " + name);
        check(t.requires_grad(), "ParamSet: " + name + " does not require grad");
        for (const auto& [n, _] : items) check(n != name, "ParamSet: duplicate name " + name);
        items.emplace_back(name, t);
    }

    void merge(const std::string& prefix, const ParamSet<T>& other) {
        for (const auto& [n, t] : other.items) add(prefix + "." + n, t);
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [_, t] : items) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : items) t.zero_grad();
    }
};

// Fully connected layer; weight is [in,out] so the forward pass is x.W + b
// over token rows.
template <typename T>
struct Linear {
    Tensor<T> w, b;
};

template <typename T>
Linear<T> make_linear(int in, int out, Rng& rng, T wstd = T(0.02)) {
    return {Tensor<T>::randn({in, out}, rng, wstd, true), Tensor<T>::zeros({out}, true)};
}

template <typename T>
Tensor<T> linear_forward(const Linear<T>& l, const Tensor<T>& x) {
    return add_row_bias(matmul(x, l.w), l.b);
}

template <typename T>
void register_linear(ParamSet<T>& ps, const std::string& name, const Linear<T>& l) {
    ps.add(name + ".w", l.w);
    ps.add(name + ".b", l.b);
}

// Two-layer MLP with exact-erf GELU in between.
template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;
};

template <typename T>
Mlp<T> make_mlp(int in, int hidden, int out, Rng& rng, T wstd = T(0.02)) {
    return {make_linear<T>(in, hidden, rng, wstd), make_linear<T>(hidden, out, rng, wstd)};
}

template <typename T>
Tensor<T> mlp_forward(const Mlp<T>& m, const Tensor<T>& x) {
    return linear_forward(m.fc2, gelu(linear_forward(m.fc1, x)));
}

template <typename T>
void register_mlp(ParamSet<T>& ps, const std::string& name, const Mlp<T>& m) {
    register_linear(ps, name + ".fc1", m.fc1);
    register_linear(ps, name + ".fc2", m.fc2);
}

// Standard multi-head self-attention over token rows [N,D].
template <typename T>
struct Attention {
    Linear<T> q, k, v, o;
    int heads = 1;
};

template <typename T>
Attention<T> make_attention(int dim, int heads, Rng& rng, T wstd = T(0.02)) {
    check(dim % heads == 0, "attention: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
    return {make_linear<T>(dim, dim, rng, wstd), make_linear<T>(dim, dim, rng, wstd),
            make_linear<T>(dim, dim, rng, wstd), make_linear<T>(dim, dim, rng, wstd), heads};
}

template <typename T>
Tensor<T> multi_head_attention(const Attention<T>& a, const Tensor<T>& x) {
    check(x.rank() == 2, "multi_head_attention: input must be [N,D]");
    const int d = x.dim(1);
    check(d == a.q.w.dim(0), "multi_head_attention: token width " + std::to_string(d) +
                                 " vs projection " + std::to_string(a.q.w.dim(0)));
    const int dh = d / a.heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> q = linear_forward(a.q, x);
    Tensor<T> k = linear_forward(a.k, x);
    Tensor<T> v = linear_forward(a.v, x);
    std::vector<Tensor<T>> heads_out;
    heads_out.reserve(static_cast<size_t>(a.heads));
    for (int hd = 0; hd < a.heads; ++hd) {
        Tensor<T> qh = slice(q, 1, hd * dh, dh);
        Tensor<T> kh = slice(k, 1, hd * dh, dh);
        Tensor<T> vh = slice(v, 1, hd * dh, dh);
        Tensor<T> attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh));
        heads_out.push_back(matmul(attn, vh));
    }
    return linear_forward(a.o, concat(heads_out, 1));
}

template <typename T>
void register_attention(ParamSet<T>& ps, const std::string& name, const Attention<T>& a) {
    register_linear(ps, name + ".q", a.q);
    register_linear(ps, name + ".k", a.k);
    register_linear(ps, name + ".v", a.v);
    register_linear(ps, name + ".o", a.o);
}

// Affine layer-norm parameter pair, initialized to identity.
template <typename T>
struct Norm {
    Tensor<T> gamma, beta;
};

template <typename T>
Norm<T> make_norm(int dim) {
    return {Tensor<T>::filled({dim}, T(1), true), Tensor<T>::zeros({dim}, true)};
}

template <typename T>
Tensor<T> norm_forward(const Norm<T>& nrm, const Tensor<T>& x, T eps = T(1e-5)) {
    return layer_norm(x, nrm.gamma, nrm.beta, eps);
}

template <typename T>
void register_norm(ParamSet<T>& ps, const std::string& name, const Norm<T>& nrm) {
    ps.add(name + ".gamma", nrm.gamma);
    ps.add(name + ".beta", nrm.beta);
}

// Convolution layer bundle (weight [O,C/g,kh,kw] + bias [O]).
template <typename T>
struct Conv {
    Tensor<T> w, b;
    int stride = 1, pad = 0, groups = 1;
};

// He-style fan-in init for conv weights.
template <typename T>
Conv<T> make_conv(int in, int out, int k, int stride, int pad, Rng& rng, int groups = 1) {
    const int fan_in = (in / groups) * k * k;
    const T std = std::sqrt(T(2) / static_cast<T>(fan_in));
    return {Tensor<T>::randn({out, in / groups, k, k}, rng, std, true),
            Tensor<T>::zeros({out}, true), stride, pad, groups};
}

template <typename T>
Tensor<T> conv_forward(const Conv<T>& c, const Tensor<T>& x) {
    return conv2d(x, c.w, c.b, c.stride, c.pad, c.groups);
}

template <typename T>
void register_conv(ParamSet<T>& ps, const std::string& name, const Conv<T>& c) {
    ps.add(name + ".w", c.w);
    ps.add(name + ".b", c.b);
}

}  // namespace dpt

#pragma once

#include <string>
#include <utility>

#include "dpt/net.hpp"
#include "dpt/prompters.hpp"

namespace dpt {

// Prompt-feature interaction unit. Encodes the similarity (F+P) and
// difference (F-P) views of a feature/prompt token pair, then mixes them back
// with four learnable scalar coefficients: features absorb the prompt
// (+alpha_f, -beta_f) while the prompt sheds what the features explain
// (-alpha_p, +beta_p).
template <typename T>
struct PfiModule {
    Mlp<T> mlp_sim, mlp_dif;  // alias the same tensors when shared_mlps is set
    Norm<T> ln_sim, ln_dif;
    Tensor<T> alpha_f, beta_f, alpha_p, beta_p;
    bool shared_mlps = false;
};

template <typename T>
PfiModule<T> make_pfi(int dim, Rng& rng, bool share_mlps = false) {
    PfiModule<T> pfi;
    pfi.mlp_sim = make_mlp<T>(dim, dim, dim, rng);
    pfi.mlp_dif = share_mlps ? pfi.mlp_sim : make_mlp<T>(dim, dim, dim, rng);
    pfi.ln_sim = make_norm<T>(dim);
    pfi.ln_dif = make_norm<T>(dim);
    pfi.alpha_f = Tensor<T>::filled({1}, T(0.1), true);
    pfi.beta_f = Tensor<T>::filled({1}, T(0.1), true);
    pfi.alpha_p = Tensor<T>::filled({1}, T(0.1), true);
    pfi.beta_p = Tensor<T>::filled({1}, T(0.1), true);
    pfi.shared_mlps = share_mlps;
    return pfi;
}

template <typename T>
void register_pfi(ParamSet<T>& ps, const std::string& name, const PfiModule<T>& pfi) {
    register_mlp(ps, name + ".mlp_sim", pfi.mlp_sim);
    // a shared difference MLP would double-step if registered twice
    if (!pfi.shared_mlps) register_mlp(ps, name + ".mlp_dif", pfi.mlp_dif);
    register_norm(ps, name + ".ln_sim", pfi.ln_sim);
    register_norm(ps, name + ".ln_dif", pfi.ln_dif);
    ps.add(name + ".alpha_f", pfi.alpha_f);
    ps.add(name + ".beta_f", pfi.beta_f);
    ps.add(name + ".alpha_p", pfi.alpha_p);
    ps.add(name + ".beta_p", pfi.beta_p);
}

// e_sim = LN(MLP(F+P)), e_dif = LN(MLP(F-P)).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> pfi_encode(const PfiModule<T>& pfi, const Tensor<T>& features,
                                           const Tensor<T>& prompt) {
    check(features.shape() == prompt.shape(),
          "pfi_encode: features " + shape_str(features.shape()) + " vs prompt " +
              shape_str(prompt.shape()));
    return {norm_forward(pfi.ln_sim, mlp_forward(pfi.mlp_sim, add(features, prompt))),
            norm_forward(pfi.ln_dif, mlp_forward(pfi.mlp_dif, sub(features, prompt)))};
}

// F' = F + alpha_f * e_sim - beta_f * e_dif. When both coefficients hold an
// exact zero the interaction is inert and F passes through untouched -- same
// bits, no graph growth. Training starts the coefficients at 0.1, so the
// degenerate point is only reached deliberately (ablations, baselines).
template <typename T>
Tensor<T> pfi_adapt_features(const PfiModule<T>& pfi, const Tensor<T>& features,
                             const Tensor<T>& e_sim, const Tensor<T>& e_dif) {
    if (pfi.alpha_f.data()[0] == T(0) && pfi.beta_f.data()[0] == T(0)) return features;
    return sub(add(features, scale_by(e_sim, pfi.alpha_f)), scale_by(e_dif, pfi.beta_f));
}

// P' = P - alpha_p * e_sim + beta_p * e_dif; the stream's block counter
// advances either way.
template <typename T>
PromptTokens<T> pfi_evolve_prompt(const PfiModule<T>& pfi, const PromptTokens<T>& prompt,
                                  const Tensor<T>& e_sim, const Tensor<T>& e_dif) {
    PromptTokens<T> out = prompt;
    out.block_index = prompt.block_index + 1;
    if (pfi.alpha_p.data()[0] == T(0) && pfi.beta_p.data()[0] == T(0)) return out;
    out.tokens = add(sub(prompt.tokens, scale_by(e_sim, pfi.alpha_p)),
                     scale_by(e_dif, pfi.beta_p));
    return out;
}

// Pre-norm encoder block with two interaction points: the illumination
// prompt engages right after attention, the viewpoint prompt after the FFN.
template <typename T>
struct DpBlock {
    Norm<T> ln1, ln2;
    Attention<T> attn;
    Mlp<T> ffn;
    PfiModule<T> pfi_illu, pfi_view;
};

template <typename T>
DpBlock<T> make_dp_block(int dim, int heads, Rng& rng, bool share_pfi_mlps = false) {
    DpBlock<T> b;
    b.ln1 = make_norm<T>(dim);
    b.attn = make_attention<T>(dim, heads, rng);
    b.ln2 = make_norm<T>(dim);
    b.ffn = make_mlp<T>(dim, 4 * dim, dim, rng);
    b.pfi_illu = make_pfi<T>(dim, rng, share_pfi_mlps);
    b.pfi_view = make_pfi<T>(dim, rng, share_pfi_mlps);
    return b;
}

template <typename T>
void register_dp_block(ParamSet<T>& ps, const std::string& name, const DpBlock<T>& b) {
    register_norm(ps, name + ".ln1", b.ln1);
    register_attention(ps, name + ".attn", b.attn);
    register_norm(ps, name + ".ln2", b.ln2);
    register_mlp(ps, name + ".ffn", b.ffn);
    register_pfi(ps, name + ".pfi_illu", b.pfi_illu);
    register_pfi(ps, name + ".pfi_view", b.pfi_view);
}

// The prompt-free reference path: x = F + Attn(LN1(F)); x = x + FFN(LN2(x)).
// dpblock_forward runs these exact ops in this exact order, so zeroed
// interaction coefficients reduce it to this function bit-for-bit.
template <typename T>
Tensor<T> encoder_block_forward(const DpBlock<T>& b, const Tensor<T>& features) {
    Tensor<T> x = add(features, multi_head_attention(b.attn, norm_forward(b.ln1, features)));
    return add(x, mlp_forward(b.ffn, norm_forward(b.ln2, x)));
}

template <typename T>
struct DpBlockOut {
    Tensor<T> features;
    PromptTokens<T> illu, view;
};

template <typename T>
DpBlockOut<T> dpblock_forward(const DpBlock<T>& b, const Tensor<T>& features,
                              const PromptTokens<T>& illu, const PromptTokens<T>& view) {
    Tensor<T> x = add(features, multi_head_attention(b.attn, norm_forward(b.ln1, features)));
    auto [ei_sim, ei_dif] = pfi_encode(b.pfi_illu, x, illu.tokens);
    DpBlockOut<T> out;
    out.illu = pfi_evolve_prompt(b.pfi_illu, illu, ei_sim, ei_dif);
    x = pfi_adapt_features(b.pfi_illu, x, ei_sim, ei_dif);
    x = add(x, mlp_forward(b.ffn, norm_forward(b.ln2, x)));
    auto [ev_sim, ev_dif] = pfi_encode(b.pfi_view, x, view.tokens);
    out.view = pfi_evolve_prompt(b.pfi_view, view, ev_sim, ev_dif);
    out.features = pfi_adapt_features(b.pfi_view, x, ev_sim, ev_dif);
    return out;
}

// Zeroes every interaction coefficient in place; raw() resets the scalar
// leaves without touching graph history.
template <typename T>
void zero_interaction_coefficients(DpBlock<T>& b) {
    for (auto* pfi : {&b.pfi_illu, &b.pfi_view}) {
        pfi->alpha_f.raw()[0] = T(0);
        pfi->beta_f.raw()[0] = T(0);
        pfi->alpha_p.raw()[0] = T(0);
        pfi->beta_p.raw()[0] = T(0);
    }
}

}  // namespace dpt

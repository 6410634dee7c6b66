#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dpt/net.hpp"
#include "dpt/sampling.hpp"

namespace dpt {

enum class PromptKind { illu, view };

// One prompt token stream [N,d]; block_index tracks how many interaction
// units have evolved it.
template <typename T>
struct PromptTokens {
    Tensor<T> tokens;
    PromptKind kind = PromptKind::illu;
    int block_index = 0;
};

// Gaussian sequence G_0..G_n plus band residuals L_0..L_{n-1};
// L_i = G_i - UP_i(G_{i+1}), so each Gaussian level is recoverable from the
// residual and the upsampled coarser level.
template <typename T>
struct PyramidLevels {
    std::vector<Tensor<T>> gaussians;
    std::vector<Tensor<T>> laplacians;
    int n_levels = 0;
};

// Per-channel batch normalization bundle; running stats are plain buffers
// mutated by training-mode forwards.
template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
BatchNorm2d<T> make_batch_norm2d(int channels) {
    return {Tensor<T>::filled({channels}, T(1), true), Tensor<T>::zeros({channels}, true),
            std::vector<T>(static_cast<size_t>(channels), T(0)),
            std::vector<T>(static_cast<size_t>(channels), T(1))};
}

template <typename T>
Tensor<T> bn_forward(BatchNorm2d<T>& bn, const Tensor<T>& x, bool training) {
    return batch_norm2d(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, training);
}

template <typename T>
void register_batch_norm(ParamSet<T>& ps, const std::string& name, const BatchNorm2d<T>& bn) {
    ps.add(name + ".gamma", bn.gamma);
    ps.add(name + ".beta", bn.beta);
}

// Pyramid-of-residuals prompter. Per level: a learnable depthwise blur that
// halves resolution (DBK, k=5 s=2 on a replicate-padded input), a learnable
// transposed-conv upsampler (UP, k=4 s=2), and a strided projection conv
// that maps the residual onto the token grid.
template <typename T>
struct IllumPrompter {
    std::vector<Tensor<T>> blur_w;  // DBK_i, depthwise [C,1,5,5], no bias
    std::vector<Tensor<T>> up_w;    // UP_i, [C,C,4,4], no bias
    std::vector<Conv<T>> level_convs;
    int n_levels = 0;
    int channels = 0;
    int patch_size = 0;
    int level_width = 0;
};

namespace detail {

// 5-tap Gaussian, sigma 1.0, normalized to sum 1.
template <typename T>
std::array<T, 5> gauss5() {
    std::array<T, 5> k;
    T sum = T(0);
    for (int i = 0; i < 5; ++i) {
        const T d = static_cast<T>(i - 2);
        k[static_cast<size_t>(i)] = std::exp(-d * d / T(2));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

}  // namespace detail

// Depthwise 5x5 blur weights at the Gaussian starting point; each channel's
// kernel sums to 1.
template <typename T>
Tensor<T> gaussian_blur_weights(int channels) {
    const auto k = detail::gauss5<T>();
    std::vector<T> w(static_cast<size_t>(channels) * 25);
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                w[(static_cast<size_t>(c) * 5 + i) * 5 + j] =
                    k[static_cast<size_t>(i)] * k[static_cast<size_t>(j)];
    return Tensor<T>::from_data({channels, 1, 5, 5}, std::move(w), true);
}

// Transposed-conv weights that reproduce bilinear 2x upsampling (edge-clamped,
// half-pixel-aligned) when applied with stride 2, pad 3 on a replicate-padded
// input. Channels map diagonally.
template <typename T>
Tensor<T> bilinear_up_weights(int channels) {
    const T u[4] = {T(0.25), T(0.75), T(0.75), T(0.25)};
    std::vector<T> w(static_cast<size_t>(channels) * channels * 16, T(0));
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                w[((static_cast<size_t>(c) * channels + c) * 4 + i) * 4 + j] = u[i] * u[j];
    return Tensor<T>::from_data({channels, channels, 4, 4}, std::move(w), true);
}

template <typename T>
IllumPrompter<T> make_illum_prompter(int channels, int patch_size, int n_levels, int level_width,
                                     Rng& rng) {
    check(n_levels >= 1, "illum prompter needs at least one level");
    check(patch_size % (1 << (n_levels - 1)) == 0,
          "patch size " + std::to_string(patch_size) + " not divisible by 2^" +
              std::to_string(n_levels - 1) + "; level convs cannot share a grid");
    IllumPrompter<T> pr;
    pr.n_levels = n_levels;
    pr.channels = channels;
    pr.patch_size = patch_size;
    pr.level_width = level_width;
    for (int i = 0; i < n_levels; ++i) {
        pr.blur_w.push_back(gaussian_blur_weights<T>(channels));
        pr.up_w.push_back(bilinear_up_weights<T>(channels));
        const int s = patch_size >> i;
        pr.level_convs.push_back(make_conv<T>(channels, level_width, s, s, 0, rng));
    }
    return pr;
}

template <typename T>
void register_illum_prompter(ParamSet<T>& ps, const std::string& name,
                             const IllumPrompter<T>& pr) {
    for (int i = 0; i < pr.n_levels; ++i) {
        const std::string lvl = name + ".level" + std::to_string(i);
        ps.add(lvl + ".blur_w", pr.blur_w[static_cast<size_t>(i)]);
        ps.add(lvl + ".up_w", pr.up_w[static_cast<size_t>(i)]);
        register_conv(ps, lvl + ".conv", pr.level_convs[static_cast<size_t>(i)]);
    }
}

namespace detail {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& image) {
    if (image.rank() == 4) return image;
    check(image.rank() == 3, "expected [C,H,W] or [N,C,H,W], got " + shape_str(image.shape()));
    return reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
}

template <typename T>
Tensor<T> match_rank(const Tensor<T>& out, const Tensor<T>& like) {
    if (like.rank() == 4) return out;
    return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
}

}  // namespace detail

// G_{i+1} = DBK_i(G_i): replicate-pad by 2, then depthwise 5x5 stride-2 conv.
// Replicate padding keeps a normalized kernel mass-preserving at borders, so
// constant images stay constant through the pyramid.
template <typename T>
Tensor<T> blur_downsample(const IllumPrompter<T>& pr, int level, const Tensor<T>& g) {
    return conv2d(pad2d_replicate(g, 2), pr.blur_w[static_cast<size_t>(level)], 2, 0,
                  pr.channels);
}

// UP_i: replicate-pad by 1, transposed conv k=4 s=2 p=3. Doubles H and W and
// preserves constants at the borders; at init this is exactly bilinear 2x.
template <typename T>
Tensor<T> upsample(const IllumPrompter<T>& pr, int level, const Tensor<T>& g) {
    return conv_transpose2d(pad2d_replicate(g, 1), pr.up_w[static_cast<size_t>(level)], 2, 3);
}

template <typename T>
std::vector<Tensor<T>> build_gaussian_levels(const IllumPrompter<T>& pr, const Tensor<T>& image) {
    Tensor<T> g = detail::as_batch(image);
    const int div = 1 << pr.n_levels;
    check(g.dim(2) % div == 0 && g.dim(3) % div == 0,
          "image size " + std::to_string(g.dim(2)) + "x" + std::to_string(g.dim(3)) +
              " not divisible by 2^" + std::to_string(pr.n_levels));
    check(g.dim(1) == pr.channels, "image channels do not match the prompter");
    std::vector<Tensor<T>> out;
    out.push_back(detail::match_rank(g, image));
    for (int i = 0; i < pr.n_levels; ++i) {
        g = blur_downsample(pr, i, g);
        out.push_back(detail::match_rank(g, image));
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> build_laplacian_levels(const IllumPrompter<T>& pr,
                                              const std::vector<Tensor<T>>& gaussians) {
    check(static_cast<int>(gaussians.size()) == pr.n_levels + 1,
          "expected " + std::to_string(pr.n_levels + 1) + " gaussian levels, got " +
              std::to_string(gaussians.size()));
    std::vector<Tensor<T>> out;
    for (int i = 0; i < pr.n_levels; ++i) {
        const Tensor<T>& gi = gaussians[static_cast<size_t>(i)];
        Tensor<T> up = detail::match_rank(
            upsample(pr, i, detail::as_batch(gaussians[static_cast<size_t>(i + 1)])), gi);
        out.push_back(sub(gi, up));
    }
    return out;
}

template <typename T>
PyramidLevels<T> build_pyramid(const IllumPrompter<T>& pr, const Tensor<T>& image) {
    PyramidLevels<T> p;
    p.gaussians = build_gaussian_levels(pr, image);
    p.laplacians = build_laplacian_levels(pr, p.gaussians);
    p.n_levels = pr.n_levels;
    return p;
}

// Illumination prompt map: every residual level is projected onto the common
// (H/ps, W/ps) grid by its level conv (stride ps/2^i) and the level responses
// are concatenated channel-wise.
template <typename T>
Tensor<T> illum_prompt(const IllumPrompter<T>& pr, const Tensor<T>& image) {
    PyramidLevels<T> pyr = build_pyramid(pr, detail::as_batch(image));
    std::vector<Tensor<T>> maps;
    for (int i = 0; i < pr.n_levels; ++i)
        maps.push_back(
            conv_forward(pr.level_convs[static_cast<size_t>(i)], pyr.laplacians[static_cast<size_t>(i)]));
    return detail::match_rank(concat(maps, 1), image);
}

// Offset-driven prompter: a plain conv+BN+LeakyReLU stem, per-pixel offset
// prediction, deformable 3x3 aggregation, BN+LeakyReLU, then a stride-ps
// projection onto the token grid.
template <typename T>
struct ViewPrompter {
    Conv<T> coarse_conv;
    BatchNorm2d<T> coarse_bn;
    Conv<T> offset_conv;  // produces 2K channels, zero-initialized
    Tensor<T> deform_w, deform_b;
    BatchNorm2d<T> out_bn;
    Conv<T> resample_conv;
    T leaky_slope = T(0.1);
};

template <typename T>
ViewPrompter<T> make_view_prompter(int channels, int coarse_width, int deform_width,
                                   int view_width, int patch_size, Rng& rng) {
    ViewPrompter<T> vp;
    vp.coarse_conv = make_conv<T>(channels, coarse_width, 3, 1, 1, rng);
    vp.coarse_bn = make_batch_norm2d<T>(coarse_width);
    vp.offset_conv = {Tensor<T>::zeros({18, coarse_width, 3, 3}, true),
                      Tensor<T>::zeros({18}, true), 1, 1, 1};
    const T wstd = std::sqrt(T(2) / static_cast<T>(coarse_width * 9));
    vp.deform_w = Tensor<T>::randn({deform_width, coarse_width, 3, 3}, rng, wstd, true);
    vp.deform_b = Tensor<T>::zeros({deform_width}, true);
    vp.out_bn = make_batch_norm2d<T>(deform_width);
    vp.resample_conv = make_conv<T>(deform_width, view_width, patch_size, patch_size, 0, rng);
    return vp;
}

template <typename T>
void register_view_prompter(ParamSet<T>& ps, const std::string& name, const ViewPrompter<T>& vp) {
    register_conv(ps, name + ".coarse_conv", vp.coarse_conv);
    register_batch_norm(ps, name + ".coarse_bn", vp.coarse_bn);
    register_conv(ps, name + ".offset_conv", vp.offset_conv);
    ps.add(name + ".deform_w", vp.deform_w);
    ps.add(name + ".deform_b", vp.deform_b);
    register_batch_norm(ps, name + ".out_bn", vp.out_bn);
    register_conv(ps, name + ".resample_conv", vp.resample_conv);
}

// Spec'd order of the offset field produced here: for tap k (row-major over
// the 3x3 kernel), channel 2k is the y displacement, channel 2k+1 the x.
template <typename T>
Tensor<T> coarse_view(ViewPrompter<T>& vp, const Tensor<T>& image, bool training) {
    Tensor<T> x = conv_forward(vp.coarse_conv, detail::as_batch(image));
    return detail::match_rank(leaky_relu(bn_forward(vp.coarse_bn, x, training), vp.leaky_slope),
                              image);
}

template <typename T>
Tensor<T> predict_offsets(const ViewPrompter<T>& vp, const Tensor<T>& coarse) {
    return detail::match_rank(conv_forward(vp.offset_conv, detail::as_batch(coarse)), coarse);
}

// Alias keeping the operation under its own name; samples the coarse map at
// offset-displaced tap positions.
template <typename T>
Tensor<T> deform_conv(const Tensor<T>& coarse, const Tensor<T>& offsets, const Tensor<T>& w,
                      const Tensor<T>& bias) {
    return deform_conv2d(coarse, offsets, w, bias);
}

template <typename T>
Tensor<T> view_prompt(ViewPrompter<T>& vp, const Tensor<T>& image, bool training) {
    Tensor<T> coarse = detail::as_batch(coarse_view(vp, detail::as_batch(image), training));
    Tensor<T> offsets = predict_offsets(vp, coarse);
    Tensor<T> d = deform_conv2d(coarse, offsets, vp.deform_w, vp.deform_b);
    d = leaky_relu(bn_forward(vp.out_bn, d, training), vp.leaky_slope);
    return detail::match_rank(conv_forward(vp.resample_conv, d), image);
}

// Flattens a [C',h,w] prompt map to h*w token rows (row-major, matching the
// backbone's patch order) and projects C' -> d.
template <typename T>
PromptTokens<T> tokenize_prompt(const Tensor<T>& map, const Linear<T>& proj, PromptKind kind) {
    check(map.rank() == 3, "tokenize_prompt expects a [C,h,w] map, got " + shape_str(map.shape()));
    check(map.dim(0) == proj.w.dim(0), "prompt map width " + std::to_string(map.dim(0)) +
                                           " does not match projection input " +
                                           std::to_string(proj.w.dim(0)));
    return {linear_forward(proj, channels_to_tokens(map)), kind, 0};
}

}  // namespace dpt

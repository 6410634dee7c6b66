#pragma once

#include <string>
#include <vector>

#include "dpt/gradcheck.hpp"
#include "dpt/tracker.hpp"

namespace dpt {

// Named double-precision finite-difference suites, shared between the CLI
// `gradcheck` command and the acceptance gate. Every entry carries its own
// tolerance so a caller only needs the pass flag.
struct VerifyCheck {
    std::string name;
    GradCheckReport report;
    double h = 0;
    double tol = 0;
    bool pass = false;
};

namespace detail {

template <typename F>
void run_check(std::vector<VerifyCheck>& out, const std::string& name, F f,
               std::vector<std::pair<std::string, Tensor<double>>> params, Rng& rng,
               double h = 1e-4, double tol = 1e-5, int max_coords = -1) {
    VerifyCheck c;
    c.name = name;
    c.h = h;
    c.tol = tol;
    c.report = gradcheck<double>(f, std::move(params), rng, max_coords, h);
    c.pass = c.report.ok(tol);
    out.push_back(std::move(c));
}

inline Tensor<double> away_from_zero(Shape shape, Rng& rng) {
    Tensor<double> t = Tensor<double>::randn(shape, rng, 1.0, true);
    for (auto& v : t.raw())
        if (std::abs(v) < 0.15) v += (v < 0 ? -0.3 : 0.3);
    return t;
}

}  // namespace detail

// One check per differentiable op, inputs positioned away from kinks
// (relu/abs/min/max ties, bilinear integer offsets).
inline std::vector<VerifyCheck> verify_ops() {
    using TensorD = Tensor<double>;
    std::vector<VerifyCheck> out;
    Rng rng(20240501);
    auto run = [&](const std::string& name, auto f,
                   std::vector<std::pair<std::string, TensorD>> params) {
        detail::run_check(out, name, f, std::move(params), rng);
    };

    {
        TensorD a = detail::away_from_zero({3, 4}, rng);
        TensorD b = detail::away_from_zero({3, 4}, rng);
        for (size_t i = 0; i < b.raw().size(); ++i)
            if (std::abs(a.data()[i] - b.raw()[i]) < 0.1) b.raw()[i] += 0.25;
        run("add", [&] { return mean_all(add(a, b)); }, {{"a", a}, {"b", b}});
        run("sub", [&] { return mean_all(sub(a, b)); }, {{"a", a}, {"b", b}});
        run("mul", [&] { return mean_all(mul(a, b)); }, {{"a", a}, {"b", b}});
        run("div", [&] { return mean_all(div(a, b)); }, {{"a", a}, {"b", b}});
        run("minimum", [&] { return mean_all(minimum(a, b)); }, {{"a", a}, {"b", b}});
        run("maximum", [&] { return mean_all(maximum(a, b)); }, {{"a", a}, {"b", b}});
    }
    {
        TensorD x = detail::away_from_zero({4, 5}, rng);
        run("neg_scale", [&] { return mean_all(neg(scale(x, 1.7))); }, {{"x", x}});
        run("add_const", [&] { return mean_all(add_const(x, 0.3)); }, {{"x", x}});
        run("relu", [&] { return mean_all(relu(x)); }, {{"x", x}});
        run("leaky_relu", [&] { return mean_all(leaky_relu(x, 0.1)); }, {{"x", x}});
        run("abs", [&] { return mean_all(abs(x)); }, {{"x", x}});
        run("sigmoid", [&] { return mean_all(sigmoid(x)); }, {{"x", x}});
        run("gelu", [&] { return mean_all(gelu(x)); }, {{"x", x}});
        TensorD pos = TensorD::uniform({3, 3}, rng, 0.5, 2.0, true);
        run("log", [&] { return mean_all(log(pos)); }, {{"pos", pos}});
        TensorD s = TensorD::scalar(0.7, true);
        run("scale_by", [&] { return mean_all(scale_by(x, s)); }, {{"x", x}, {"s", s}});
    }
    {
        TensorD a = TensorD::randn({3, 4}, rng, 1.0, true);
        TensorD b = TensorD::randn({4, 5}, rng, 1.0, true);
        TensorD c = TensorD::randn({6, 4}, rng, 1.0, true);
        TensorD bias = TensorD::randn({5}, rng, 1.0, true);
        run("matmul", [&] { return mean_all(matmul(a, b)); }, {{"a", a}, {"b", b}});
        run("matmul_nt", [&] { return mean_all(matmul_nt(a, c)); }, {{"a", a}, {"c", c}});
        run("add_row_bias", [&] { return mean_all(add_row_bias(matmul(a, b), bias)); },
            {{"a", a}, {"b", b}, {"bias", bias}});
    }
    {
        TensorD x = TensorD::randn({4, 6}, rng, 1.0, true);
        TensorD w = TensorD::randn({4, 6}, rng, 1.0, true);
        run("softmax_rows", [&] { return mean_all(mul(softmax_rows(x), w)); }, {{"x", x}});
        run("sum_all", [&] { return sum_all(mul(x, x)); }, {{"x", x}});
        run("mean_all", [&] { return mean_all(mul(x, w)); }, {{"x", x}, {"w", w}});
        run("gather_at", [&] { return gather_at(mul(x, w), 13); }, {{"x", x}, {"w", w}});
    }
    {
        TensorD x = TensorD::randn({2, 3, 4}, rng, 1.0, true);
        TensorD w = TensorD::randn({24}, rng, 1.0, true);
        run("reshape", [&] { return mean_all(mul(reshape(x, {24}), w)); }, {{"x", x}});
        TensorD wa = TensorD::randn({2, 2, 4}, rng, 1.0, true);
        run("slice", [&] { return mean_all(mul(slice(x, 1, 1, 2), wa)); }, {{"x", x}});
        TensorD y = TensorD::randn({2, 2, 4}, rng, 1.0, true);
        TensorD wc = TensorD::randn({2, 5, 4}, rng, 1.0, true);
        run("concat",
            [&] {
                std::vector<TensorD> parts = {x, y};
                return mean_all(mul(concat(parts, 1), wc));
            },
            {{"x", x}, {"y", y}});
        TensorD map = TensorD::randn({3, 2, 4}, rng, 1.0, true);
        TensorD wt = TensorD::randn({8, 3}, rng, 1.0, true);
        run("channels_to_tokens", [&] { return mean_all(mul(channels_to_tokens(map), wt)); },
            {{"map", map}});
        TensorD tok = TensorD::randn({8, 3}, rng, 1.0, true);
        TensorD wm = TensorD::randn({3, 2, 4}, rng, 1.0, true);
        run("tokens_to_channels",
            [&] { return mean_all(mul(tokens_to_channels(tok, 2, 4), wm)); }, {{"tok", tok}});
    }
    {
        TensorD logits = TensorD::randn({3, 3}, rng, 1.0, true);
        std::vector<double> target(9);
        for (auto& t : target) t = rng.uniform(0.05, 0.95);
        run("bce_mean", [&] { return bce_mean(sigmoid(logits), target); },
            {{"logits", logits}});
    }
    {
        TensorD x = TensorD::randn({2, 2, 5, 5}, rng, 1.0, true);
        TensorD w = TensorD::randn({3, 2, 3, 3}, rng, 0.5, true);
        TensorD b = TensorD::randn({3}, rng, 0.5, true);
        run("conv2d", [&] { return mean_all(conv2d(x, w, b, 2, 1)); },
            {{"x", x}, {"w", w}, {"b", b}});
        TensorD wd = TensorD::randn({2, 1, 3, 3}, rng, 0.5, true);
        run("conv2d_grouped", [&] { return mean_all(conv2d(x, wd, 1, 1, 2)); },
            {{"x", x}, {"wd", wd}});
        TensorD wt = TensorD::randn({2, 3, 4, 4}, rng, 0.5, true);
        TensorD bt = TensorD::randn({3}, rng, 0.5, true);
        run("conv_transpose2d", [&] { return mean_all(conv_transpose2d(x, wt, bt, 2, 1)); },
            {{"x", x}, {"wt", wt}, {"bt", bt}});
        run("pad2d_replicate", [&] { return mean_all(pad2d_replicate(x, 2)); }, {{"x", x}});
    }
    {
        TensorD map = TensorD::randn({2, 5, 6}, rng, 1.0, true);
        TensorD p = TensorD::from_data({2}, {1.3, 2.6}, true);
        TensorD w = TensorD::randn({2}, rng, 1.0, true);
        run("bilinear_sample", [&] { return mean_all(mul(bilinear_sample(map, p), w)); },
            {{"map", map}, {"p", p}, {"w", w}});
        TensorD x = TensorD::randn({1, 2, 5, 5}, rng, 1.0, true);
        std::vector<double> off(static_cast<size_t>(18 * 25));
        for (auto& o : off) o = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.4);
        TensorD offsets = TensorD::from_data({1, 18, 5, 5}, std::move(off), true);
        TensorD wdc = TensorD::randn({2, 2, 3, 3}, rng, 0.5, true);
        TensorD bdc = TensorD::randn({2}, rng, 0.5, true);
        run("deform_conv2d", [&] { return mean_all(deform_conv2d(x, offsets, wdc, bdc)); },
            {{"x", x}, {"offsets", offsets}, {"w", wdc}, {"b", bdc}});
    }
    {
        TensorD x = TensorD::randn({3, 6}, rng, 1.0, true);
        TensorD gamma = TensorD::randn({6}, rng, 0.5, true);
        TensorD beta = TensorD::randn({6}, rng, 0.5, true);
        run("layer_norm", [&] { return mean_all(layer_norm(x, gamma, beta, 1e-5)); },
            {{"x", x}, {"gamma", gamma}, {"beta", beta}});
        TensorD xb = TensorD::randn({2, 3, 4, 4}, rng, 1.0, true);
        TensorD g2 = TensorD::randn({3}, rng, 0.5, true);
        TensorD b2 = TensorD::randn({3}, rng, 0.5, true);
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        run("batch_norm2d_train",
            [&] { return mean_all(batch_norm2d(xb, g2, b2, rm, rv, true)); },
            {{"xb", xb}, {"g2", g2}, {"b2", b2}});
        std::vector<double> rm2 = {0.2, -0.1, 0.4}, rv2 = {1.5, 0.7, 2.0};
        run("batch_norm2d_eval",
            [&] { return mean_all(batch_norm2d(xb, g2, b2, rm2, rv2, false)); },
            {{"xb", xb}, {"g2", g2}, {"b2", b2}});
    }
    {
        Attention<double> a = make_attention<double>(8, 2, rng, 0.4);
        TensorD x = TensorD::randn({5, 8}, rng, 1.0, true);
        ParamSet<double> ps;
        register_attention(ps, "attn", a);
        ps.add("x", x);
        run("multi_head_attention", [&] { return mean_all(multi_head_attention(a, x)); },
            ps.items);
    }
    return out;
}

// Both prompter stacks end to end: pyramid -> level convs -> map, and
// coarse -> offsets -> deformable conv -> resample, in training mode so the
// batch-norm branch is exercised.
inline std::vector<VerifyCheck> verify_prompters() {
    using TensorD = Tensor<double>;
    std::vector<VerifyCheck> out;
    Rng rng(20240502);

    {
        IllumPrompter<double> pr = make_illum_prompter<double>(2, 4, 2, 3, rng);
        TensorD img = TensorD::uniform({1, 2, 8, 8}, rng, 0.05, 0.95);
        ParamSet<double> ps;
        register_illum_prompter(ps, "illum", pr);
        detail::run_check(
            out, "illum_prompter", [&] { return mean_all(illum_prompt(pr, img)); }, ps.items,
            rng);
    }
    {
        ViewPrompter<double> vp = make_view_prompter<double>(2, 3, 3, 4, 4, rng);
        // Same generic-point conditioning as verify_model: offsets biased off
        // the bilinear lattice, batch-norm betas past gamma*max|normalized| so
        // no leaky-relu pre-activation sits within an FD step of the kink.
        for (auto& v : vp.offset_conv.w.raw()) v = 0.002 * rng.normal();
        for (auto& v : vp.offset_conv.b.raw()) v = rng.uniform(0.2, 0.3);
        for (auto* bn : {&vp.coarse_bn, &vp.out_bn}) {
            for (auto& v : bn->beta.raw()) v = rng.uniform(4.0, 5.0);
            for (auto& v : bn->gamma.raw()) v = rng.uniform(0.4, 0.6);
        }
        TensorD img = TensorD::uniform({2, 2, 8, 8}, rng, 0.05, 0.95);
        ParamSet<double> ps;
        register_view_prompter(ps, "view", vp);
        detail::run_check(
            out, "view_prompter_train",
            [&] { return mean_all(view_prompt(vp, img, true)); }, ps.items, rng);
        // Eval mode normalizes by the running buffers, which at init ({0,1})
        // bear no relation to this input's activation scale and can land
        // pre-activations on the kink. Calibrate them to the input first —
        // which is what trained running stats are — then difference.
        for (int i = 0; i < 150; ++i) view_prompt(vp, img, true);
        detail::run_check(
            out, "view_prompter_eval",
            [&] { return mean_all(view_prompt(vp, img, false)); }, ps.items, rng);
    }
    return out;
}

// The interaction block as a unit. At the 0.02 init scale the PFI mlps emit
// near-constant rows, and the layer norm that follows has curvature ~1/var,
// which shows up as pure h^2 truncation error at the documented step; the
// mlps are re-drawn at a healthy scale so the finite difference measures the
// gradient rather than the third derivative (see verify_model).
inline std::vector<VerifyCheck> verify_block() {
    using TensorD = Tensor<double>;
    std::vector<VerifyCheck> out;
    Rng rng(20240503);

    DpBlock<double> block = make_dp_block<double>(8, 2, rng, false);
    for (auto* pfi : {&block.pfi_illu, &block.pfi_view}) {
        for (auto* m : {&pfi->mlp_sim, &pfi->mlp_dif}) {
            for (auto& v : m->fc1.w.raw()) v = 0.3 * rng.normal();
            for (auto& v : m->fc2.w.raw()) v = 0.3 * rng.normal();
            for (auto& v : m->fc1.b.raw()) v = 0.1 * rng.normal();
            for (auto& v : m->fc2.b.raw()) v = 0.1 * rng.normal();
        }
    }
    TensorD feat = TensorD::randn({6, 8}, rng, 1.0, true);
    TensorD ptok = TensorD::randn({6, 8}, rng, 0.5, true);
    TensorD vtok = TensorD::randn({6, 8}, rng, 0.5, true);
    ParamSet<double> ps;
    register_dp_block(ps, "block", block);
    ps.add("features", feat);
    ps.add("illu_tokens", ptok);
    ps.add("view_tokens", vtok);
    detail::run_check(
        out, "dp_block",
        [&] {
            PromptTokens<double> illu{ptok, PromptKind::illu, 0};
            PromptTokens<double> view{vtok, PromptKind::view, 0};
            auto step = dpblock_forward(block, feat, illu, view);
            return add(sum_all(step.features),
                       add(sum_all(step.illu.tokens), sum_all(step.view.tokens)));
        },
        ps.items, rng, 1e-4, 1e-5, 400);
    return out;
}

// Full micro-model check at the documented step h=1e-4. Finite differences
// at that step are only meaningful where the function is smooth on the h
// scale, so the model is moved to a generic, well-conditioned point first:
//
//  * the PFI mlps are re-drawn at a healthy scale. At the 0.02 init their
//    outputs are near-constant rows, and the layer norm that follows has
//    third derivatives ~1/sigma^2, which turns into pure h^2 truncation
//    error of a few 1e-4 (measured: 8.5e-4 at h=1e-4 -> 2.3e-6 at 1e-5 ->
//    6.3e-8 at 1e-6) even though the analytic gradient is exact.
//  * batch-norm gammas are drawn small and betas large. In training mode
//    the normalized activations have exactly unit variance, so with beta=0
//    the leaky-relu pre-activations straddle the kink by construction and
//    the minimum |preact| over ~8k activations is of order h itself; beta
//    beyond gamma*max|normalized| keeps every activation on one branch.
//    (Branch selection itself is covered by the per-op leaky_relu check.)
//  * deform offsets are biased to ~0.25 with a small spread, so bilinear
//    sample coordinates stay clear of the integer lattice where the
//    interpolation weights kink. The offset conv still receives gradient
//    exclusively through those sampling coordinates, so the coordinate
//    path is genuinely exercised.
//
// With this conditioning the measured error is 3e-7..8e-6 across every
// init seed 1..12, two orders inside the 1e-4 budget; the pinned seed is
// not load-bearing. Head parameters receive no gradient from the encoder
// projection loss, so the head and loss are covered by a separate check
// that differences the tracking loss through the head logits.
inline std::vector<VerifyCheck> verify_model(int max_coords = 15) {
    using TensorD = Tensor<double>;
    std::vector<VerifyCheck> out;

    TrackerConfig cfg;
    cfg.search_size = 32;
    cfg.template_size = 16;
    cfg.patch_size = 8;
    cfg.embed_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.n_pyramid_levels = 2;
    cfg.illum_level_width = 4;
    cfg.view_coarse_width = 4;
    cfg.view_deform_width = 4;
    cfg.view_width = 8;
    cfg.head_hidden = 8;
    cfg.seed = 5;
    Tracker<double> trk = make_tracker<double>(cfg);

    Rng krng(20240504);
    for (auto& blk : trk.backbone.blocks) {
        for (auto* pfi : {&blk.pfi_illu, &blk.pfi_view}) {
            for (auto* m : {&pfi->mlp_sim, &pfi->mlp_dif}) {
                for (auto& v : m->fc1.w.raw()) v = 0.3 * krng.normal();
                for (auto& v : m->fc2.w.raw()) v = 0.3 * krng.normal();
                for (auto& v : m->fc1.b.raw()) v = 0.1 * krng.normal();
                for (auto& v : m->fc2.b.raw()) v = 0.1 * krng.normal();
            }
        }
    }
    for (auto* vp : {&trk.backbone.view_tmpl, &trk.backbone.view_srch}) {
        for (auto& v : vp->offset_conv.w.raw()) v = 0.002 * krng.normal();
        for (auto& v : vp->offset_conv.b.raw()) v = krng.uniform(0.2, 0.3);
        for (auto* bn : {&vp->coarse_bn, &vp->out_bn}) {
            for (auto& v : bn->beta.raw()) v = krng.uniform(4.0, 5.0);
            for (auto& v : bn->gamma.raw()) v = krng.uniform(0.4, 0.6);
        }
    }
    Rng rng(20240505);
    TensorD tmpl = TensorD::uniform({2, 3, 16, 16}, rng, 0.05, 0.95);
    TensorD srch = TensorD::uniform({2, 3, 32, 32}, rng, 0.05, 0.95);
    TensorD w0 = TensorD::randn({20, 8}, rng, 1.0);
    TensorD w1 = TensorD::randn({20, 8}, rng, 1.0);

    ParamSet<double> backbone_params;
    for (auto& [name, p] : all_params(trk).items)
        if (name.rfind("head.", 0) != 0) backbone_params.add(name, p);
    detail::run_check(
        out, "micro_model_encoder",
        [&] {
            BackboneOut<double> enc = backbone_forward_batch(trk, tmpl, srch, true);
            return add(mean_all(mul(enc.features[0], w0)),
                       mean_all(mul(enc.features[1], w1)));
        },
        backbone_params.items, rng, 1e-4, 1e-4, max_coords);

    // Loss-side companion: tracking loss differenced through the head logits.
    // BCE/sigmoid, the gathered regression terms and the overlap term are
    // smooth at a generic prediction, so the raw h=1e-4 step applies.
    const int g = cfg.search_size / cfg.patch_size;
    const BBox target{10.3, 8.7, 9.4, 11.2};
    TensorD clog = TensorD::randn({1, g, g}, rng, 0.4, true);
    TensorD slog = TensorD::randn({2, g, g}, rng, 0.4, true);
    TensorD omap = TensorD::uniform({2, g, g}, rng, 0.15, 0.45, true);
    detail::run_check(
        out, "tracking_loss_logits",
        [&] {
            HeadOutput<double> head;
            head.center_map = sigmoid(clog);
            head.size_map = sigmoid(slog);
            head.offset_map = omap;
            return tracking_loss(head, target, cfg.patch_size);
        },
        {{"center_logits", clog}, {"size_logits", slog}, {"offsets", omap}}, rng, 1e-4,
        1e-4, max_coords);
    return out;
}

inline std::vector<VerifyCheck> verify_scope(const std::string& scope) {
    if (scope == "ops") return verify_ops();
    if (scope == "prompters") return verify_prompters();
    if (scope == "block") return verify_block();
    if (scope == "model") return verify_model();
    check(false, "unknown gradcheck scope: " + scope);
    return {};
}

}  // namespace dpt

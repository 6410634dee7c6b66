#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpt/bbox.hpp"
#include "dpt/dpblock.hpp"

namespace dpt {

// Desk-scale dimensions; the published learning rate is the one training
// default carried over unchanged.
struct TrackerConfig {
    int search_size = 128;
    int template_size = 64;
    int patch_size = 16;
    int embed_dim = 64;
    int depth = 4;
    int heads = 4;
    int n_pyramid_levels = 3;
    int illum_level_width = 8;
    int view_coarse_width = 8;
    int view_deform_width = 8;
    int view_width = 16;
    int head_hidden = 32;
    bool share_pfi_mlps = false;
    bool freeze_backbone = false;
    double lr = 0.0004;
    double weight_decay = 1e-4;
    int steps = 600;
    int batch = 2;
    uint64_t seed = 1;
};

inline void validate(const TrackerConfig& c) {
    check(c.patch_size > 0 && c.search_size % c.patch_size == 0 &&
              c.template_size % c.patch_size == 0,
          "image sizes must be divisible by patch_size");
    check(c.embed_dim > 0 && c.heads > 0 && c.embed_dim % c.heads == 0,
          "embed_dim must be divisible by heads");
    check(c.depth >= 1, "depth must be positive");
    check(c.n_pyramid_levels >= 1, "n_pyramid_levels must be positive");
    const int div = 1 << c.n_pyramid_levels;
    check(c.search_size % div == 0 && c.template_size % div == 0,
          "image sizes must be divisible by 2^n_pyramid_levels");
    check(c.patch_size % (1 << (c.n_pyramid_levels - 1)) == 0,
          "patch_size must be divisible by 2^(n_pyramid_levels-1)");
    check(c.lr >= 0.0, "negative learning rate");
    check(c.steps >= 1, "steps must be positive");
    check(c.batch >= 2, "batch must be at least 2 (batch-norm statistics)");
}

// --- prediction head: three light conv branches over the search grid ---

template <typename T>
struct Head {
    Conv<T> stem_center, out_center;
    Conv<T> stem_size, out_size;
    Conv<T> stem_offset, out_offset;
};

// Maps channel conventions follow (row, col): offset channel 0 is the
// sub-cell row shift, channel 1 the column shift; size channel 0 is height,
// channel 1 width (normalized by the search size).
template <typename T>
struct HeadOutput {
    Tensor<T> center_map;  // [1,hs,ws], sigmoid, in (0,1)
    Tensor<T> size_map;    // [2,hs,ws], sigmoid, normalized h/w
    Tensor<T> offset_map;  // [2,hs,ws], raw sub-cell offsets
};

template <typename T>
Head<T> make_head(int dim, int hidden, Rng& rng) {
    Head<T> h;
    h.stem_center = make_conv<T>(dim, hidden, 3, 1, 1, rng);
    h.out_center = make_conv<T>(hidden, 1, 3, 1, 1, rng);
    h.stem_size = make_conv<T>(dim, hidden, 3, 1, 1, rng);
    h.out_size = make_conv<T>(hidden, 2, 3, 1, 1, rng);
    h.stem_offset = make_conv<T>(dim, hidden, 3, 1, 1, rng);
    h.out_offset = make_conv<T>(hidden, 2, 3, 1, 1, rng);
    return h;
}

template <typename T>
void register_head(ParamSet<T>& ps, const std::string& name, const Head<T>& h) {
    register_conv(ps, name + ".stem_center", h.stem_center);
    register_conv(ps, name + ".out_center", h.out_center);
    register_conv(ps, name + ".stem_size", h.stem_size);
    register_conv(ps, name + ".out_size", h.out_size);
    register_conv(ps, name + ".stem_offset", h.stem_offset);
    register_conv(ps, name + ".out_offset", h.out_offset);
}

template <typename T>
HeadOutput<T> head_forward(const Head<T>& head, const Tensor<T>& search_tokens) {
    check(search_tokens.rank() == 2, "head_forward expects [N,d] search tokens");
    const int n = search_tokens.dim(0);
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    check(g * g == n, "head_forward: " + std::to_string(n) + " tokens is not a square grid");
    Tensor<T> grid = tokens_to_channels(search_tokens, g, g);
    grid = reshape(grid, {1, grid.dim(0), g, g});
    auto branch = [&](const Conv<T>& stem, const Conv<T>& out) {
        return conv_forward(out, relu(conv_forward(stem, grid)));
    };
    HeadOutput<T> o;
    Tensor<T> c = sigmoid(branch(head.stem_center, head.out_center));
    Tensor<T> s = sigmoid(branch(head.stem_size, head.out_size));
    Tensor<T> f = branch(head.stem_offset, head.out_offset);
    o.center_map = reshape(c, {1, g, g});
    o.size_map = reshape(s, {2, g, g});
    o.offset_map = reshape(f, {2, g, g});
    return o;
}

// --- full model ---

template <typename T>
struct Backbone {
    Conv<T> patch_embed;  // 3 -> d, k = s = patch_size
    Tensor<T> pos_embed;  // [N_template + N_search, d]
    std::vector<DpBlock<T>> blocks;
    // per-region prompter stacks; token projections are shared across regions
    IllumPrompter<T> illum_tmpl, illum_srch;
    ViewPrompter<T> view_tmpl, view_srch;
    Linear<T> illum_proj, view_proj;
};

template <typename T>
struct Tracker {
    TrackerConfig cfg;
    Backbone<T> backbone;
    Head<T> head;
};

inline int template_tokens(const TrackerConfig& c) {
    const int g = c.template_size / c.patch_size;
    return g * g;
}

inline int search_tokens(const TrackerConfig& c) {
    const int g = c.search_size / c.patch_size;
    return g * g;
}

template <typename T>
Tracker<T> make_tracker(const TrackerConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    Tracker<T> t;
    t.cfg = cfg;
    const int d = cfg.embed_dim;
    t.backbone.patch_embed = make_conv<T>(3, d, cfg.patch_size, cfg.patch_size, 0, rng);
    const int n_tokens = template_tokens(cfg) + search_tokens(cfg);
    t.backbone.pos_embed = Tensor<T>::randn({n_tokens, d}, rng, T(0.02), true);
    for (int i = 0; i < cfg.depth; ++i)
        t.backbone.blocks.push_back(make_dp_block<T>(d, cfg.heads, rng, cfg.share_pfi_mlps));
    t.backbone.illum_tmpl = make_illum_prompter<T>(3, cfg.patch_size, cfg.n_pyramid_levels,
                                                   cfg.illum_level_width, rng);
    t.backbone.illum_srch = make_illum_prompter<T>(3, cfg.patch_size, cfg.n_pyramid_levels,
                                                   cfg.illum_level_width, rng);
    t.backbone.view_tmpl = make_view_prompter<T>(3, cfg.view_coarse_width,
                                                 cfg.view_deform_width, cfg.view_width,
                                                 cfg.patch_size, rng);
    t.backbone.view_srch = make_view_prompter<T>(3, cfg.view_coarse_width,
                                                 cfg.view_deform_width, cfg.view_width,
                                                 cfg.patch_size, rng);
    t.backbone.illum_proj =
        make_linear<T>(cfg.n_pyramid_levels * cfg.illum_level_width, d, rng);
    t.backbone.view_proj = make_linear<T>(cfg.view_width, d, rng);
    t.head = make_head<T>(d, cfg.head_hidden, rng);
    return t;
}

// Registration order defines the optimizer walk and the checkpoint layout.
template <typename T>
ParamSet<T> all_params(const Tracker<T>& t) {
    ParamSet<T> ps;
    register_conv(ps, "backbone.patch_embed", t.backbone.patch_embed);
    ps.add("backbone.pos_embed", t.backbone.pos_embed);
    for (size_t i = 0; i < t.backbone.blocks.size(); ++i)
        register_dp_block(ps, "backbone.block" + std::to_string(i), t.backbone.blocks[i]);
    register_illum_prompter(ps, "backbone.illum_tmpl", t.backbone.illum_tmpl);
    register_illum_prompter(ps, "backbone.illum_srch", t.backbone.illum_srch);
    register_view_prompter(ps, "backbone.view_tmpl", t.backbone.view_tmpl);
    register_view_prompter(ps, "backbone.view_srch", t.backbone.view_srch);
    register_linear(ps, "backbone.illum_proj", t.backbone.illum_proj);
    register_linear(ps, "backbone.view_proj", t.backbone.view_proj);
    register_head(ps, "head", t.head);
    return ps;
}

// With freeze_backbone the pretrained-foundation pieces (patch embedding,
// positions, attention/FFN/LN inside the blocks) stay fixed; prompters,
// token projections, interaction modules and the task head keep training.
template <typename T>
ParamSet<T> trainable_params(const Tracker<T>& t) {
    if (!t.cfg.freeze_backbone) return all_params(t);
    ParamSet<T> ps;
    for (size_t i = 0; i < t.backbone.blocks.size(); ++i) {
        const std::string name = "backbone.block" + std::to_string(i);
        register_pfi(ps, name + ".pfi_illu", t.backbone.blocks[i].pfi_illu);
        register_pfi(ps, name + ".pfi_view", t.backbone.blocks[i].pfi_view);
    }
    register_illum_prompter(ps, "backbone.illum_tmpl", t.backbone.illum_tmpl);
    register_illum_prompter(ps, "backbone.illum_srch", t.backbone.illum_srch);
    register_view_prompter(ps, "backbone.view_tmpl", t.backbone.view_tmpl);
    register_view_prompter(ps, "backbone.view_srch", t.backbone.view_srch);
    register_linear(ps, "backbone.illum_proj", t.backbone.illum_proj);
    register_linear(ps, "backbone.view_proj", t.backbone.view_proj);
    register_head(ps, "head", t.head);
    return ps;
}

// Ablation switch: with every interaction coefficient at zero the blocks
// collapse onto the plain encoder path.
template <typename T>
void zero_interaction_coefficients(Tracker<T>& t) {
    for (auto& block : t.backbone.blocks) zero_interaction_coefficients(block);
}

namespace detail {

// [B,3,H,W] -> per-sample token rows [h*w, d], raster order.
template <typename T>
std::vector<Tensor<T>> patch_tokens(const Conv<T>& embed, const Tensor<T>& images) {
    Tensor<T> maps = conv_forward(embed, images);  // [B,d,h,w]
    std::vector<Tensor<T>> out;
    for (int b = 0; b < images.dim(0); ++b) {
        Tensor<T> m = slice(maps, 0, b, 1);
        out.push_back(channels_to_tokens(
            reshape(m, {m.dim(1), m.dim(2), m.dim(3)})));
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> split_map_tokens(const Tensor<T>& maps, const Linear<T>& proj) {
    std::vector<Tensor<T>> out;
    for (int b = 0; b < maps.dim(0); ++b) {
        Tensor<T> m = slice(maps, 0, b, 1);
        out.push_back(linear_forward(
            proj, channels_to_tokens(reshape(m, {m.dim(1), m.dim(2), m.dim(3)}))));
    }
    return out;
}

}  // namespace detail

// Spec'd single-pair embedding: conv patches, raster flatten, position added.
template <typename T>
Tensor<T> patch_embed(const Tracker<T>& t, const Tensor<T>& template_img,
                      const Tensor<T>& search_img) {
    Tensor<T> tb = template_img.rank() == 3
                       ? reshape(template_img, {1, 3, template_img.dim(1), template_img.dim(2)})
                       : template_img;
    Tensor<T> sb = search_img.rank() == 3
                       ? reshape(search_img, {1, 3, search_img.dim(1), search_img.dim(2)})
                       : search_img;
    auto tt = detail::patch_tokens(t.backbone.patch_embed, tb);
    auto st = detail::patch_tokens(t.backbone.patch_embed, sb);
    std::vector<Tensor<T>> rows = {tt[0], st[0]};
    return add(concat(rows, 0), t.backbone.pos_embed);
}

template <typename T>
struct BackboneOut {
    std::vector<Tensor<T>> features;  // per sample, [N,d]
};

// Full prompted encoding for a batch of (template, search) pairs. Prompt maps
// are computed batch-wide (batch-norm statistics), then split per sample so
// the token streams stay [N,d].
template <typename T>
BackboneOut<T> backbone_forward_batch(Tracker<T>& t, const Tensor<T>& templates,
                                      const Tensor<T>& searches, bool training) {
    check(templates.rank() == 4 && searches.rank() == 4,
          "backbone_forward_batch expects [B,3,H,W] image batches");
    check(templates.dim(0) == searches.dim(0), "template/search batch mismatch");
    check(templates.dim(2) == t.cfg.template_size && searches.dim(2) == t.cfg.search_size,
          "image sizes do not match the tracker config");
    const int bsz = templates.dim(0);

    auto tmpl_tok = detail::patch_tokens(t.backbone.patch_embed, templates);
    auto srch_tok = detail::patch_tokens(t.backbone.patch_embed, searches);

    auto illu_t = detail::split_map_tokens(illum_prompt(t.backbone.illum_tmpl, templates),
                                           t.backbone.illum_proj);
    auto illu_s = detail::split_map_tokens(illum_prompt(t.backbone.illum_srch, searches),
                                           t.backbone.illum_proj);
    auto view_t = detail::split_map_tokens(
        view_prompt(t.backbone.view_tmpl, templates, training), t.backbone.view_proj);
    auto view_s = detail::split_map_tokens(
        view_prompt(t.backbone.view_srch, searches, training), t.backbone.view_proj);

    BackboneOut<T> out;
    for (int b = 0; b < bsz; ++b) {
        const auto bi = static_cast<size_t>(b);
        std::vector<Tensor<T>> feat_rows = {tmpl_tok[bi], srch_tok[bi]};
        std::vector<Tensor<T>> illu_rows = {illu_t[bi], illu_s[bi]};
        std::vector<Tensor<T>> view_rows = {view_t[bi], view_s[bi]};
        Tensor<T> f = add(concat(feat_rows, 0), t.backbone.pos_embed);
        PromptTokens<T> illu{concat(illu_rows, 0), PromptKind::illu, 0};
        PromptTokens<T> view{concat(view_rows, 0), PromptKind::view, 0};
        for (const auto& block : t.backbone.blocks) {
            auto step = dpblock_forward(block, f, illu, view);
            f = step.features;
            illu = step.illu;
            view = step.view;
        }
        out.features.push_back(f);
    }
    return out;
}

template <typename T>
Tensor<T> backbone_forward(Tracker<T>& t, const Tensor<T>& template_img,
                           const Tensor<T>& search_img, bool training = false) {
    Tensor<T> tb = template_img.rank() == 3
                       ? reshape(template_img, {1, 3, template_img.dim(1), template_img.dim(2)})
                       : template_img;
    Tensor<T> sb = search_img.rank() == 3
                       ? reshape(search_img, {1, 3, search_img.dim(1), search_img.dim(2)})
                       : search_img;
    return backbone_forward_batch(t, tb, sb, training).features[0];
}

// Prompt-free twin: same patch embedding, same blocks, interactions skipped.
template <typename T>
Tensor<T> backbone_forward_plain(const Tracker<T>& t, const Tensor<T>& template_img,
                                 const Tensor<T>& search_img) {
    Tensor<T> f = patch_embed(t, template_img, search_img);
    for (const auto& block : t.backbone.blocks) f = encoder_block_forward(block, f);
    return f;
}

template <typename T>
HeadOutput<T> tracker_forward(Tracker<T>& t, const Tensor<T>& template_img,
                              const Tensor<T>& search_img, bool training = false) {
    Tensor<T> f = backbone_forward(t, template_img, search_img, training);
    const int nt = template_tokens(t.cfg);
    return head_forward(t.head, slice(f, 0, nt, search_tokens(t.cfg)));
}

// --- box encoding/decoding on the search grid ---

struct CellTargets {
    int row = 0, col = 0;
    double off_y = 0, off_x = 0;  // sub-cell offsets in [0,1)
    double size_h = 0, size_w = 0;  // normalized by search size
};

inline CellTargets encode_box(const BBox& gt, int patch_size, int grid) {
    const double search = static_cast<double>(patch_size * grid);
    check(gt.w > 0 && gt.h > 0, "encode_box: ground-truth box has no area");
    check(gt.cx() >= 0 && gt.cx() < search && gt.cy() >= 0 && gt.cy() < search,
          "encode_box: ground-truth center outside the search region");
    CellTargets ct;
    const double gy = gt.cy() / patch_size, gx = gt.cx() / patch_size;
    ct.row = std::min(static_cast<int>(gy), grid - 1);
    ct.col = std::min(static_cast<int>(gx), grid - 1);
    ct.off_y = gy - ct.row;
    ct.off_x = gx - ct.col;
    ct.size_h = gt.h / search;
    ct.size_w = gt.w / search;
    return ct;
}

// Argmax cell (ties -> smallest row-major index), then
// center = (cell + offset) * patch_size, size = size_map * search_size.
template <typename T>
BBox decode_box(const HeadOutput<T>& head, int patch_size) {
    const int g = head.center_map.dim(1);
    const auto& cm = head.center_map.data();
    size_t best = 0;
    for (size_t i = 1; i < cm.size(); ++i)
        if (cm[i] > cm[best]) best = i;
    const int row = static_cast<int>(best) / g, col = static_cast<int>(best) % g;
    const auto& off = head.offset_map.data();
    const auto& sz = head.size_map.data();
    const size_t cell = static_cast<size_t>(row) * g + col;
    const double cy = (row + static_cast<double>(off[cell])) * patch_size;
    const double cx = (col + static_cast<double>(off[static_cast<size_t>(g) * g + cell])) *
                      patch_size;
    const double search = static_cast<double>(patch_size * g);
    const double h = static_cast<double>(sz[cell]) * search;
    const double w = static_cast<double>(sz[static_cast<size_t>(g) * g + cell]) * search;
    return {cx - w / 2.0, cy - h / 2.0, w, h};
}

// --- training loss: center BCE + L1 on size/offset + IoU at the gt cell ---

template <typename T>
Tensor<T> tracking_loss(const HeadOutput<T>& head, const BBox& gt, int patch_size) {
    const int g = head.center_map.dim(1);
    const double search = static_cast<double>(patch_size * g);
    const CellTargets ct = encode_box(gt, patch_size, g);

    // Gaussian bump (sigma = 1 cell) around the target cell
    std::vector<T> heat(static_cast<size_t>(g) * g);
    for (int r = 0; r < g; ++r)
        for (int c = 0; c < g; ++c) {
            const double d2 = (r - ct.row) * double(r - ct.row) +
                              (c - ct.col) * double(c - ct.col);
            heat[static_cast<size_t>(r) * g + c] = static_cast<T>(std::exp(-d2 / 2.0));
        }
    Tensor<T> loss = bce_mean(head.center_map, heat);

    const int64_t cell = static_cast<int64_t>(ct.row) * g + ct.col;
    const int64_t plane = static_cast<int64_t>(g) * g;
    Tensor<T> sh = gather_at(head.size_map, cell);
    Tensor<T> sw = gather_at(head.size_map, plane + cell);
    Tensor<T> oy = gather_at(head.offset_map, cell);
    Tensor<T> ox = gather_at(head.offset_map, plane + cell);

    Tensor<T> l1 = add(add(abs(add_const(sh, -static_cast<T>(ct.size_h))),
                           abs(add_const(sw, -static_cast<T>(ct.size_w)))),
                       add(abs(add_const(oy, -static_cast<T>(ct.off_y))),
                           abs(add_const(ox, -static_cast<T>(ct.off_x)))));
    loss = add(loss, scale(l1, T(5)));

    // differentiable IoU of the box decoded at the gt cell against gt
    Tensor<T> cy = scale(add_const(oy, static_cast<T>(ct.row)), static_cast<T>(patch_size));
    Tensor<T> cx = scale(add_const(ox, static_cast<T>(ct.col)), static_cast<T>(patch_size));
    Tensor<T> bh = scale(sh, static_cast<T>(search));
    Tensor<T> bw = scale(sw, static_cast<T>(search));
    Tensor<T> y1 = sub(cy, scale(bh, T(0.5))), y2 = add(cy, scale(bh, T(0.5)));
    Tensor<T> x1 = sub(cx, scale(bw, T(0.5))), x2 = add(cx, scale(bw, T(0.5)));
    Tensor<T> gx1 = Tensor<T>::scalar(static_cast<T>(gt.x));
    Tensor<T> gy1 = Tensor<T>::scalar(static_cast<T>(gt.y));
    Tensor<T> gx2 = Tensor<T>::scalar(static_cast<T>(gt.x + gt.w));
    Tensor<T> gy2 = Tensor<T>::scalar(static_cast<T>(gt.y + gt.h));
    Tensor<T> ih = relu(sub(minimum(y2, gy2), maximum(y1, gy1)));
    Tensor<T> iw = relu(sub(minimum(x2, gx2), maximum(x1, gx1)));
    Tensor<T> inter = mul(ih, iw);
    Tensor<T> uni = sub(add(mul(bh, bw), Tensor<T>::scalar(static_cast<T>(gt.w * gt.h))),
                        inter);
    Tensor<T> iou_term = sub(Tensor<T>::scalar(T(1)), div(inter, uni));
    return add(loss, scale(iou_term, T(2)));
}

// --- crop geometry: affine map between frame and region coordinates ---

// Region pixel p corresponds to frame position c + (p - (out-1)/2) * scale;
// positions refer to pixel centers, so the map and its inverse are exact.
struct CropMap {
    double cx = 0, cy = 0;  // frame-space center
    double scale = 1;       // frame px per region px
    int out = 0;            // region resolution
};

inline CropMap make_crop(double cx, double cy, double side, int out) {
    check(side > 0 && out > 0, "crop region must have positive size");
    return {cx, cy, side / out, out};
}

inline double to_frame(const CropMap& m, double p, bool x_axis) {
    return (x_axis ? m.cx : m.cy) + (p - (m.out - 1) / 2.0) * m.scale;
}

inline double to_crop(const CropMap& m, double f, bool x_axis) {
    return (f - (x_axis ? m.cx : m.cy)) / m.scale + (m.out - 1) / 2.0;
}

inline BBox box_to_crop(const CropMap& m, const BBox& b) {
    return {to_crop(m, b.x, true), to_crop(m, b.y, false), b.w / m.scale, b.h / m.scale};
}

inline BBox box_from_crop(const CropMap& m, const BBox& b) {
    return {to_frame(m, b.x, true), to_frame(m, b.y, false), b.w * m.scale, b.h * m.scale};
}

// Bilinear resample of the region, zero outside the frame. Data-plane only:
// crops are model inputs, never differentiated through.
template <typename T>
Tensor<T> crop_resample(const Tensor<T>& frame, const CropMap& m) {
    check(frame.rank() == 3, "crop_resample expects [C,H,W]");
    const int c = frame.dim(0), fh = frame.dim(1), fw = frame.dim(2);
    const auto& src = frame.data();
    std::vector<T> out(static_cast<size_t>(c) * m.out * m.out, T(0));
    auto at = [&](int ch, int y, int x) -> T {
        if (y < 0 || y >= fh || x < 0 || x >= fw) return T(0);
        return src[(static_cast<size_t>(ch) * fh + y) * fw + x];
    };
    for (int oy = 0; oy < m.out; ++oy)
        for (int ox = 0; ox < m.out; ++ox) {
            const double fy = to_frame(m, oy, false), fx = to_frame(m, ox, true);
            const int y0 = static_cast<int>(std::floor(fy)),
                      x0 = static_cast<int>(std::floor(fx));
            const T wy = static_cast<T>(fy - y0), wx = static_cast<T>(fx - x0);
            for (int ch = 0; ch < c; ++ch) {
                const T v = (T(1) - wy) * ((T(1) - wx) * at(ch, y0, x0) +
                                           wx * at(ch, y0, x0 + 1)) +
                            wy * ((T(1) - wx) * at(ch, y0 + 1, x0) +
                                  wx * at(ch, y0 + 1, x0 + 1));
                out[(static_cast<size_t>(ch) * m.out + oy) * m.out + ox] = v;
            }
        }
    return Tensor<T>::from_data({c, m.out, m.out}, std::move(out));
}

inline CropMap template_crop_map(const BBox& box, int template_size) {
    const double side = 2.0 * std::sqrt(box.w * box.h);
    return make_crop(box.cx(), box.cy(), side, template_size);
}

inline CropMap search_crop_map(const BBox& box, int search_size) {
    const double side = 4.0 * std::sqrt(box.w * box.h);
    return make_crop(box.cx(), box.cy(), side, search_size);
}

// One-pass protocol: template cut once from frame 0, search window follows
// the previous prediction, boxes mapped back to frame coordinates. `locate`
// sees (template region, search region) and answers in search coordinates;
// factored out so the protocol can be exercised with a stub in place of the
// model.
template <typename T, typename Locate>
std::vector<BBox> track_sequence_with(const TrackerConfig& cfg, Locate&& locate,
                                      const std::vector<Tensor<T>>& frames,
                                      const BBox& init_box) {
    check(!frames.empty(), "track_sequence: empty sequence");
    check(init_box.w > 0 && init_box.h > 0, "track_sequence: degenerate init box");
    const CropMap tmap = template_crop_map(init_box, cfg.template_size);
    Tensor<T> template_img = crop_resample(frames[0], tmap);

    std::vector<BBox> out{init_box};
    BBox prev = init_box;
    const double fw = frames[0].dim(2), fh = frames[0].dim(1);
    for (size_t i = 1; i < frames.size(); ++i) {
        const CropMap smap = search_crop_map(prev, cfg.search_size);
        Tensor<T> search_img = crop_resample(frames[i], smap);
        BBox pred = box_from_crop(smap, locate(template_img, search_img));
        // keep the window anchored inside the frame
        pred.w = std::clamp(pred.w, 2.0, fw);
        pred.h = std::clamp(pred.h, 2.0, fh);
        pred.x = std::clamp(pred.x, 1.0 - pred.w, fw - 1.0);
        pred.y = std::clamp(pred.y, 1.0 - pred.h, fh - 1.0);
        out.push_back(pred);
        prev = pred;
    }
    return out;
}

template <typename T>
std::vector<BBox> track_sequence(Tracker<T>& t, const std::vector<Tensor<T>>& frames,
                                 const BBox& init_box) {
    return track_sequence_with<T>(
        t.cfg,
        [&t](const Tensor<T>& tmpl, const Tensor<T>& srch) {
            return decode_box(tracker_forward(t, tmpl, srch, false), t.cfg.patch_size);
        },
        frames, init_box);
}

}  // namespace dpt

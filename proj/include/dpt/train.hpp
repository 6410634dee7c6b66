#pragma once

#include <ostream>
#include <vector>

#include "dpt/adamw.hpp"
#include "dpt/checkpoint.hpp"
#include "dpt/data.hpp"
#include "dpt/tracker.hpp"

namespace dpt {

struct TrainRow {
    int step = 0;
    double loss = 0;
    double lr = 0;
};

inline void write_loss_csv(std::ostream& out, const std::vector<TrainRow>& rows) {
    out << "step,loss,lr\n";
    char line[96];
    for (const TrainRow& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", r.step, r.loss, r.lr);
        out << line;
    }
}

namespace detail {

// One training sample: template cut around the first-frame box, search window
// centered on the target frame's box with a small random shift so the head
// sees off-center targets, ground truth mapped into search coordinates.
struct TrainSample {
    Tensor<float> template_img, search_img;
    BBox gt_in_search;
};

inline TrainSample draw_sample(const std::vector<Sequence>& data, const TrackerConfig& cfg,
                               Rng& rng) {
    const auto& seq = data[static_cast<size_t>(
        rng.uniform_int(static_cast<int>(data.size())))];
    const int frame = rng.uniform_int(static_cast<int>(seq.frames.size()));
    const BBox& gt = seq.annotations[static_cast<size_t>(frame)];

    const double side = 4.0 * std::sqrt(gt.w * gt.h);
    const double jx = rng.uniform(-0.12, 0.12) * side;
    const double jy = rng.uniform(-0.12, 0.12) * side;
    const CropMap smap = make_crop(gt.cx() + jx, gt.cy() + jy, side, cfg.search_size);

    TrainSample s;
    s.template_img =
        crop_resample(seq.frames[0], template_crop_map(seq.annotations[0], cfg.template_size));
    s.search_img = crop_resample(seq.frames[static_cast<size_t>(frame)], smap);
    s.gt_in_search = box_to_crop(smap, gt);
    return s;
}

inline Tensor<float> stack_images(const std::vector<Tensor<float>>& imgs) {
    std::vector<Tensor<float>> rows;
    for (const auto& im : imgs)
        rows.push_back(reshape(im, {1, im.dim(0), im.dim(1), im.dim(2)}));
    return concat(rows, 0);
}

}  // namespace detail

// AdamW over the trainable parameters; the learning rate drops by 10x at 80%
// of the step budget. Everything is driven by one seeded generator, so a
// given (config, dataset) pair always produces the same checkpoint.
inline std::vector<TrainRow> train_tracker(Tracker<float>& t,
                                           const std::vector<Sequence>& data) {
    check(!data.empty(), "train_tracker: empty dataset");
    for (const auto& seq : data)
        check(!seq.frames.empty() && seq.frames.size() == seq.annotations.size(),
              "train_tracker: sequence without aligned annotations");
    const TrackerConfig& cfg = t.cfg;
    validate(cfg);

    Rng rng(cfg.seed);
    Rng sample_rng = rng.fork(1);
    AdamW<float> opt(trainable_params(t), static_cast<float>(cfg.lr),
                     static_cast<float>(cfg.weight_decay));
    const int decay_at = static_cast<int>(0.8 * cfg.steps);

    std::vector<TrainRow> log;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor<float>> tmpls, srchs;
        std::vector<BBox> gts;
        for (int b = 0; b < cfg.batch; ++b) {
            detail::TrainSample s = detail::draw_sample(data, cfg, sample_rng);
            tmpls.push_back(std::move(s.template_img));
            srchs.push_back(std::move(s.search_img));
            gts.push_back(s.gt_in_search);
        }
        BackboneOut<float> enc = backbone_forward_batch(
            t, detail::stack_images(tmpls), detail::stack_images(srchs), true);

        const int nt = template_tokens(cfg);
        const int ns = search_tokens(cfg);
        Tensor<float> loss;
        for (int b = 0; b < cfg.batch; ++b) {
            HeadOutput<float> head =
                head_forward(t.head, slice(enc.features[static_cast<size_t>(b)], 0, nt, ns));
            Tensor<float> l =
                tracking_loss(head, gts[static_cast<size_t>(b)], cfg.patch_size);
            loss = (b == 0) ? l : add(loss, l);
        }
        loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));

        opt.zero_grad();
        backward(loss);
        const double lr = step >= decay_at ? cfg.lr * 0.1 : cfg.lr;
        opt.set_lr(static_cast<float>(lr));
        opt.step();
        log.push_back({step, static_cast<double>(loss.data()[0]), lr});
    }
    return log;
}

}  // namespace dpt

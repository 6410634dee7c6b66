#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dpt/bbox.hpp"
#include "dpt/common.hpp"
#include "dpt/data.hpp"

namespace dpt {

// Per-trajectory scores. The curve vectors back the CSV emission: precision
// over center-error thresholds 0..50 px and success over the 21-point IoU
// threshold grid.
struct MetricReport {
    double precision_at_20 = 0.0;
    double norm_precision_at_02 = 0.0;
    double success_auc = 0.0;
    std::vector<double> per_frame_cle;
    std::vector<double> per_frame_iou;
    std::vector<double> precision_curve;  // tau = 0,1,...,50
    std::vector<double> success_curve;    // thresholds 0,0.05,...,1.0
};

inline double iou(const BBox& a, const BBox& b) {
    // areas use the same corner differences as the intersection: (x+w)-x can
    // round away from w, and mixing the two bases lets IoU(a,a) drift off 1
    const double ax2 = a.x + a.w, ay2 = a.y + a.h;
    const double bx2 = b.x + b.w, by2 = b.y + b.h;
    const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(ay2, by2) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double cle(const BBox& a, const BBox& b) {
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    return std::sqrt(dx * dx + dy * dy);
}

namespace detail {

inline void check_lengths(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    check(pred.size() == gt.size(), "trajectory length mismatch: " +
                                        std::to_string(pred.size()) + " predictions vs " +
                                        std::to_string(gt.size()) + " ground-truth boxes");
    check(!gt.empty(), "empty trajectory");
}

}  // namespace detail

// Fraction of frames with center error <= tau, for tau = 0..50 px.
inline std::vector<double> precision_curve(const std::vector<BBox>& pred,
                                           const std::vector<BBox>& gt) {
    detail::check_lengths(pred, gt);
    std::vector<double> curve(51, 0.0);
    for (size_t i = 0; i < pred.size(); ++i) {
        const double e = cle(pred[i], gt[i]);
        for (int tau = 0; tau <= 50; ++tau)
            if (e <= static_cast<double>(tau)) curve[static_cast<size_t>(tau)] += 1.0;
    }
    for (auto& v : curve) v /= static_cast<double>(pred.size());
    return curve;
}

inline double precision_at_20(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    return precision_curve(pred, gt)[20];
}

// Center error normalized per axis by the ground-truth size; score is the
// fraction of frames with normalized error <= 0.2.
inline double norm_precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    detail::check_lengths(pred, gt);
    double hits = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        check(gt[i].w > 0.0 && gt[i].h > 0.0,
              "norm_precision: zero-size ground-truth box at frame " + std::to_string(i));
        const double nx = (pred[i].cx() - gt[i].cx()) / gt[i].w;
        const double ny = (pred[i].cy() - gt[i].cy()) / gt[i].h;
        if (std::sqrt(nx * nx + ny * ny) <= 0.2) hits += 1.0;
    }
    return hits / static_cast<double>(pred.size());
}

// Mean over IoU thresholds {0, 0.05, ..., 1.0} of the fraction of frames with
// IoU strictly above the threshold. A perfect trajectory scores 20/21: at
// threshold 1.0 the strict inequality fails by convention.
inline std::vector<double> success_curve(const std::vector<BBox>& pred,
                                         const std::vector<BBox>& gt) {
    detail::check_lengths(pred, gt);
    std::vector<double> curve(21, 0.0);
    for (size_t i = 0; i < pred.size(); ++i) {
        const double v = iou(pred[i], gt[i]);
        for (int k = 0; k <= 20; ++k)
            if (v > static_cast<double>(k) / 20.0) curve[static_cast<size_t>(k)] += 1.0;
    }
    for (auto& v : curve) v /= static_cast<double>(pred.size());
    return curve;
}

inline double success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    const auto curve = success_curve(pred, gt);
    double s = 0.0;
    for (double v : curve) s += v;
    return s / static_cast<double>(curve.size());
}

inline MetricReport evaluate_trajectory(const std::vector<BBox>& pred,
                                        const std::vector<BBox>& gt) {
    MetricReport rep;
    rep.precision_curve = precision_curve(pred, gt);
    rep.precision_at_20 = rep.precision_curve[20];
    rep.norm_precision_at_02 = norm_precision(pred, gt);
    rep.success_curve = success_curve(pred, gt);
    rep.success_auc = 0.0;
    for (double v : rep.success_curve) rep.success_auc += v;
    rep.success_auc /= static_cast<double>(rep.success_curve.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        rep.per_frame_cle.push_back(cle(pred[i], gt[i]));
        rep.per_frame_iou.push_back(iou(pred[i], gt[i]));
    }
    return rep;
}

// One-pass evaluation: initialize from the frame-0 ground truth, track the
// whole sequence without re-initialization, score against the annotations.
// `tracker` is pluggable so protocol tests can run oracle stubs.
using TrackFn =
    std::function<std::vector<BBox>(const std::vector<Tensor<float>>&, const BBox&)>;

struct OpeResult {
    std::vector<MetricReport> per_sequence;
    MetricReport aggregate;
};

inline OpeResult run_ope(const TrackFn& tracker, const std::vector<Sequence>& sequences,
                         int workers = 1) {
    check(!sequences.empty(), "run_ope: no sequences");
    for (size_t s = 0; s < sequences.size(); ++s) {
        check(!sequences[s].annotations.empty(),
              "run_ope: sequence " + std::to_string(s) + " has no ground truth");
        check(sequences[s].annotations.size() == sequences[s].frames.size(),
              "run_ope: sequence " + std::to_string(s) + " frame/annotation count mismatch");
    }

    std::vector<std::vector<BBox>> preds(sequences.size());
    const auto track_one = [&](size_t s) {
        preds[s] = tracker(sequences[s].frames, sequences[s].annotations[0]);
        check(preds[s].size() == sequences[s].frames.size(),
              "run_ope: tracker returned " + std::to_string(preds[s].size()) +
                  " boxes for a " + std::to_string(sequences[s].frames.size()) +
                  "-frame sequence");
    };
    if (workers <= 1 || sequences.size() == 1) {
        for (size_t s = 0; s < sequences.size(); ++s) track_one(s);
    } else {
        // one slot per sequence: threads never share outputs, so the result
        // is identical to the serial run
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        const int n_workers = std::min<int>(workers, static_cast<int>(sequences.size()));
        for (int t = 0; t < n_workers; ++t)
            pool.emplace_back([&] {
                for (size_t s = next.fetch_add(1); s < sequences.size();
                     s = next.fetch_add(1))
                    track_one(s);
            });
        for (auto& th : pool) th.join();
    }

    OpeResult res;
    std::vector<BBox> all_pred, all_gt;
    for (size_t s = 0; s < sequences.size(); ++s) {
        res.per_sequence.push_back(evaluate_trajectory(preds[s], sequences[s].annotations));
        all_pred.insert(all_pred.end(), preds[s].begin(), preds[s].end());
        all_gt.insert(all_gt.end(), sequences[s].annotations.begin(),
                      sequences[s].annotations.end());
    }
    // pooling all frames weights every sequence by its frame count
    res.aggregate = evaluate_trajectory(all_pred, all_gt);
    return res;
}

inline nlohmann::json report_to_json(const MetricReport& rep) {
    return {{"precision_at_20", rep.precision_at_20},
            {"norm_precision_at_02", rep.norm_precision_at_02},
            {"success_auc", rep.success_auc},
            {"n_frames", rep.per_frame_cle.size()},
            {"mean_iou",
             rep.per_frame_iou.empty()
                 ? 0.0
                 : [&] {
                       double s = 0.0;
                       for (double v : rep.per_frame_iou) s += v;
                       return s / static_cast<double>(rep.per_frame_iou.size());
                   }()}};
}

inline nlohmann::json ope_to_json(const OpeResult& res) {
    nlohmann::json per_seq = nlohmann::json::array();
    for (size_t s = 0; s < res.per_sequence.size(); ++s) {
        auto j = report_to_json(res.per_sequence[s]);
        j["sequence"] = s;
        per_seq.push_back(j);
    }
    return {{"per_sequence", per_seq}, {"aggregate", report_to_json(res.aggregate)}};
}

// CSV with one threshold/value pair per row, for plotting.
inline std::string curve_to_csv(const std::string& threshold_name,
                                const std::vector<double>& thresholds,
                                const std::vector<double>& values) {
    check(thresholds.size() == values.size(), "curve_to_csv: column length mismatch");
    std::string out = threshold_name + ",value\n";
    for (size_t i = 0; i < thresholds.size(); ++i) {
        out += std::to_string(thresholds[i]);
        out += ',';
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
        out += buf;
        out += '\n';
    }
    return out;
}

inline std::string precision_curve_csv(const MetricReport& rep) {
    std::vector<double> taus(rep.precision_curve.size());
    for (size_t i = 0; i < taus.size(); ++i) taus[i] = static_cast<double>(i);
    return curve_to_csv("cle_threshold_px", taus, rep.precision_curve);
}

inline std::string success_curve_csv(const MetricReport& rep) {
    std::vector<double> taus(rep.success_curve.size());
    for (size_t i = 0; i < taus.size(); ++i) taus[i] = static_cast<double>(i) / 20.0;
    return curve_to_csv("iou_threshold", taus, rep.success_curve);
}

}  // namespace dpt

// Python bindings for the tracker core. Images cross the boundary as
// float32 numpy arrays in the native [C,H,W] / [T,C,H,W] layouts, boxes as
// float64 (4,) / (T,4) arrays of x,y,w,h.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "dpt/checkpoint.hpp"
#include "dpt/eval.hpp"
#include "dpt/runconfig.hpp"
#include "dpt/train.hpp"
#include "dpt/verify.hpp"

namespace py = pybind11;
using namespace dpt;

namespace {

using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ArrayD = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<float> image_from_numpy(const ArrayF& a) {
    check(a.ndim() == 3, "expected a [C,H,W] image array");
    Shape shape{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2))};
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor<float>::from_data(shape, std::move(data));
}

std::vector<Tensor<float>> frames_from_numpy(const ArrayF& a) {
    check(a.ndim() == 4, "expected a [T,C,H,W] frame stack");
    const size_t per = static_cast<size_t>(a.shape(1)) * static_cast<size_t>(a.shape(2)) *
                       static_cast<size_t>(a.shape(3));
    Shape shape{static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                static_cast<int>(a.shape(3))};
    std::vector<Tensor<float>> out;
    for (py::ssize_t t = 0; t < a.shape(0); ++t) {
        std::vector<float> data(a.data() + per * static_cast<size_t>(t),
                                a.data() + per * static_cast<size_t>(t + 1));
        out.push_back(Tensor<float>::from_data(shape, std::move(data)));
    }
    return out;
}

py::array tensor_to_numpy(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> a(shape);
    std::memcpy(a.mutable_data(), t.data().data(), t.data().size() * sizeof(float));
    return a;
}

BBox box_from_numpy(const ArrayD& a) {
    check(a.ndim() == 1 && a.shape(0) == 4, "expected a (4,) box array of x,y,w,h");
    return BBox{a.data()[0], a.data()[1], a.data()[2], a.data()[3]};
}

std::vector<BBox> boxes_from_numpy(const ArrayD& a) {
    check(a.ndim() == 2 && a.shape(1) == 4, "expected a (T,4) box array of x,y,w,h");
    std::vector<BBox> out(static_cast<size_t>(a.shape(0)));
    for (py::ssize_t t = 0; t < a.shape(0); ++t) {
        const double* row = a.data() + 4 * t;
        out[static_cast<size_t>(t)] = BBox{row[0], row[1], row[2], row[3]};
    }
    return out;
}

py::array boxes_to_numpy(const std::vector<BBox>& boxes) {
    py::array_t<double> a({static_cast<py::ssize_t>(boxes.size()), py::ssize_t(4)});
    double* p = a.mutable_data();
    for (const BBox& b : boxes) {
        *p++ = b.x;
        *p++ = b.y;
        *p++ = b.w;
        *p++ = b.h;
    }
    return a;
}

py::array frames_to_numpy(const std::vector<Tensor<float>>& frames) {
    check(!frames.empty(), "no frames");
    const Shape& s = frames[0].shape();
    py::array_t<float> a({static_cast<py::ssize_t>(frames.size()),
                          static_cast<py::ssize_t>(s[0]), static_cast<py::ssize_t>(s[1]),
                          static_cast<py::ssize_t>(s[2])});
    float* p = a.mutable_data();
    for (const Tensor<float>& f : frames) {
        std::memcpy(p, f.data().data(), f.data().size() * sizeof(float));
        p += f.data().size();
    }
    return a;
}

py::dict report_to_dict(const MetricReport& r) {
    double iou_sum = 0;
    for (double v : r.per_frame_iou) iou_sum += v;
    py::dict d;
    d["precision_at_20"] = r.precision_at_20;
    d["norm_precision_at_02"] = r.norm_precision_at_02;
    d["success_auc"] = r.success_auc;
    d["mean_iou"] = r.per_frame_iou.empty() ? 0.0
                                            : iou_sum / static_cast<double>(r.per_frame_iou.size());
    d["n_frames"] = r.per_frame_iou.size();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "prompted night-tracking core: synthetic scenes, training, "
              "tracking, metrics and gradient verification";

    py::class_<TrackerConfig>(m, "TrackerConfig")
        .def(py::init<>())
        .def_readwrite("search_size", &TrackerConfig::search_size)
        .def_readwrite("template_size", &TrackerConfig::template_size)
        .def_readwrite("patch_size", &TrackerConfig::patch_size)
        .def_readwrite("embed_dim", &TrackerConfig::embed_dim)
        .def_readwrite("depth", &TrackerConfig::depth)
        .def_readwrite("heads", &TrackerConfig::heads)
        .def_readwrite("n_pyramid_levels", &TrackerConfig::n_pyramid_levels)
        .def_readwrite("illum_level_width", &TrackerConfig::illum_level_width)
        .def_readwrite("view_coarse_width", &TrackerConfig::view_coarse_width)
        .def_readwrite("view_deform_width", &TrackerConfig::view_deform_width)
        .def_readwrite("view_width", &TrackerConfig::view_width)
        .def_readwrite("head_hidden", &TrackerConfig::head_hidden)
        .def_readwrite("share_pfi_mlps", &TrackerConfig::share_pfi_mlps)
        .def_readwrite("freeze_backbone", &TrackerConfig::freeze_backbone)
        .def_readwrite("lr", &TrackerConfig::lr)
        .def_readwrite("weight_decay", &TrackerConfig::weight_decay)
        .def_readwrite("steps", &TrackerConfig::steps)
        .def_readwrite("batch", &TrackerConfig::batch)
        .def_readwrite("seed", &TrackerConfig::seed);

    py::class_<SceneConfig>(m, "SceneConfig")
        .def(py::init<>())
        .def_readwrite("frame_size", &SceneConfig::frame_size)
        .def_readwrite("n_frames", &SceneConfig::n_frames)
        .def_readwrite("base_brightness", &SceneConfig::base_brightness)
        .def_readwrite("illum_jitter", &SceneConfig::illum_jitter)
        .def_readwrite("view_warp", &SceneConfig::view_warp)
        .def_readwrite("motion", &SceneConfig::motion)
        .def_readwrite("noise_sigma", &SceneConfig::noise_sigma)
        .def_readwrite("seed", &SceneConfig::seed)
        .def_property(
            "target_shape",
            [](const SceneConfig& c) { return to_string(c.target_shape); },
            [](SceneConfig& c, const std::string& s) {
                c.target_shape = target_shape_from_string(s);
            });

    py::class_<Tracker<float>>(m, "Tracker")
        .def(py::init([](const TrackerConfig& cfg) { return make_tracker<float>(cfg); }),
             py::arg("config"))
        .def_readonly("cfg", &Tracker<float>::cfg)
        .def("track",
             [](Tracker<float>& t, const ArrayF& frames, const ArrayD& init) {
                 return boxes_to_numpy(
                     track_sequence(t, frames_from_numpy(frames), box_from_numpy(init)));
             },
             py::arg("frames"), py::arg("init_box"),
             "Track a [T,C,H,W] frame stack from a frame-0 box; returns (T,4) boxes.")
        .def("forward",
             [](Tracker<float>& t, const ArrayF& tmpl, const ArrayF& srch, bool training) {
                 HeadOutput<float> h = tracker_forward(t, image_from_numpy(tmpl),
                                                       image_from_numpy(srch), training);
                 return py::make_tuple(tensor_to_numpy(h.center_map),
                                       tensor_to_numpy(h.size_map),
                                       tensor_to_numpy(h.offset_map));
             },
             py::arg("template_img"), py::arg("search_img"), py::arg("training") = false,
             "Run one template/search pair; returns (center, size, offset) maps.")
        .def("zero_interaction_coefficients",
             [](Tracker<float>& t) { zero_interaction_coefficients(t); },
             "Zero the prompt-fusion coefficients (prompt-free ablation).")
        .def("save", [](Tracker<float>& t, const std::string& path) { save_checkpoint(path, t); },
             py::arg("path"))
        .def("load", [](Tracker<float>& t, const std::string& path) { load_checkpoint(path, t); },
             py::arg("path"));

    m.def(
        "gen_sequence",
        [](const SceneConfig& cfg) {
            const Sequence seq = gen_sequence(cfg);
            return py::make_tuple(frames_to_numpy(seq.frames),
                                  boxes_to_numpy(seq.annotations));
        },
        py::arg("config"),
        "Generate one synthetic sequence; returns ([T,C,H,W] frames, (T,4) boxes).");

    m.def(
        "train_tracker",
        [](Tracker<float>& t, const std::vector<py::tuple>& dataset) {
            std::vector<Sequence> seqs;
            for (const py::tuple& pair : dataset) {
                check(pair.size() == 2, "dataset entries must be (frames, boxes) pairs");
                Sequence s;
                s.frames = frames_from_numpy(pair[0].cast<ArrayF>());
                s.annotations = boxes_from_numpy(pair[1].cast<ArrayD>());
                seqs.push_back(std::move(s));
            }
            const std::vector<TrainRow> rows = train_tracker(t, seqs);
            py::array_t<double> log({static_cast<py::ssize_t>(rows.size()), py::ssize_t(3)});
            double* p = log.mutable_data();
            for (const TrainRow& r : rows) {
                *p++ = r.step;
                *p++ = r.loss;
                *p++ = r.lr;
            }
            return log;
        },
        py::arg("tracker"), py::arg("dataset"),
        "Train in place on [(frames, boxes), ...]; returns a (steps,3) array of "
        "step, loss, lr.");

    m.def(
        "evaluate_trajectory",
        [](const ArrayD& pred, const ArrayD& gt) {
            return report_to_dict(
                evaluate_trajectory(boxes_from_numpy(pred), boxes_from_numpy(gt)));
        },
        py::arg("pred"), py::arg("gt"),
        "Score a predicted (T,4) trajectory against ground truth.");

    m.def(
        "build_pyramid",
        [](Tracker<float>& t, const ArrayF& image) {
            const PyramidLevels<float> p =
                build_pyramid(t.backbone.illum_srch, image_from_numpy(image));
            py::list gs, ls;
            for (const auto& g : p.gaussians) gs.append(tensor_to_numpy(g));
            for (const auto& l : p.laplacians) ls.append(tensor_to_numpy(l));
            return py::make_tuple(gs, ls);
        },
        py::arg("tracker"), py::arg("image"),
        "Decompose a [C,H,W] image with the tracker's learned pyramid; returns "
        "(gaussian levels, laplacian residuals).");

    m.def(
        "gradcheck",
        [](const std::string& scope) {
            py::list out;
            for (const VerifyCheck& c : verify_scope(scope)) {
                py::dict d;
                d["name"] = c.name;
                d["h"] = c.h;
                d["max_rel_err"] = c.report.max_err;
                d["pass"] = c.pass;
                out.append(d);
            }
            return out;
        },
        py::arg("scope"),
        "Run a finite-difference suite (ops | prompters | block | model).");

    m.def("iou", [](const ArrayD& a, const ArrayD& b) {
        return iou(box_from_numpy(a), box_from_numpy(b));
    });
    m.def("cle", [](const ArrayD& a, const ArrayD& b) {
        return cle(box_from_numpy(a), box_from_numpy(b));
    });
}

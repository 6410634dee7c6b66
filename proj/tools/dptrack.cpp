// dptrack: generate synthetic night scenes, train the prompted tracker,
// run it over sequences, score trajectories, and verify gradients.
//
// Exit codes: 0 success, 1 usage/config error, 2 verification failure,
// 3 I/O error. Every artifact-writing command drops a config echo next to
// its output so runs can be reproduced from the artifacts alone.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dpt/checkpoint.hpp"
#include "dpt/eval.hpp"
#include "dpt/runconfig.hpp"
#include "dpt/train.hpp"
#include "dpt/verify.hpp"

namespace fs = std::filesystem;
using namespace dpt;

namespace {

// Thrown where a failure is an I/O problem (missing/unwritable file) rather
// than a bad flag or config, so main can map it to exit code 3.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Run `f` (which must only do file I/O) and convert its failures to IoError.
template <typename F>
auto as_io(F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw IoError(e.what());
    }
}

void require_readable(const fs::path& p) {
    std::error_code ec;
    if (!fs::exists(p, ec) || ec) throw IoError("no such path: " + p.string());
}

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    require_readable(path);
    return load_run_config(path);
}

std::vector<Sequence> load_dataset(const fs::path& dir) {
    require_readable(dir);
    std::vector<Sequence> out;
    for (int i = 0;; ++i) {
        const fs::path d = dir / ("seq_" + std::to_string(i));
        if (!fs::exists(d)) break;
        out.push_back(as_io([&] { return load_sequence(d); }));
    }
    if (out.empty()) throw IoError("no seq_<k> directories under " + dir.string());
    return out;
}

void ensure_parent(const fs::path& path) {
    as_io([&] {
        const fs::path dir = path.parent_path();
        if (!dir.empty()) fs::create_directories(dir);
        return 0;
    });
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    as_io([&] {
        std::ofstream f(path);
        check(f.good(), "cannot open " + path.string() + " for writing");
        f << text;
        check(f.good(), "short write to " + path.string());
        return 0;
    });
}

// Sidecar paths tied to a checkpoint or prediction artifact.
std::string config_echo_path(const std::string& artifact) { return artifact + ".config.json"; }

// When tracking/evaluating from a checkpoint, the model geometry must match
// the training run; prefer the explicit flag, then the checkpoint's config
// echo, then compiled-in defaults.
RunConfig resolve_ckpt_config(const std::string& config_flag, const std::string& ckpt) {
    if (!config_flag.empty()) {
        require_readable(config_flag);
        return load_run_config(config_flag);
    }
    const fs::path sidecar = config_echo_path(ckpt);
    if (fs::exists(sidecar)) return load_run_config(sidecar);
    return RunConfig{};
}

Tracker<float> tracker_from_checkpoint(const RunConfig& cfg, const std::string& ckpt) {
    Tracker<float> trk = make_tracker<float>(cfg.tracker);
    require_readable(ckpt);
    as_io([&] {
        load_checkpoint(ckpt, trk);
        return 0;
    });
    return trk;
}

int cmd_gen(const std::string& config, const std::string& out, int seqs_flag,
            std::optional<uint64_t> seed) {
    RunConfig cfg = load_config_or_default(config);
    if (seqs_flag > 0) cfg.n_sequences = seqs_flag;
    if (seed) cfg.scene.seed = *seed;
    as_io([&] {
        fs::create_directories(out);
        return 0;
    });
    for (int i = 0; i < cfg.n_sequences; ++i) {
        SceneConfig sc = cfg.scene;
        sc.seed = cfg.scene.seed + static_cast<uint64_t>(i);
        const Sequence seq = gen_sequence(sc);
        as_io([&] {
            save_sequence(fs::path(out) / ("seq_" + std::to_string(i)), seq);
            return 0;
        });
    }
    as_io([&] {
        save_run_config(fs::path(out) / "config.json", cfg);
        return 0;
    });
    std::cout << "wrote " << cfg.n_sequences << " sequences ("
              << cfg.scene.n_frames << " frames of " << cfg.scene.frame_size << "x"
              << cfg.scene.frame_size << ") to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              std::optional<uint64_t> seed) {
    RunConfig cfg = load_config_or_default(config);
    if (seed) cfg.tracker.seed = *seed;
    const std::vector<Sequence> dataset = load_dataset(data);
    Tracker<float> trk = make_tracker<float>(cfg.tracker);
    const std::vector<TrainRow> rows = train_tracker(trk, dataset);
    ensure_parent(out);
    as_io([&] {
        save_checkpoint(out, trk);
        return 0;
    });
    std::ostringstream csv;
    write_loss_csv(csv, rows);
    write_text(out + ".loss.csv", csv.str());
    as_io([&] {
        save_run_config(config_echo_path(out), cfg);
        return 0;
    });
    std::cout << "trained " << rows.size() << " steps on " << dataset.size()
              << " sequences; final loss " << rows.back().loss << "; wrote " << out << "\n";
    return 0;
}

int cmd_track(const std::string& config, const std::string& ckpt, const std::string& seq_dir,
              const std::string& out) {
    const RunConfig cfg = resolve_ckpt_config(config, ckpt);
    Tracker<float> trk = tracker_from_checkpoint(cfg, ckpt);
    require_readable(seq_dir);
    const Sequence seq = as_io([&] { return load_sequence(seq_dir); });
    check(!seq.annotations.empty(), "sequence has no ground truth to initialize from");
    const std::vector<BBox> pred = track_sequence(trk, seq.frames, seq.annotations[0]);
    write_text(out, save_annotations(pred));
    as_io([&] {
        save_run_config(config_echo_path(out), cfg);
        return 0;
    });
    std::cout << "tracked " << pred.size() << " frames; wrote " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& config, const std::string& pred, const std::string& gt,
             const std::string& ckpt, const std::string& data, int workers,
             const std::string& out, const std::string& curves) {
    nlohmann::json report;
    MetricReport curves_source;
    if (!pred.empty()) {
        check(!gt.empty(), "--pred requires --gt");
        require_readable(pred);
        // ground truth may be a gt.jsonl or a sequence directory holding one
        fs::path gt_path = gt;
        if (fs::is_directory(gt_path)) gt_path /= "gt.jsonl";
        require_readable(gt_path);
        const auto read_file = [](const fs::path& p) {
            std::ifstream f(p);
            check(f.good(), "cannot open " + p.string());
            std::ostringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        const std::vector<BBox> pred_boxes =
            load_annotations(as_io([&] { return read_file(pred); }));
        const std::vector<BBox> gt_boxes =
            load_annotations(as_io([&] { return read_file(gt_path); }));
        curves_source = evaluate_trajectory(pred_boxes, gt_boxes);
        report = report_to_json(curves_source);
    } else {
        check(!ckpt.empty() && !data.empty(),
              "eval needs either --pred/--gt or --ckpt/--data");
        RunConfig cfg = resolve_ckpt_config(config, ckpt);
        if (workers > 0) cfg.eval_workers = workers;
        Tracker<float> trk = tracker_from_checkpoint(cfg, ckpt);
        const std::vector<Sequence> dataset = load_dataset(data);
        const TrackFn fn = [&](const std::vector<Tensor<float>>& frames, const BBox& init) {
            return track_sequence(trk, frames, init);
        };
        const OpeResult res = run_ope(fn, dataset, cfg.eval_workers);
        curves_source = res.aggregate;
        report = ope_to_json(res);
    }
    const std::string text = report.dump(2) + "\n";
    if (out.empty())
        std::cout << text;
    else
        write_text(out, text);
    if (!curves.empty()) {
        write_text(curves + ".precision.csv", precision_curve_csv(curves_source));
        write_text(curves + ".success.csv", success_curve_csv(curves_source));
    }
    return 0;
}

int cmd_gradcheck(const std::string& scope) {
    const std::vector<VerifyCheck> checks = verify_scope(scope);
    bool all = true;
    for (const VerifyCheck& c : checks) {
        std::printf("%-28s h=%.0e  max_rel_err=%.3e  %s\n", c.name.c_str(), c.h,
                    c.report.max_err, c.pass ? "pass" : "FAIL");
        all = all && c.pass;
    }
    std::printf("%s: %zu checks %s\n", scope.c_str(), checks.size(),
                all ? "passed" : "FAILED");
    return all ? 0 : 2;
}

// Min/max-normalize one pyramid level into [0,1] for PPM dumping; the
// original range goes into the sidecar so values can be recovered.
Tensor<float> normalize_level(const Tensor<float>& t, float& lo, float& hi) {
    const auto& v = t.data();
    lo = hi = v[0];
    for (float x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    std::vector<float> scaled(v.size(), 0.0f);
    if (hi > lo)
        for (size_t i = 0; i < v.size(); ++i) scaled[i] = (v[i] - lo) / (hi - lo);
    return Tensor<float>::from_data(t.shape(), scaled);
}

int cmd_pyramid(const std::string& config, const std::string& ckpt, bool init,
                const std::string& image_path, const std::string& out) {
    check(init != !ckpt.empty(), "pass exactly one of --ckpt or --init");
    RunConfig cfg = resolve_ckpt_config(config, ckpt);
    Tracker<float> trk = ckpt.empty() ? make_tracker<float>(cfg.tracker)
                                      : tracker_from_checkpoint(cfg, ckpt);
    require_readable(image_path);
    const Tensor<float> image = as_io([&] { return load_ppm_file(image_path); });
    const PyramidLevels<float> pyr = build_pyramid(trk.backbone.illum_srch, image);
    as_io([&] {
        fs::create_directories(out);
        return 0;
    });
    nlohmann::json sidecar = {{"gaussians", nlohmann::json::array()},
                              {"laplacians", nlohmann::json::array()}};
    const auto dump = [&](const char* stem, const std::vector<Tensor<float>>& levels,
                          const char* key) {
        for (size_t i = 0; i < levels.size(); ++i) {
            float lo = 0, hi = 0;
            const Tensor<float> scaled = normalize_level(levels[i], lo, hi);
            const std::string name = std::string(stem) + std::to_string(i) + ".ppm";
            as_io([&] {
                save_ppm_file(fs::path(out) / name, scaled);
                return 0;
            });
            sidecar[key].push_back({{"file", name}, {"min", lo}, {"max", hi}});
        }
    };
    dump("G", pyr.gaussians, "gaussians");
    dump("L", pyr.laplacians, "laplacians");
    write_text(fs::path(out) / "levels.json", sidecar.dump(2) + "\n");
    as_io([&] {
        save_run_config(fs::path(out) / "config.json", cfg);
        return 0;
    });
    std::cout << "wrote " << pyr.gaussians.size() << " gaussian and "
              << pyr.laplacians.size() << " laplacian levels to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable-prompt tracker: synthetic data, training, tracking, "
                 "evaluation and gradient verification"};
    app.require_subcommand(1);

    std::string config, out, data, ckpt, seq_dir, pred, gt, scope, image, curves;
    int seqs = 0, workers = 0;
    bool init_model = false;
    std::optional<uint64_t> seed;

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic sequences");
    gen->add_option("--config", config, "run config JSON (defaults apply if omitted)");
    gen->add_option("--out", out, "output dataset directory")->required();
    gen->add_option("--seqs", seqs, "override run.n_sequences (default 8)");
    gen->add_option("--seed", seed, "override scene.seed (default 1)");

    CLI::App* train = app.add_subcommand("train", "train a tracker on a dataset");
    train->add_option("--config", config, "run config JSON (defaults apply if omitted)");
    train->add_option("--data", data, "dataset directory from `gen`")->required();
    train->add_option("--out", out, "checkpoint path to write")->required();
    train->add_option("--seed", seed, "override tracker.seed (default 1)");

    CLI::App* track = app.add_subcommand("track", "track one sequence from a checkpoint");
    track->add_option("--config", config,
                      "run config JSON (default: <ckpt>.config.json, then built-ins)");
    track->add_option("--ckpt", ckpt, "checkpoint path")->required();
    track->add_option("--seq", seq_dir, "sequence directory")->required();
    track->add_option("--out", out, "predictions JSONL path")->required();

    CLI::App* eval = app.add_subcommand("eval", "score predictions or a checkpoint");
    eval->add_option("--config", config,
                     "run config JSON (default: <ckpt>.config.json, then built-ins)");
    eval->add_option("--pred", pred, "predicted-trajectory JSONL");
    eval->add_option("--gt", gt, "ground-truth JSONL or sequence directory");
    eval->add_option("--ckpt", ckpt, "checkpoint to evaluate");
    eval->add_option("--data", data, "dataset directory to evaluate on");
    eval->add_option("--workers", workers, "sequence-level parallelism (default run.eval_workers = 1)");
    eval->add_option("--out", out, "write report JSON here instead of stdout");
    eval->add_option("--curves", curves,
                     "prefix for <prefix>.precision.csv / <prefix>.success.csv");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    gradcheck->add_option("--scope", scope, "ops | prompters | block | model")->required();

    CLI::App* pyramid = app.add_subcommand("pyramid", "dump learned pyramid levels as PPM");
    pyramid->add_option("--config", config,
                        "run config JSON (default: <ckpt>.config.json, then built-ins)");
    pyramid->add_option("--ckpt", ckpt, "checkpoint whose pyramid to dump");
    pyramid->add_flag("--init", init_model, "use a freshly initialized model instead");
    pyramid->add_option("--image", image, "input PPM image")->required();
    pyramid->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(config, out, seqs, seed);
        if (train->parsed()) return cmd_train(config, data, out, seed);
        if (track->parsed()) return cmd_track(config, ckpt, seq_dir, out);
        if (eval->parsed()) return cmd_eval(config, pred, gt, ckpt, data, workers, out, curves);
        if (gradcheck->parsed()) return cmd_gradcheck(scope);
        if (pyramid->parsed()) return cmd_pyramid(config, ckpt, init_model, image, out);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

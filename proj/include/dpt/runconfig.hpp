#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "dpt/data.hpp"
#include "dpt/tracker.hpp"

namespace dpt {

// Everything a run needs in one diffable document: a "tracker" section
// mirroring TrackerConfig, a "scene" section mirroring SceneConfig, and a
// "run" section for artifact-level knobs. Absent keys keep the compiled-in
// defaults; unknown keys are rejected so a typo fails loudly instead of
// silently running with the default it was meant to override.
struct RunConfig {
    TrackerConfig tracker;
    SceneConfig scene;
    int n_sequences = 8;   // sequences written by gen / drawn from by train
    int eval_workers = 1;  // sequence-level parallelism in eval
};

inline std::string to_string(TargetShape s) {
    return s == TargetShape::square ? "square" : "disc";
}

inline TargetShape target_shape_from_string(const std::string& s) {
    if (s == "square") return TargetShape::square;
    if (s == "disc") return TargetShape::disc;
    check(false, "target_shape must be \"square\" or \"disc\", got \"" + s + "\"");
    return TargetShape::square;
}

namespace detail {

template <typename T>
void assign(const nlohmann::json& v, T& out) {
    out = v.get<T>();
}

inline void apply_tracker_key(TrackerConfig& t, const std::string& key,
                              const nlohmann::json& v) {
    if (key == "search_size") return assign(v, t.search_size);
    if (key == "template_size") return assign(v, t.template_size);
    if (key == "patch_size") return assign(v, t.patch_size);
    if (key == "embed_dim") return assign(v, t.embed_dim);
    if (key == "depth") return assign(v, t.depth);
    if (key == "heads") return assign(v, t.heads);
    if (key == "n_pyramid_levels") return assign(v, t.n_pyramid_levels);
    if (key == "illum_level_width") return assign(v, t.illum_level_width);
    if (key == "view_coarse_width") return assign(v, t.view_coarse_width);
    if (key == "view_deform_width") return assign(v, t.view_deform_width);
    if (key == "view_width") return assign(v, t.view_width);
    if (key == "head_hidden") return assign(v, t.head_hidden);
    if (key == "share_pfi_mlps") return assign(v, t.share_pfi_mlps);
    if (key == "freeze_backbone") return assign(v, t.freeze_backbone);
    if (key == "lr") return assign(v, t.lr);
    if (key == "weight_decay") return assign(v, t.weight_decay);
    if (key == "steps") return assign(v, t.steps);
    if (key == "batch") return assign(v, t.batch);
    if (key == "seed") return assign(v, t.seed);
    check(false, "unknown key \"" + key + "\" in section \"tracker\"");
}

inline void apply_scene_key(SceneConfig& s, const std::string& key,
                            const nlohmann::json& v) {
    if (key == "frame_size") return assign(v, s.frame_size);
    if (key == "n_frames") return assign(v, s.n_frames);
    if (key == "target_shape") {
        s.target_shape = target_shape_from_string(v.get<std::string>());
        return;
    }
    if (key == "base_brightness") return assign(v, s.base_brightness);
    if (key == "illum_jitter") return assign(v, s.illum_jitter);
    if (key == "view_warp") return assign(v, s.view_warp);
    if (key == "motion") return assign(v, s.motion);
    if (key == "noise_sigma") return assign(v, s.noise_sigma);
    if (key == "seed") return assign(v, s.seed);
    check(false, "unknown key \"" + key + "\" in section \"scene\"");
}

inline void apply_run_key(RunConfig& r, const std::string& key, const nlohmann::json& v) {
    if (key == "n_sequences") return assign(v, r.n_sequences);
    if (key == "eval_workers") return assign(v, r.eval_workers);
    check(false, "unknown key \"" + key + "\" in section \"run\"");
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        check(j.is_object(), "config root must be a JSON object");
        for (const auto& [section, body] : j.items()) {
            check(body.is_object(), "section \"" + section + "\" must be a JSON object");
            for (const auto& [key, value] : body.items()) {
                if (section == "tracker")
                    detail::apply_tracker_key(cfg.tracker, key, value);
                else if (section == "scene")
                    detail::apply_scene_key(cfg.scene, key, value);
                else if (section == "run")
                    detail::apply_run_key(cfg, key, value);
                else
                    check(false, "unknown section \"" + section + "\"");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        check(false, std::string("config: ") + e.what());
    }
    check(cfg.n_sequences > 0, "run.n_sequences must be positive");
    check(cfg.eval_workers > 0, "run.eval_workers must be positive");
    validate(cfg.tracker);
    return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    const TrackerConfig& t = cfg.tracker;
    const SceneConfig& s = cfg.scene;
    return {
        {"tracker",
         {{"search_size", t.search_size},
          {"template_size", t.template_size},
          {"patch_size", t.patch_size},
          {"embed_dim", t.embed_dim},
          {"depth", t.depth},
          {"heads", t.heads},
          {"n_pyramid_levels", t.n_pyramid_levels},
          {"illum_level_width", t.illum_level_width},
          {"view_coarse_width", t.view_coarse_width},
          {"view_deform_width", t.view_deform_width},
          {"view_width", t.view_width},
          {"head_hidden", t.head_hidden},
          {"share_pfi_mlps", t.share_pfi_mlps},
          {"freeze_backbone", t.freeze_backbone},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"steps", t.steps},
          {"batch", t.batch},
          {"seed", t.seed}}},
        {"scene",
         {{"frame_size", s.frame_size},
          {"n_frames", s.n_frames},
          {"target_shape", to_string(s.target_shape)},
          {"base_brightness", s.base_brightness},
          {"illum_jitter", s.illum_jitter},
          {"view_warp", s.view_warp},
          {"motion", s.motion},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}}},
        {"run", {{"n_sequences", cfg.n_sequences}, {"eval_workers", cfg.eval_workers}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    check(f.good(), "cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        check(false, path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

// Config echo written alongside every artifact, so a run can always be
// reproduced from its outputs alone.
inline void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream f(path);
    check(f.good(), "cannot open " + path.string() + " for writing");
    f << run_config_to_json(cfg).dump(2) << "\n";
    check(f.good(), "short write to " + path.string());
}

}  // namespace dpt

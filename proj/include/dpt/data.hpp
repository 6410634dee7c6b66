#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpt/bbox.hpp"
#include "dpt/tensor.hpp"

namespace dpt {

enum class TargetShape { square, disc };

// Knobs for the synthetic night-scene generator: a bright target drifting
// over a dark textured background, with per-frame affine wobble (viewpoint),
// global gain/gamma flicker (illumination) and sensor noise.
struct SceneConfig {
    int frame_size = 128;
    int n_frames = 20;
    TargetShape target_shape = TargetShape::square;
    double base_brightness = 0.15;
    double illum_jitter = 0.15;  // amplitude of per-frame gain/gamma modulation
    double view_warp = 0.08;     // max rotation (rad), shear and scale deviation
    double motion = 2.0;         // max per-frame translation, px
    double noise_sigma = 0.03;
    uint64_t seed = 1;
};

struct Sequence {
    std::vector<Tensor<float>> frames;  // [3,H,W], values in [0,1]
    std::vector<BBox> annotations;
};

namespace detail {

struct Affine2 {
    // row-major 2x2: maps canonical target coords to frame offsets
    double m00 = 1, m01 = 0, m10 = 0, m11 = 1;

    Affine2 inverse() const {
        const double det = m00 * m11 - m01 * m10;
        check(std::abs(det) > 1e-9, "degenerate target warp");
        return {m11 / det, -m01 / det, -m10 / det, m00 / det};
    }
};

inline void validate(const SceneConfig& cfg) {
    check(cfg.frame_size >= 32, "frame_size must be at least 32");
    check(cfg.n_frames >= 1, "n_frames must be positive");
    check(cfg.base_brightness > 0.0 && cfg.base_brightness < 1.0,
          "base_brightness must lie in (0,1)");
    check(cfg.illum_jitter >= 0.0 && cfg.illum_jitter <= 0.5,
          "illum_jitter must lie in [0,0.5]");
    check(cfg.view_warp >= 0.0 && cfg.view_warp <= 0.3, "view_warp must lie in [0,0.3]");
    check(cfg.motion >= 0.0 && cfg.motion <= cfg.frame_size / 4.0,
          "motion amplitude too large for the frame");
    check(cfg.noise_sigma >= 0.0 && cfg.noise_sigma <= 0.2,
          "noise_sigma must lie in [0,0.2]");
}

}  // namespace detail

inline Sequence gen_sequence(const SceneConfig& cfg) {
    detail::validate(cfg);
    Rng rng(cfg.seed);
    const int n = cfg.frame_size;
    const double r = std::max(4.0, n / 10.0);  // canonical target half-size

    // static background texture: dark base plus two low-amplitude waves
    const double fy1 = rng.uniform(2.0, 5.0), fx1 = rng.uniform(2.0, 5.0);
    const double ph1 = rng.uniform(0.0, 6.28318), ph2 = rng.uniform(0.0, 6.28318);
    const double fy2 = rng.uniform(5.0, 9.0), fx2 = rng.uniform(5.0, 9.0);
    const double ph3 = rng.uniform(0.0, 6.28318), ph4 = rng.uniform(0.0, 6.28318);
    auto background = [&](int y, int x) {
        const double u = static_cast<double>(y) / n, v = static_cast<double>(x) / n;
        const double g = 0.5 + 0.25 * std::sin(fy1 * u * 6.28318 + ph1) *
                                   std::cos(fx1 * v * 6.28318 + ph2) +
                         0.25 * std::sin(fy2 * u * 6.28318 + ph3) *
                             std::sin(fx2 * v * 6.28318 + ph4);
        return cfg.base_brightness * (0.8 + 0.4 * g);
    };

    // the target is bright against the dark scene, with a per-sequence tint
    double color[3];
    for (double& c : color) c = rng.uniform(0.5, 0.8);

    double cx = n / 2.0 + rng.uniform(-0.05, 0.05) * n;
    double cy = n / 2.0 + rng.uniform(-0.05, 0.05) * n;

    Sequence seq;
    for (int t = 0; t < cfg.n_frames; ++t) {
        if (t > 0) {
            cx += rng.uniform(-cfg.motion, cfg.motion);
            cy += rng.uniform(-cfg.motion, cfg.motion);
        }
        // per-frame viewpoint wobble: rotation * shear * isotropic scale
        const double theta = rng.uniform(-cfg.view_warp, cfg.view_warp);
        const double shear = rng.uniform(-cfg.view_warp, cfg.view_warp);
        const double scale = 1.0 + rng.uniform(-cfg.view_warp, cfg.view_warp);
        detail::Affine2 m{1, 0, 0, 1};
        if (cfg.view_warp > 0.0) {
            const double c = std::cos(theta), s = std::sin(theta);
            // R(theta) * [[1,shear],[0,1]] * scale
            m = {scale * c, scale * (c * shear - s), scale * s, scale * (s * shear + c)};
        }

        // exact bounds of the warped shape: square corners or ellipse extents
        double hx, hy;
        if (cfg.target_shape == TargetShape::square) {
            hx = r * (std::abs(m.m00) + std::abs(m.m01));
            hy = r * (std::abs(m.m10) + std::abs(m.m11));
        } else {
            hx = r * std::hypot(m.m00, m.m01);
            hy = r * std::hypot(m.m10, m.m11);
        }
        check(2.0 * hx + 2.0 <= n && 2.0 * hy + 2.0 <= n,
              "warp amplitude leaves no room for the target inside the frame");
        cx = std::clamp(cx, hx + 1.0, n - 1.0 - hx);
        cy = std::clamp(cy, hy + 1.0, n - 1.0 - hy);
        seq.annotations.push_back({cx - hx, cy - hy, 2.0 * hx, 2.0 * hy});

        const double gain = 1.0 + rng.uniform(-cfg.illum_jitter, cfg.illum_jitter);
        const double gamma = 1.0 + rng.uniform(-cfg.illum_jitter, cfg.illum_jitter);

        const detail::Affine2 inv = m.inverse();
        std::vector<float> px(static_cast<size_t>(3) * n * n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                // membership test in canonical coordinates, 1-px soft edge
                const double dx = x - cx, dy = y - cy;
                const double ux = inv.m00 * dx + inv.m01 * dy;
                const double uy = inv.m10 * dx + inv.m11 * dy;
                double dist;  // signed distance-ish: <=0 inside
                if (cfg.target_shape == TargetShape::square)
                    dist = std::max(std::abs(ux), std::abs(uy)) - r;
                else
                    dist = std::hypot(ux, uy) - r;
                const double cover = std::clamp(0.5 - dist, 0.0, 1.0);
                const double bg = background(y, x);
                for (int c = 0; c < 3; ++c) {
                    double v = bg + cover * (color[c] - bg);
                    if (cfg.illum_jitter > 0.0) v = gain * std::pow(v, gamma);
                    px[(static_cast<size_t>(c) * n + y) * n + x] = static_cast<float>(v);
                }
            }
        if (cfg.noise_sigma > 0.0)
            for (auto& v : px) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
        for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
        seq.frames.push_back(Tensor<float>::from_data({3, n, n}, std::move(px)));
    }
    return seq;
}

// --- PPM P6 (binary, maxval 255, round-half-up quantization) ---

inline std::vector<unsigned char> save_ppm(const Tensor<float>& image) {
    check(image.rank() == 3 && image.dim(0) == 3,
          "save_ppm expects [3,H,W], got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + static_cast<size_t>(3) * h * w);
    const auto& v = image.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float f = v[(static_cast<size_t>(c) * h + y) * w + x];
                check(f >= 0.0f && f <= 1.0f, "save_ppm: pixel value outside [0,1]");
                out.push_back(static_cast<unsigned char>(std::floor(f * 255.0f + 0.5f)));
            }
    return out;
}

namespace detail {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
inline std::string ppm_token(const std::vector<unsigned char>& b, size_t& pos) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#')
        tok.push_back(static_cast<char>(b[pos++]));
    check(!tok.empty(), "load_ppm: truncated header");
    return tok;
}

}  // namespace detail

inline Tensor<float> load_ppm(const std::vector<unsigned char>& bytes) {
    size_t pos = 0;
    check(detail::ppm_token(bytes, pos) == "P6", "load_ppm: missing P6 magic");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(detail::ppm_token(bytes, pos));
        h = std::stoi(detail::ppm_token(bytes, pos));
        maxval = std::stoi(detail::ppm_token(bytes, pos));
    } catch (const std::exception&) {
        throw std::invalid_argument("load_ppm: malformed header dimensions");
    }
    check(w > 0 && h > 0, "load_ppm: non-positive dimensions");
    check(maxval == 255, "load_ppm: only maxval 255 is supported, got " +
                             std::to_string(maxval));
    check(pos < bytes.size() && std::isspace(bytes[pos]),
          "load_ppm: missing whitespace after maxval");
    ++pos;  // exactly one whitespace byte separates header and payload
    const size_t need = static_cast<size_t>(3) * w * h;
    check(bytes.size() - pos >= need,
          "load_ppm: truncated payload (" + std::to_string(bytes.size() - pos) + " of " +
              std::to_string(need) + " bytes)");
    std::vector<float> v(need);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                v[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(bytes[pos++]) / 255.0f;
    return Tensor<float>::from_data({3, h, w}, std::move(v));
}

inline void save_ppm_file(const std::filesystem::path& path, const Tensor<float>& image) {
    auto bytes = save_ppm(image);
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    check(f.good(), "short write to " + path.string());
}

inline Tensor<float> load_ppm_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return load_ppm(bytes);
}

// --- JSON-lines annotations: {"frame":i,"x":..,"y":..,"w":..,"h":..} ---

inline std::string save_annotations(const std::vector<BBox>& boxes) {
    std::string out;
    for (size_t i = 0; i < boxes.size(); ++i) {
        nlohmann::json j{{"frame", i},
                         {"x", boxes[i].x},
                         {"y", boxes[i].y},
                         {"w", boxes[i].w},
                         {"h", boxes[i].h}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<BBox> load_annotations(const std::string& text) {
    std::vector<BBox> boxes;
    size_t start = 0;
    int line_no = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("annotations line " + std::to_string(line_no) +
                                        ": invalid JSON (" + e.what() + ")");
        }
        try {
            const auto frame = j.at("frame").get<int64_t>();
            check(frame == static_cast<int64_t>(boxes.size()),
                  "annotations line " + std::to_string(line_no) + ": expected frame " +
                      std::to_string(boxes.size()) + ", got " + std::to_string(frame));
            boxes.push_back({j.at("x").get<double>(), j.at("y").get<double>(),
                             j.at("w").get<double>(), j.at("h").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("annotations line " + std::to_string(line_no) +
                                        ": missing field (" + e.what() + ")");
        }
    }
    return boxes;
}

// --- directory layout: seq_<k>/frame_<n>.ppm + seq_<k>/gt.jsonl ---

inline void save_sequence(const std::filesystem::path& dir, const Sequence& seq) {
    check(seq.frames.size() == seq.annotations.size(),
          "sequence has " + std::to_string(seq.frames.size()) + " frames but " +
              std::to_string(seq.annotations.size()) + " annotations");
    std::filesystem::create_directories(dir);
    for (size_t i = 0; i < seq.frames.size(); ++i)
        save_ppm_file(dir / ("frame_" + std::to_string(i) + ".ppm"), seq.frames[i]);
    std::ofstream f(dir / "gt.jsonl");
    check(f.good(), "cannot open " + (dir / "gt.jsonl").string() + " for writing");
    f << save_annotations(seq.annotations);
}

inline Sequence load_sequence(const std::filesystem::path& dir) {
    std::ifstream f(dir / "gt.jsonl");
    check(f.good(), "cannot open " + (dir / "gt.jsonl").string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Sequence seq;
    seq.annotations = load_annotations(text);
    check(!seq.annotations.empty(), "empty annotation file in " + dir.string());
    for (size_t i = 0; i < seq.annotations.size(); ++i)
        seq.frames.push_back(load_ppm_file(dir / ("frame_" + std::to_string(i) + ".ppm")));
    return seq;
}

}  // namespace dpt

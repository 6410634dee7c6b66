#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dpt/tracker.hpp"

namespace dpt {

// Checkpoints are a flat named-tensor container: magic "DPTK", a format
// version, then per tensor the name, shape and float32 payload, everything
// little-endian regardless of host order. Model configuration travels
// separately (JSON next to the weights), keeping the format dumb.

inline constexpr uint32_t kCheckpointVersion = 1;

struct StateEntry {
    std::string name;
    Shape shape;
    std::vector<float>* values;
};

// Parameters in registration order, then the batch-norm running statistics —
// those are data, not parameters, but inference is wrong without them.
inline std::vector<StateEntry> state_entries(Tracker<float>& t) {
    std::vector<StateEntry> out;
    ParamSet<float> ps = all_params(t);
    for (auto& [name, tensor] : ps.items)
        out.push_back({name, tensor.shape(), &tensor.raw()});
    auto add_bn = [&](const std::string& name, BatchNorm2d<float>& bn) {
        const int c = static_cast<int>(bn.running_mean.size());
        out.push_back({name + ".running_mean", {c}, &bn.running_mean});
        out.push_back({name + ".running_var", {c}, &bn.running_var});
    };
    add_bn("backbone.view_tmpl.coarse_bn", t.backbone.view_tmpl.coarse_bn);
    add_bn("backbone.view_tmpl.out_bn", t.backbone.view_tmpl.out_bn);
    add_bn("backbone.view_srch.coarse_bn", t.backbone.view_srch.coarse_bn);
    add_bn("backbone.view_srch.out_bn", t.backbone.view_srch.out_bn);
    return out;
}

namespace detail {

inline void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        check(pos + n <= buf.size(), "checkpoint truncated");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[pos]) |
                                           (static_cast<uint8_t>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, Tracker<float>& t) {
    std::vector<StateEntry> entries = state_entries(t);
    std::string buf = "DPTK";
    detail::put_u32(buf, kCheckpointVersion);
    detail::put_u32(buf, static_cast<uint32_t>(entries.size()));
    for (const StateEntry& e : entries) {
        check(e.name.size() <= 0xffff, "checkpoint tensor name too long");
        detail::put_u16(buf, static_cast<uint16_t>(e.name.size()));
        buf += e.name;
        buf.push_back(static_cast<char>(e.shape.size()));
        for (int d : e.shape) detail::put_u32(buf, static_cast<uint32_t>(d));
        for (float v : *e.values) detail::put_f32(buf, v);
    }
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "cannot open checkpoint for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    check(f.good(), "short write to checkpoint: " + path);
}

// Loads into an already-built tracker. Names and shapes are validated both
// ways: an entry missing from the file and a file tensor the model does not
// expect are both errors, so a checkpoint can never half-apply.
inline void load_checkpoint(const std::string& path, Tracker<float>& t) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r{buf};
    check(r.bytes(4) == "DPTK", "not a checkpoint file (bad magic): " + path);
    const uint32_t version = r.u32();
    check(version == kCheckpointVersion,
          "unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = r.u32();

    std::vector<StateEntry> entries = state_entries(t);
    std::vector<bool> seen(entries.size(), false);
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u16());
        Shape shape(r.u8());
        for (int& d : shape) d = static_cast<int>(r.u32());
        const int64_t n = numel(shape);
        check(n >= 0 && r.pos + static_cast<size_t>(n) * 4 <= buf.size(),
              "checkpoint truncated inside tensor " + name);

        size_t slot = entries.size();
        for (size_t j = 0; j < entries.size(); ++j)
            if (entries[j].name == name) {
                slot = j;
                break;
            }
        check(slot < entries.size(), "checkpoint has unknown tensor " + name);
        check(!seen[slot], "checkpoint repeats tensor " + name);
        check(entries[slot].shape == shape, "shape mismatch for " + name);
        seen[slot] = true;
        std::vector<float>& dst = *entries[slot].values;
        for (int64_t k = 0; k < n; ++k) dst[static_cast<size_t>(k)] = r.f32();
    }
    for (size_t j = 0; j < entries.size(); ++j)
        check(seen[j], "checkpoint is missing tensor " + entries[j].name);
    check(r.pos == buf.size(), "trailing bytes after checkpoint payload");
}

}  // namespace dpt

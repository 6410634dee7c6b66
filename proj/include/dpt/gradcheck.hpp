#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpt/net.hpp"

namespace dpt {

struct GradCheckReport {
    double max_err = 0.0;      // worst normalized deviation seen
    int64_t coords = 0;        // coordinates compared
    std::string worst;         // "param[i]" of the worst coordinate
    bool ok(double tol) const { return coords > 0 && max_err < tol; }
};

// Central-difference check of analytic gradients. `f` rebuilds the scalar
// loss from the current leaf values on every call. For each named parameter,
// up to `max_coords` coordinates are probed (all of them when max_coords <=
// 0). The deviation is |analytic - numeric| / max(|analytic|, |numeric|,
// guard); the guard turns the measure into an absolute one for near-zero
// gradients, where the relative form would amplify finite-difference
// truncation noise.
template <typename T, typename F>
GradCheckReport gradcheck(F f, std::vector<std::pair<std::string, Tensor<T>>> params, Rng& rng,
                          int max_coords = -1, T h = T(1e-4), T guard = T(1e-3)) {
    static_assert(std::is_same_v<T, double>,
                  "gradcheck needs double precision to keep difference noise below tolerance");
    for (auto& [name, p] : params) p.zero_grad();
    Tensor<T> loss = f();
    backward(loss);

    GradCheckReport rep;
    for (auto& [name, p] : params) {
        check(p.has_grad(), "gradcheck: no gradient reached " + name);
        const std::vector<T> analytic = p.grad();
        const int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (max_coords <= 0 || n <= max_coords) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int k = 0; k < max_coords; ++k)
                coords.push_back(rng.uniform_int(static_cast<int>(n)));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (int64_t i : coords) {
            T* slot = p.raw().data() + i;
            const T keep = *slot;
            *slot = keep + h;
            const T lp = f().item();
            *slot = keep - h;
            const T lm = f().item();
            *slot = keep;
            const T numeric = (lp - lm) / (2 * h);
            const T a = analytic[static_cast<size_t>(i)];
            const double err = std::abs(static_cast<double>(a - numeric)) /
                               std::max({std::abs(static_cast<double>(a)),
                                         std::abs(static_cast<double>(numeric)),
                                         static_cast<double>(guard)});
            ++rep.coords;
            if (err > rep.max_err) {
                rep.max_err = err;
                rep.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace dpt

#pragma once

#include <cmath>

namespace dpt {

// Axis-aligned box, pixel units, top-left convention.
struct BBox {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

    double cx() const { return x + w / 2.0; }
    double cy() const { return y + h / 2.0; }

    friend bool operator==(const BBox& a, const BBox& b) {
        return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
    }
};

}  // namespace dpt

#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpt {

// Dense shapes are small (rank <= 4 in practice), row-major throughout.
using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Worker cap for data-parallel loops. Defaults to DPT_THREADS if set,
// otherwise 1. Results never depend on the value: parallel loops split
// work over disjoint output elements only.
int thread_count();
void set_thread_count(int n);

// Runs fn(begin, end) over chunks covering [0, n). Serial when n is small
// or one worker is configured.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace dpt

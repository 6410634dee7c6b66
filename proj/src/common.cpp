#include "dpt/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace dpt {

namespace {

int initial_thread_count() {
    if (const char* env = std::getenv("DPT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

int& thread_count_ref() {
    static int n = initial_thread_count();
    return n;
}

}  // namespace

int thread_count() { return thread_count_ref(); }

void set_thread_count(int n) { thread_count_ref() = std::max(1, n); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    const int workers = thread_count();
    if (n <= 0) return;
    if (workers <= 1 || n < 4096) {
        fn(0, n);
        return;
    }
    const int64_t chunks = std::min<int64_t>(workers, n);
    const int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(chunks));
    for (int64_t c = 0; c < chunks; ++c) {
        int64_t lo = c * per;
        int64_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace dpt

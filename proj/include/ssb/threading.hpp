#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ssb {

// Worker count for batch-level parallelism. Work is partitioned into fixed
// contiguous chunks by index, and every index is computed by exactly one
// thread, so results are bitwise-identical for any thread count.
inline int& thread_count() {
    static int n = [] {
        if (const char* env = std::getenv("SSB_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        return 1;
    }();
    return n;
}

inline void set_thread_count(int n) {
    if (n >= 1) thread_count() = n;
}

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    int workers = thread_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace ssb

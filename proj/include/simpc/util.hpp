#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace simpc {

// Process-wide worker count for embarrassingly parallel loops (set from the
// CLI --threads flag). Every parallel loop in this library writes disjoint
// outputs per index, so results never depend on this value.
inline int& worker_threads() {
    static int n = 1;
    return n;
}

template <typename F>
void parallel_for(size_t n, F&& body) {
    int workers = worker_threads();
    if (workers <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    size_t t = std::min<size_t>(static_cast<size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    size_t chunk = (n + t - 1) / t;
    for (size_t w = 0; w < t; ++w) {
        size_t lo = w * chunk;
        size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace simpc

#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace d2dgs {

// Thread cap: min(hardware, D2DGS_THREADS). Results never depend on the cap;
// work is partitioned into fixed chunks and reduced in fixed order.
inline int thread_cap() {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("D2DGS_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
}

// Runs fn(chunk_index, begin, end) over [0, n) split into n_chunks contiguous
// ranges. Chunk boundaries depend only on (n, n_chunks).
inline void parallel_chunks(int64_t n, int n_chunks,
                            const std::function<void(int, int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    n_chunks = int(std::min<int64_t>(n_chunks, n));
    const int64_t per = (n + n_chunks - 1) / n_chunks;
    const int workers = std::min(thread_cap(), n_chunks);

    if (workers <= 1) {
        for (int c = 0; c < n_chunks; ++c) {
            const int64_t b = c * per;
            const int64_t e = std::min(n, b + per);
            if (b < e) fn(c, b, e);
        }
        return;
    }

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (int c = t; c < n_chunks; c += workers) {
                const int64_t b = c * per;
                const int64_t e = std::min(n, b + per);
                if (b < e) fn(c, b, e);
            }
        });
    }
    for (auto& th : pool) th.join();
}

inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    parallel_chunks(n, 64, [&](int, int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace d2dgs

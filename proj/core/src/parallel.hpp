#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace dier::detail {

// Splits [0, n) into contiguous chunks, one per worker. Each output element
// is written by exactly one worker with a serial inner loop, so results do
// not depend on the thread count.
template <typename Fn>
void parallel_chunks(std::int64_t n, int threads, Fn&& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n < 4096) {
        fn(std::int64_t(0), n);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads - 1));
    std::int64_t begin = chunk;
    for (int t = 1; t < threads && begin < n; ++t, begin += chunk) {
        pool.emplace_back([&fn, begin, end = std::min(begin + chunk, n)] { fn(begin, end); });
    }
    fn(std::int64_t(0), std::min(chunk, n));
    for (auto& th : pool) th.join();
}

}  // namespace dier::detail

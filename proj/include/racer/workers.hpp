#pragma once

#include <atomic>
#include <thread>
#include <vector>

namespace racer {

/// Runs fn over every index in [0, count) on a bounded pool. fn must not
/// throw; collect results through your own synchronized sink.
template <typename Fn>
void parallel_for(size_t count, int workers, Fn fn) {
    if (count == 0) return;
    if (workers <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    size_t pool_size = std::min<size_t>(static_cast<size_t>(workers), count);
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (size_t t = 0; t < pool_size; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace racer

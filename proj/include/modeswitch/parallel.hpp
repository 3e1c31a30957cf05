#ifndef MODESWITCH_PARALLEL_HPP
#define MODESWITCH_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace modeswitch {

inline int default_thread_count() {
    return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * Run fn(i) for i in [0, n) over contiguous chunks on `threads` workers.
 * Each index is handled exactly once, so writes to slot i are race-free and the
 * result does not depend on scheduling. The first exception is rethrown.
 */
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int threads = default_thread_count()) {
    const std::size_t workers = std::min<std::size_t>(std::max(1, threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::exception_ptr error;
    std::mutex error_lock;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_lock);
                if (!error) {
                    error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace modeswitch

#endif

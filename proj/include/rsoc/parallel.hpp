#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rsoc {

/// Process-wide cap on worker threads. Results never depend on it: every
/// parallel loop writes to disjoint, index-addressed outputs.
inline std::atomic<unsigned>& max_threads() {
    static std::atomic<unsigned> value{1};
    return value;
}

inline void set_max_threads(unsigned n) { max_threads().store(std::max(1u, n)); }

/// Runs fn(begin, end) over contiguous chunks of [0, count). The first
/// exception thrown by any chunk is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_chunk = 256) {
    if (count == 0) {
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(max_threads().load(), (count + min_chunk - 1) / min_chunk);
    if (workers <= 1) {
        fn(std::size_t{0}, count);
        return;
    }
    const std::size_t chunk = (count + workers - 1) / workers;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace rsoc

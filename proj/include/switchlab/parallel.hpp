#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace switchlab {

// Runs fn(k) for k in [0, count) on up to `workers` threads. Work items are
// claimed dynamically; callers write results into slot k so output order never
// depends on scheduling. On failure the exception of the smallest failing index
// is rethrown; items are claimed in order, so that index is deterministic.
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    std::size_t nthreads = static_cast<std::size_t>(std::max(1, workers));
    nthreads = std::min(nthreads, count);
    if (nthreads <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::size_t failed_at = count;
    std::mutex failure_mutex;
    auto body = [&] {
        for (;;) {
            std::size_t k = next.fetch_add(1);
            if (k >= count) return;
            try {
                fn(k);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (k < failed_at) {
                    failed_at = k;
                    failure = std::current_exception();
                }
                next.store(count);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace switchlab

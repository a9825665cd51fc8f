#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace apq {

/// Runs fn(i) for i in [0, count) on up to `jobs` threads.
/// Work items are claimed dynamically, so callers must write results into
/// slot i and aggregate afterwards in index order. The first exception
/// thrown by any item is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    if (count == 0) return;
    jobs = std::max(1u, jobs);
    if (jobs == 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(count);
            }
        }
    };
    const unsigned nthreads = static_cast<unsigned>(std::min<std::size_t>(jobs, count));
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    for (unsigned t = 0; t < nthreads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

/// Pairwise (cascade) summation of a contiguous range.
template <typename It>
double pairwise_sum(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    if (n <= 16) {
        double s = 0.0;
        for (; first != last; ++first) s += *first;
        return s;
    }
    const auto half = n / 2;
    return pairwise_sum(first, first + half) + pairwise_sum(first + half, last);
}

}  // namespace apq

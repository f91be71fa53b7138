// Deterministic parallel loop over an index range.

#ifndef TCOST_PARALLEL_HPP
#define TCOST_PARALLEL_HPP

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tcost {

inline std::size_t resolve_workers(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

// Runs fn(i) for i in [begin, end). The partition into contiguous blocks is a
// pure function of (range, workers), and fn must write only state owned by
// index i, so results cannot depend on scheduling. The first exception thrown
// by any worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t workers, Fn&& fn) {
    const std::size_t count = end > begin ? end - begin : 0;
    workers = resolve_workers(workers);
    if (workers <= 1 || count < 2) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    if (workers > count) workers = count;

    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto run_block = [&](std::size_t lo, std::size_t hi) {
        try {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        } catch (...) {
            std::scoped_lock lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t lo = begin + w * chunk;
        if (lo >= end) break;
        pool.emplace_back(run_block, lo, std::min(end, lo + chunk));
    }
    run_block(begin, std::min(end, begin + chunk));
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace tcost

#endif // TCOST_PARALLEL_HPP

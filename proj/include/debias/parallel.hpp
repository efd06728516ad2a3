#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace debias {

// Process-wide worker cap, set once by the CLI's --threads flag.
inline int& worker_cap() {
    static int cap = 1;
    return cap;
}

// Static-chunked parallel loop. Work items must be independent and write to
// disjoint slots; outputs are then identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int threads = std::max(1, std::min<int>(worker_cap(), static_cast<int>(n)));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace debias

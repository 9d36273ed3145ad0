#include "gradeshi/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace gradeshi {
namespace {

std::atomic<std::size_t> g_override{0};

std::size_t default_workers() {
    static const std::size_t value = [] {
        std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("GRADESHI_THREADS")) {
            try {
                long cap = std::stol(env);
                if (cap >= 1) {
                    return std::min<std::size_t>(hw, static_cast<std::size_t>(cap));
                }
            } catch (...) {
            }
        }
        return hw;
    }();
    return value;
}

} // namespace

std::size_t worker_count() {
    std::size_t o = g_override.load();
    return o != 0 ? o : default_workers();
}

void set_worker_count(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) {
        return;
    }
    min_chunk = std::max<std::size_t>(1, min_chunk);
    std::size_t workers = std::min(worker_count(), (n + min_chunk - 1) / min_chunk);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        std::size_t begin = w * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(n, chunk));
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace gradeshi

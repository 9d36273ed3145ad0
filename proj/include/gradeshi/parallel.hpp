#ifndef GRADESHI_PARALLEL_HPP
#define GRADESHI_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace gradeshi {

// Worker cap: GRADESHI_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Override the worker cap for the current process (0 restores the default).
void set_worker_count(std::size_t n);

// Runs body(begin, end) over contiguous chunks of [0, n). Chunks write
// disjoint outputs, so results never depend on the worker count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

} // namespace gradeshi

#endif

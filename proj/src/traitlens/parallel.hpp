#pragma once

#include <cstddef>
#include <functional>

namespace traitlens {

// Worker count from TRAITLENS_THREADS; unset means hardware concurrency,
// 0 or 1 means the single-threaded reference mode.
std::size_t configured_threads();

// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; results
// are then independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace traitlens

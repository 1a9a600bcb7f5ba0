#pragma once

#include <cstddef>
#include <functional>

namespace phylova {

// Process-wide cap on worker threads used by library internals (>= 1).
void set_num_threads(int threads);
int num_threads();

// Calls fn(i) for every i in [0, count). Work is split into contiguous blocks;
// callers must write results per index so the outcome never depends on the
// number of workers.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace phylova

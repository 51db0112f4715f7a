#pragma once

#include <cstddef>
#include <functional>

namespace repr_robust {

// Worker count from REPR_ROBUST_WORKERS, else hardware concurrency (min 1).
std::size_t default_workers();

// Calls fn(i) for every i in [0, count) using up to `workers` threads.
// Work is split into contiguous blocks; fn must only write to slots owned by i.
// The first exception thrown by any task is rethrown on the calling thread.
void parallel_for(std::size_t workers, std::size_t count,
                  const std::function<void(std::size_t)>& fn);

}  // namespace repr_robust

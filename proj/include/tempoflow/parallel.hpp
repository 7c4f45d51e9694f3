#pragma once

#include <cstddef>
#include <functional>

namespace tempoflow {

// Worker count: TEMPOFLOW_THREADS if set to a positive integer, otherwise
// the hardware concurrency (at least 1).
unsigned worker_count();

// Runs fn(0) .. fn(n-1) on up to worker_count() threads. Rethrows the first
// exception after all workers finished.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tempoflow

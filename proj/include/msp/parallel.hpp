#pragma once

#include <cstdint>
#include <functional>

namespace msp {

// Worker parallelism cap: MSP_THREADS env var, else hardware concurrency.
int configured_threads();

// Runs fn(i) for i in [0, n). Work is distributed over the shared pool; the
// caller is responsible for writing results into per-index slots so the
// outcome is independent of scheduling.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace msp

#pragma once

#include <cstdint>
#include <functional>

namespace rtsmono {

/// Worker count used by parallel_for. Defaults to RTS_THREADS, else hardware concurrency.
int thread_count();
void set_thread_count(int n);

/// Runs fn(i) for i in [begin, end). Each index is handled by exactly one worker,
/// so per-index results never depend on the worker count.
void parallel_for(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn);

}  // namespace rtsmono

#pragma once

#include <cstddef>
#include <functional>

namespace pdistill {

/// Worker cap: POINTDISTILL_THREADS if set and positive, otherwise the hardware concurrency.
std::size_t worker_count();

/// Calls fn(begin, end) over a static partition of [0, n). Partitioning is deterministic;
/// callers must write to disjoint outputs.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace pdistill

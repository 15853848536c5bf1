#pragma once

#include <cstddef>
#include <functional>

namespace gmmct {

/// Worker count used by parallel_for. Resolution order: the GMMCT_THREADS
/// environment variable (0 or unset means auto), then hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n). Chunk boundaries are fixed by n alone, so
/// callers that write per-index results and reduce them in index order get
/// results independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gmmct

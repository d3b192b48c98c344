#pragma once

#include <cstdint>
#include <functional>

namespace srma {

/// Number of worker threads used by parallel_for (including the caller).
int num_threads();

/// Resize the worker pool. Results are identical for every thread count:
/// work is split into fixed chunks and each output element is produced by
/// exactly one chunk.
void set_num_threads(int n);

/// Run body(lo, hi) over a static partition of [begin, end). Chunk
/// boundaries depend only on (begin, end, grain), never on thread count.
void parallel_for(int64_t begin, int64_t end, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& body);

}  // namespace srma

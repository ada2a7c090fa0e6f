#pragma once

#include <cstddef>
#include <functional>

namespace camogen {

// Thread cap: min(hardware_concurrency, CAMOGEN_NUM_THREADS if set). Always >= 1.
int max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous index blocks, one
// per worker, so any i is executed by exactly one thread; results must not
// depend on which. Exceptions propagate from the first failing index.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace camogen

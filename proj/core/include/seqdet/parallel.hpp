#pragma once

#include <cstdint>
#include <functional>

namespace seqdet {

// Worker count used by parallel_for. 0 = hardware concurrency.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over disjoint contiguous chunks of [0, n).
// Each index is processed by exactly one worker, so any computation whose
// per-index result does not depend on the partition is bitwise independent
// of the worker count. Nested calls from inside a worker run inline.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// True while executing inside a parallel_for worker thread.
bool in_parallel_worker();

}  // namespace seqdet

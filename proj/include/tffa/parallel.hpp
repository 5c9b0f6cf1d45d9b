#pragma once

#include <cstdint>
#include <functional>

namespace tffa {

// Global worker budget shared by every parallel loop in the library.
// Set once from the CLI (--threads); defaults to 1.
void set_thread_budget(int n);
int thread_budget();

// Runs fn(block) for every block in [0, n_blocks).
//
// Work is decomposed by block index, never by thread, so any state a
// block writes must be indexed by that block (disjoint output rows,
// per-block partial sums reduced afterwards in block order). Under that
// discipline results are bit-identical for every thread count.
//
// Nested calls execute inline on the calling worker.
void parallel_for_blocks(std::int64_t n_blocks,
                         const std::function<void(std::int64_t)>& fn);

}  // namespace tffa

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace hvx {

// Worker cap from HVX_THREADS (0 or unset = hardware concurrency).
// Read on every call so tests can flip the variable at runtime.
int thread_cap();

// Runs fn(block_index, lo, hi) over [0, n) split into fixed-size blocks.
// Blocks are claimed dynamically but write to disjoint ranges, so any
// map-style use is deterministic regardless of thread count.
void parallel_blocks(std::size_t n, std::size_t block_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Deterministic parallel sum: each block is reduced sequentially into its own
// slot, then slots are added in block order. Bitwise-identical for any
// thread count, and equal to the plain sequential sum when block_size >= n.
double block_sum(std::size_t n, std::size_t block_size,
                 const std::function<double(std::size_t, std::size_t)>& partial);

}  // namespace hvx

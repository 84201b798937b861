#pragma once

#include <cstddef>
#include <functional>

namespace chebcnn {

// Worker count used by parallel_for; defaults to the hardware concurrency.
int worker_threads();
void set_worker_threads(int n);

// Runs body(begin, end) over contiguous chunks of [0, n). Each index is
// processed by exactly one task and per-index arithmetic order is fixed, so
// results are bit-identical for any thread count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace chebcnn

#pragma once

#include <cstdint>
#include <functional>

namespace lrfr {

// Worker cap from LRFR_THREADS (default 1). Invalid values error.
int thread_budget();

// Runs fn(i) for i in [0, n). With a budget of 1 this is a plain loop;
// otherwise items are statically partitioned. Items must be independent;
// callers keep determinism by deriving any randomness from the item index.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace lrfr

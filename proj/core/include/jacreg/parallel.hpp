#pragma once

#include <cstdint>
#include <functional>

namespace jacreg {

// Process-wide worker count used by every data-parallel loop. Defaults to 1.
void set_thread_count(int n);
int thread_count();

// Calls body(i) for every i in [begin, end). Iterations are split into
// contiguous blocks, one per worker; body must only write state owned by i.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body);

// Sum of term(i) over [0, n). Terms are evaluated in parallel and then added
// serially in index order, so the result does not depend on the thread count.
double ordered_sum(std::int64_t n, const std::function<double(std::int64_t)>& term);

}  // namespace jacreg

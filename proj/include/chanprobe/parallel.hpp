#pragma once

namespace chanprobe {

// Worker cap for the OpenMP regions in this library. Results never depend on
// it; every parallel loop writes disjoint outputs with a fixed per-item
// summation order.
void set_worker_count(int workers);
int worker_count();

}  // namespace chanprobe

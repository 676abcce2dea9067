#include "chanprobe/parallel.hpp"

#include <omp.h>

#include <algorithm>

namespace chanprobe {

void set_worker_count(int workers) { omp_set_num_threads(std::max(1, workers)); }

int worker_count() { return omp_get_max_threads(); }

}  // namespace chanprobe

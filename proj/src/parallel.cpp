// SPDX-License-Identifier: Apache-2.0
#include "panobev/parallel.hpp"

#include <cstdlib>

#include <omp.h>

namespace panobev {

int max_threads() noexcept { return omp_get_max_threads(); }

void set_num_threads(int n) noexcept {
  if (n >= 1) omp_set_num_threads(n);
}

int apply_thread_env() noexcept {
  if (const char* env = std::getenv("PANOBEV_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) set_num_threads(n);
  }
  return max_threads();
}

}  // namespace panobev

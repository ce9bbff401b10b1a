// SPDX-License-Identifier: Apache-2.0
//
// Thread-count control. Kernels parallelize with OpenMP static schedules and
// reduce per-thread partial results in thread-index order, so output is
// bit-reproducible for a fixed thread count (and identical to the serial
// reference when the count is one).
#pragma once

namespace panobev {

int max_threads() noexcept;
void set_num_threads(int n) noexcept;

/// Applies PANOBEV_THREADS from the environment when set; returns the active count.
int apply_thread_env() noexcept;

/// Sets the thread count for the lifetime of the guard.
class ThreadCountGuard {
 public:
  explicit ThreadCountGuard(int n) noexcept : previous_(max_threads()) { set_num_threads(n); }
  ~ThreadCountGuard() { set_num_threads(previous_); }
  ThreadCountGuard(const ThreadCountGuard&) = delete;
  ThreadCountGuard& operator=(const ThreadCountGuard&) = delete;

 private:
  int previous_;
};

}  // namespace panobev

#pragma once

#include <omp.h>

#include <algorithm>
#include <cstdlib>

namespace cslb {

namespace detail {

inline int initial_thread_cap() {
  int cap = omp_get_max_threads();
  if (const char* env = std::getenv("CSLB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) cap = std::min(cap, n);
  }
  return std::max(1, cap);
}

inline int& thread_cap() {
  static int cap = initial_thread_cap();
  return cap;
}

}  // namespace detail

// Upper bound on threads used by the parallel kernels. Defaults to the
// OpenMP limit, capped by the CSLB_THREADS environment variable.
inline int max_threads() { return detail::thread_cap(); }

inline void set_max_threads(int n) { detail::thread_cap() = std::max(1, n); }

}  // namespace cslb

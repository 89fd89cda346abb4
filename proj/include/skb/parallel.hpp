#pragma once

#include <cstddef>

namespace skb {

/// Runs fn(i) for i in [0, n) on an OpenMP team. threads <= 0 uses the
/// runtime default; I/O-bound callers pass their in-flight limit instead.
/// fn must not throw.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto count = static_cast<long long>(n);
  if (threads > 0) {
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
  } else {
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
  }
}

}  // namespace skb

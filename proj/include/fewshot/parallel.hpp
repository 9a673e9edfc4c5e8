#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <limits>
#include <thread>
#include <vector>

namespace fewshot {

/// Calls fn(i) for every i in [0, n) on up to `threads` workers, index i on
/// worker i % threads. fn must write only to slot i of its outputs, so the
/// result is independent of the thread count. The exception of the lowest
/// failing index is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::size_t> failed_at(threads, std::numeric_limits<std::size_t>::max());
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          failed_at[t] = i;
          errors[t] = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  std::size_t worst = threads;
  for (std::size_t t = 0; t < threads; ++t)
    if (errors[t] && (worst == threads || failed_at[t] < failed_at[worst])) worst = t;
  if (worst != threads) std::rethrow_exception(errors[worst]);
}

}  // namespace fewshot

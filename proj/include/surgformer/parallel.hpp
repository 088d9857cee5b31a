#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace surgformer {

/// Runs fn(0..count-1), striped across up to `threads` workers. Callers that
/// need determinism must make fn(i) write only to slot i.
template <typename RunFn>
inline void run_indexed(int count, int threads, const RunFn& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < count; i += workers) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace surgformer

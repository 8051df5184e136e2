#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace unitmll::internal {

inline std::size_t ResolveJobs(std::size_t jobs) {
  if (jobs != 0) return jobs;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

// Calls fn(chunk_index, begin, end) for fixed-size chunks of [0, n). Chunk
// boundaries depend only on n and chunk_size, never on the thread count, so
// callers that reduce per-chunk results in chunk order stay bitwise
// reproducible.
template <typename Fn>
void ForEachChunk(std::size_t n, std::size_t chunk_size, std::size_t jobs, Fn&& fn) {
  const std::size_t num_chunks = (n + chunk_size - 1) / chunk_size;
  jobs = std::min(ResolveJobs(jobs), num_chunks);
  auto run_chunk = [&](std::size_t c) {
    std::size_t begin = c * chunk_size;
    fn(c, begin, std::min(n, begin + chunk_size));
  };
  if (jobs <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) run_chunk(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  {
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t c = next++; c < num_chunks; c = next++) {
          try {
            run_chunk(c);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            next = num_chunks;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace unitmll::internal

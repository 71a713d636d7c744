#include "mol/core.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace mol {

std::string hash_bytes(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int thread_count() {
  if (const char* env = std::getenv("MOL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(Index n, const std::function<void(Index)>& body) {
  if (n <= 0) return;
  const Index threads = std::min<Index>(thread_count(), n);
  if (threads <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(threads));
  pool.reserve(static_cast<std::size_t>(threads));
  const Index chunk = (n + threads - 1) / threads;
  for (Index t = 0; t < threads; ++t) {
    const Index begin = t * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, &failures, t, begin, end] {
      try {
        for (Index i = begin; i < end; ++i) body(i);
      } catch (...) {
        failures[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  // The lowest chunk's failure wins so the reported error is thread-count independent
  // whenever a single index fails.
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

}  // namespace mol

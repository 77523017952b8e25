#include "dbpn/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace dbpn {

namespace {

std::atomic<std::size_t> g_override{0};

std::size_t env_threads() {
  const char* env = std::getenv("DBPN_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    return static_cast<std::size_t>(std::clamp(v, 1L, 64L));
  } catch (...) {
    return 1;
  }
}

}  // namespace

std::size_t thread_count() {
  const std::size_t o = g_override.load();
  return o != 0 ? o : env_threads();
}

void set_thread_count(std::size_t n) { g_override.store(std::min<std::size_t>(n, 64)); }

std::size_t chunk_count(std::size_t n) { return std::max<std::size_t>(1, std::min(n, thread_count())); }

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const std::size_t chunks = chunk_count(n);
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  auto bounds = [&](std::size_t k) { return std::pair{n * k / chunks, n * (k + 1) / chunks}; };
  for (std::size_t k = 1; k < chunks; ++k) {
    auto [b, e] = bounds(k);
    workers.emplace_back([&fn, k, b, e] { fn(k, b, e); });
  }
  auto [b0, e0] = bounds(0);
  fn(0, b0, e0);
  for (auto& t : workers) t.join();
}

}  // namespace dbpn

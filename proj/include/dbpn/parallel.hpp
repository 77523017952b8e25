#pragma once

#include <cstddef>
#include <functional>

namespace dbpn {

/// Worker count from DBPN_THREADS (default 1, clamped to [1, 64]).
std::size_t thread_count();

/// Overrides DBPN_THREADS for the current process; 0 restores the environment value.
void set_thread_count(std::size_t n);

/// Runs fn(chunk, begin, end) over [0, n) split into contiguous chunks, one per worker.
/// Chunk boundaries depend only on n and the worker count, so per-chunk reductions
/// combined in chunk order are reproducible for a fixed worker count.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Number of chunks parallel_chunks will use for n items.
std::size_t chunk_count(std::size_t n);

}  // namespace dbpn

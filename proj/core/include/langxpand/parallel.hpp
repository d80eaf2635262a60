#pragma once

#include <cstddef>
#include <functional>

namespace langxpand {

// Worker count: LANGXPAND_THREADS if set, else hardware concurrency.
// Deterministic mode pins it to 1.
std::size_t worker_count();
void set_deterministic(bool on);
bool deterministic();

// Runs body(chunk_index, begin, end) over `chunks` fixed, equal-ish slices of
// [0, n). The slicing depends only on n and chunks, never on the worker count,
// so callers that reduce per-chunk partials in chunk order get identical
// results for any thread count.
void parallel_chunks(std::size_t n, std::size_t chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

}  // namespace langxpand

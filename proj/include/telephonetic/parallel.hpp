#pragma once

// Deterministic chunked parallelism. Work is split into fixed-size chunks by
// index; worker threads pull chunks from an atomic counter; per-chunk results
// are combined strictly in chunk order after all workers finish. Because the
// chunk boundaries depend only on (n, chunk_size), the combined result is
// bit-identical for every thread count, including 1.

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace telephonetic {

// chunk_fn(begin, end) -> R computed sequentially inside the chunk;
// reduce_fn(chunk_index, R&&) called in ascending chunk order on one thread.
template <typename R>
void parallel_chunks(std::size_t n, std::size_t chunk_size, int jobs,
                     const std::function<R(std::size_t, std::size_t)>& chunk_fn,
                     const std::function<void(std::size_t, R&&)>& reduce_fn) {
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = 1;
    std::size_t nchunks = (n + chunk_size - 1) / chunk_size;

    auto run_chunk = [&](std::size_t c) {
        std::size_t begin = c * chunk_size;
        std::size_t end = begin + chunk_size < n ? begin + chunk_size : n;
        return chunk_fn(begin, end);
    };

    if (jobs <= 1 || nchunks == 1) {
        for (std::size_t c = 0; c < nchunks; ++c) reduce_fn(c, run_chunk(c));
        return;
    }

    std::vector<R> results(nchunks);
    std::vector<std::exception_ptr> errors(nchunks);
    std::atomic<std::size_t> next{0};
    std::size_t nthreads = static_cast<std::size_t>(jobs) < nchunks ? static_cast<std::size_t>(jobs) : nchunks;

    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) {
        threads.emplace_back([&] {
            for (;;) {
                std::size_t c = next.fetch_add(1);
                if (c >= nchunks) return;
                try {
                    results[c] = run_chunk(c);
                } catch (...) {
                    errors[c] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : threads) th.join();

    // First failing chunk wins, independent of scheduling.
    for (std::size_t c = 0; c < nchunks; ++c)
        if (errors[c]) std::rethrow_exception(errors[c]);
    for (std::size_t c = 0; c < nchunks; ++c) reduce_fn(c, std::move(results[c]));
}

}  // namespace telephonetic

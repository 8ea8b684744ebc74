#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"

namespace qdlag {

/// Thread count from an explicit request, else QDLAG_THREADS, else 1.
inline int resolve_threads(int requested = 0)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("QDLAG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
        throw ConfigError(std::string("QDLAG_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

/**
 * Runs body(i) for i in [0, count) on up to `threads` workers. Each task
 * writes only to its own slot, so results do not depend on scheduling. If
 * tasks throw, the exception of the lowest failing index is rethrown.
 */
template <typename Body>
void parallel_for(std::size_t count, int threads, Body&& body)
{
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace qdlag

#include <atomic>

#include "difformer/memtrack.hpp"

namespace difformer::memtrack {

namespace {
std::atomic<bool> g_installed{false};
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

bool installed() noexcept { return g_installed.load(std::memory_order_relaxed); }
std::size_t current_bytes() noexcept { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() noexcept { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() noexcept { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

namespace detail {

void on_alloc(std::size_t bytes) noexcept {
    const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t peak = g_peak.load(std::memory_order_relaxed);
    while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
}

void on_free(std::size_t bytes) noexcept { g_current.fetch_sub(bytes, std::memory_order_relaxed); }

void mark_installed() noexcept { g_installed.store(true, std::memory_order_relaxed); }

}  // namespace detail
}  // namespace difformer::memtrack

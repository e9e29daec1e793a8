#include "fragmix/memory.hpp"

#include <algorithm>

namespace fragmix::memory {

namespace {
Counters g_counters;
}

void record_alloc(std::size_t bytes) noexcept {
    g_counters.live_bytes += bytes;
    g_counters.peak_bytes = std::max(g_counters.peak_bytes, g_counters.live_bytes);
    ++g_counters.allocations;
}

void record_free(std::size_t bytes) noexcept {
    g_counters.live_bytes -= std::min(bytes, g_counters.live_bytes);
}

Counters counters() noexcept { return g_counters; }

void reset_peak() noexcept { g_counters.peak_bytes = g_counters.live_bytes; }

PeakScope::PeakScope() noexcept : baseline_(g_counters.live_bytes), saved_peak_(g_counters.peak_bytes) {
    g_counters.peak_bytes = g_counters.live_bytes;
}

PeakScope::~PeakScope() { g_counters.peak_bytes = std::max(saved_peak_, g_counters.peak_bytes); }

std::size_t PeakScope::peak_above_baseline() const noexcept {
    return g_counters.peak_bytes > baseline_ ? g_counters.peak_bytes - baseline_ : 0;
}

}  // namespace fragmix::memory

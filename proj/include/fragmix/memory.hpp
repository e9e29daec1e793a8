#pragma once

// Allocation accounting for tensor storage and kernel scratch space.
//
// Every buffer owned by a Tensor, and every scratch buffer allocated by the
// attention kernels, goes through TrackedAllocator. The counters are process
// global; the training loop and the profiler are single-threaded, so a
// PeakScope measures the high-water mark of live tracked bytes for the code
// that runs inside it.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <vector>

namespace fragmix::memory {

struct Counters {
    std::size_t live_bytes = 0;
    std::size_t peak_bytes = 0;
    std::uint64_t allocations = 0;
};

void record_alloc(std::size_t bytes) noexcept;
void record_free(std::size_t bytes) noexcept;
Counters counters() noexcept;

// Restarts the high-water mark at the current live byte count.
void reset_peak() noexcept;

// Measures the peak of live tracked bytes above the level at construction.
class PeakScope {
public:
    PeakScope() noexcept;
    ~PeakScope();
    PeakScope(const PeakScope&) = delete;
    PeakScope& operator=(const PeakScope&) = delete;

    std::size_t peak_above_baseline() const noexcept;
    std::size_t baseline() const noexcept { return baseline_; }

private:
    std::size_t baseline_;
    std::size_t saved_peak_;
};

template <class T>
struct TrackedAllocator {
    using value_type = T;

    TrackedAllocator() noexcept = default;
    template <class U>
    TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
        T* p = static_cast<T*>(::operator new(n * sizeof(T)));
        record_alloc(n * sizeof(T));
        return p;
    }
    void deallocate(T* p, std::size_t n) noexcept {
        record_free(n * sizeof(T));
        ::operator delete(p);
    }

    template <class U>
    bool operator==(const TrackedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, TrackedAllocator<double>>;

}  // namespace fragmix::memory

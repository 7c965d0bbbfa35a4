#pragma once

// Byte accounting for transient buffers. Every Tensor and index buffer allocates
// through TrackingAllocator, so a PeakScope around a stage reports the high-water
// mark of live bytes that the stage added.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>
#include <vector>

namespace idesplat::memory {

struct Counters {
    std::atomic<std::int64_t> current{0};
    std::atomic<std::int64_t> peak{0};
};

inline Counters& counters() {
    static Counters instance;
    return instance;
}

inline void record_alloc(std::size_t bytes) {
    auto& c = counters();
    const std::int64_t now = c.current.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
    std::int64_t seen = c.peak.load();
    while (now > seen && !c.peak.compare_exchange_weak(seen, now)) {
    }
}

inline void record_free(std::size_t bytes) { counters().current.fetch_sub(static_cast<std::int64_t>(bytes)); }

inline std::int64_t live_bytes() { return counters().current.load(); }

/// Measures the peak number of tracked bytes allocated on top of what was live
/// when the scope opened. Scopes do not nest.
class PeakScope {
public:
    PeakScope() : baseline_(counters().current.load()) { counters().peak.store(baseline_); }

    std::int64_t peak_bytes() const { return counters().peak.load() - baseline_; }

private:
    std::int64_t baseline_;
};

template <class T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = n * sizeof(T);
        T* p = static_cast<T*>(::operator new(bytes));
        record_alloc(bytes);
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        record_free(n * sizeof(T));
        ::operator delete(p);
    }

    template <class U>
    bool operator==(const TrackingAllocator<U>&) const noexcept {
        return true;
    }
};

template <class T>
using tracked_vector = std::vector<T, TrackingAllocator<T>>;

} // namespace idesplat::memory

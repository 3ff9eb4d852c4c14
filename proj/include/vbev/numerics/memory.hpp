#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>
#include <vector>

namespace vbev {

// Process-wide byte counters for tensor storage. Every Buffer allocation goes
// through CountingAllocator, so `peak()` after `reset_peak()` is the transient
// high-water mark of a region of code.
class AllocStats {
 public:
  static std::int64_t current() { return current_.load(std::memory_order_relaxed); }
  static std::int64_t peak() { return peak_.load(std::memory_order_relaxed); }
  static void reset_peak() { peak_.store(current(), std::memory_order_relaxed); }

  // Allocations that would push `current` above the limit throw std::bad_alloc.
  static void set_limit(std::int64_t bytes) { limit_.store(bytes, std::memory_order_relaxed); }
  static void clear_limit() { set_limit(std::numeric_limits<std::int64_t>::max()); }

  static void on_alloc(std::size_t bytes) {
    const auto n = static_cast<std::int64_t>(bytes);
    const auto now = current_.fetch_add(n, std::memory_order_relaxed) + n;
    if (now > limit_.load(std::memory_order_relaxed)) {
      current_.fetch_sub(n, std::memory_order_relaxed);
      throw std::bad_alloc();
    }
    auto seen = peak_.load(std::memory_order_relaxed);
    while (now > seen && !peak_.compare_exchange_weak(seen, now, std::memory_order_relaxed)) {
    }
  }
  static void on_free(std::size_t bytes) {
    current_.fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
  }

 private:
  static inline std::atomic<std::int64_t> current_{0};
  static inline std::atomic<std::int64_t> peak_{0};
  static inline std::atomic<std::int64_t> limit_{std::numeric_limits<std::int64_t>::max()};
};

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    AllocStats::on_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocStats::on_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, CountingAllocator<T>>;

// RAII scope that resets the peak counter on entry and reports the transient
// peak (bytes above the entry level) on demand.
class PeakScope {
 public:
  PeakScope() : base_(AllocStats::current()) { AllocStats::reset_peak(); }
  std::int64_t transient_peak() const { return AllocStats::peak() - base_; }

 private:
  std::int64_t base_;
};

}  // namespace vbev

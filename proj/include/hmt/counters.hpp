#pragma once

#include <cstdint>

namespace hmt {

/// Exact operation counters for complexity measurements. Counts are
/// deterministic functions of the input shapes, never sampled.
struct OpCounters {
  std::uint64_t mul_adds = 0;  ///< fused multiply-accumulate steps
  std::uint64_t gathers = 0;   ///< elements fetched through an index indirection
};

namespace detail {
inline thread_local OpCounters* active_counters = nullptr;
}

/// Installs a counter for the current thread while in scope. Kernels report
/// their work through count_mul_adds/count_gathers; with no scope active the
/// calls are no-ops.
class CountingScope {
 public:
  explicit CountingScope(OpCounters& counters) : prev_(detail::active_counters) {
    detail::active_counters = &counters;
  }
  ~CountingScope() { detail::active_counters = prev_; }

  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounters* prev_;
};

inline void count_mul_adds(std::uint64_t n) {
  if (detail::active_counters) detail::active_counters->mul_adds += n;
}

inline void count_gathers(std::uint64_t n) {
  if (detail::active_counters) detail::active_counters->gathers += n;
}

}  // namespace hmt

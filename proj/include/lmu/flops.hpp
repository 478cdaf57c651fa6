#pragma once

#include <cstdint>

namespace lmu {

// Floating-point operation tally. Conventions: one real multiply or add is
// one FLOP, a complex multiply is 6 FLOPs, a complex add is 2 FLOPs.
// Divisions count as multiplies; exp/erf/log/sqrt evaluations are not FLOPs.
//
// The counter is process-global and not synchronized: measurements must run
// on a single thread. Kernels report aggregated counts (one call per loop
// nest), so the disabled-path overhead is a single branch per kernel.
class FlopCounter {
 public:
  void enable() { enabled_ = true; }
  void disable() { enabled_ = false; }
  bool enabled() const { return enabled_ && pause_depth_ == 0; }

  void reset() {
    real_ = 0;
    complex_mul_ = 0;
    complex_add_ = 0;
  }

  void add_real(std::int64_t n) {
    if (enabled()) real_ += n;
  }
  void add_complex_mul(std::int64_t n) {
    if (enabled()) complex_mul_ += n;
  }
  void add_complex_add(std::int64_t n) {
    if (enabled()) complex_add_ += n;
  }

  std::int64_t real_ops() const { return real_; }
  std::int64_t complex_muls() const { return complex_mul_; }
  std::int64_t complex_adds() const { return complex_add_; }

  std::int64_t total() const { return real_ + 6 * complex_mul_ + 2 * complex_add_; }

 private:
  friend class FlopPause;
  bool enabled_ = false;
  int pause_depth_ = 0;
  std::int64_t real_ = 0;
  std::int64_t complex_mul_ = 0;
  std::int64_t complex_add_ = 0;
};

inline FlopCounter& flop_counter() {
  static FlopCounter counter;
  return counter;
}

// Enables and clears the counter for the lifetime of the scope.
class FlopScope {
 public:
  FlopScope() {
    flop_counter().reset();
    flop_counter().enable();
  }
  ~FlopScope() { flop_counter().disable(); }
  std::int64_t total() const { return flop_counter().total(); }
};

// Suppresses counting across a region (setup work such as kernel spectrum
// precomputation, which is amortized across calls and not part of any
// per-token accounting).
class FlopPause {
 public:
  FlopPause() { ++flop_counter().pause_depth_; }
  ~FlopPause() { --flop_counter().pause_depth_; }
};

}  // namespace lmu

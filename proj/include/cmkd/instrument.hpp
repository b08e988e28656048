#pragma once

#include <atomic>
#include <cstdint>

// Call counters for the structurally-skippable paths. The training loop must
// not touch these paths when the corresponding loss weight is zero, and the
// counters are how tests verify that claim.

namespace cmkd::instrument {

inline std::atomic<std::uint64_t> injection_forwards{0};
inline std::atomic<std::uint64_t> similarity_calls{0};
inline std::atomic<std::uint64_t> dirichlet_calls{0};

inline void reset() {
  injection_forwards = 0;
  similarity_calls = 0;
  dirichlet_calls = 0;
}

}  // namespace cmkd::instrument

#pragma once

// Process-level tuning for the training loops, which allocate and free
// feature-sized matrices every step.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ovseg {

// Keeps large blocks on the heap instead of mmap-ing and returning them on
// every free; without it page faults dominate the training step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc upper bound on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace ovseg

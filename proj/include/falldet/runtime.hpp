#pragma once

// Process-level tuning for the training loop.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace falldet {

/// Keeps large activation buffers on the heap instead of fresh mmap regions.
/// Every training step allocates and frees many multi-megabyte matrices;
/// with the default glibc threshold each one is page-faulted in again.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace falldet

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gduap {

// Per-sample forward/backward buffers are a few hundred KB each; by default
// glibc serves them with mmap and unmaps on free, which costs more in page
// faults than the arithmetic. Call once from main().
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
}

}  // namespace gduap

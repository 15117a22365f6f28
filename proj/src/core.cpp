#include "rwm/core.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rwm {

void tune_allocator() {
#if defined(__GLIBC__)
  // Repeated mmap/munmap of multi-megabyte buffers costs page faults on
  // every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace rwm

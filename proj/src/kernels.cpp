#include "idrt/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace idrt::kernels {

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops& active_ops() {
  static const Ops* selected = [] {
    const char* force = std::getenv("IDRT_KERNELS");
    if (force && std::strcmp(force, "scalar") == 0) return &scalar_ops();
    if (avx2_available()) return &avx2_ops();
    return &scalar_ops();
  }();
  return *selected;
}

}  // namespace idrt::kernels

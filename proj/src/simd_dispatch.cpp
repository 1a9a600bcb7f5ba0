#include <cstdlib>
#include <cstring>

#include "phylova/simd.hpp"

namespace phylova::simd {

const KernelTable* avx2_table_if_built();

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable* avx2_kernels() {
#if defined(__x86_64__) || defined(_M_X64)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (!supported) return nullptr;
  return avx2_table_if_built();
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable* chosen = [] {
    const char* env = std::getenv("PHYLOVA_SIMD");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return &scalar_kernels();
    const KernelTable* wide = avx2_kernels();
    return wide != nullptr ? wide : &scalar_kernels();
  }();
  return *chosen;
}

}  // namespace phylova::simd

#include <cstdlib>
#include <string>

#include "mutflow/simd/kernels.hpp"

namespace mutflow::simd {

#if defined(MUTFLOW_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(MUTFLOW_HAVE_NEON)
const KernelTable& neon_table();
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable* avx2_kernels() {
#if defined(MUTFLOW_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(MUTFLOW_HAVE_NEON)
  // AArch64 mandates Advanced SIMD.
  return &neon_table();
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select() {
  const char* env = std::getenv("MUTFLOW_SIMD");
  const std::string forced = env ? env : "";
  if (forced == "scalar") return scalar_kernels();
  if (const KernelTable* t = avx2_kernels()) return *t;
  if (const KernelTable* t = neon_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& active_kernels() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace mutflow::simd

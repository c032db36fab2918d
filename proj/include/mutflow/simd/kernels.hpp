#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops used by the tensor operators. Every kernel has a
// scalar reference implementation; vector variants (AVX2+FMA on x86-64, NEON on
// AArch64) are selected once at startup from the CPU feature bits. The
// environment variable MUTFLOW_SIMD=scalar forces the reference path.

namespace mutflow::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = a[i] + b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // y[i] += x[i]
  void (*accumulate)(const double* x, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best table supported by the running CPU, honouring MUTFLOW_SIMD.
const KernelTable& active_kernels();

}  // namespace mutflow::simd

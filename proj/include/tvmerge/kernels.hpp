#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

// Data-parallel inner loops shared by the merge operators and statistics.
// Every kernel has a scalar reference implementation plus SIMD variants
// (AVX2 on x86-64, NEON on AArch64) selected once at runtime. Elementwise
// kernels are bit-exact across variants (compiled with fp-contract off);
// reductions may differ by accumulation order within a small tolerance.
//
// The MERGE_SIMD environment variable (auto|scalar|avx2|neon) can pin the
// variant; unavailable choices fall back to scalar.

namespace tvmerge::kern {

struct Ops {
    // elementwise
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);        // out = a - b
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);            // y += alpha * x
    void (*scale)(double c, double* x, std::size_t n);                                // x *= c
    void (*threshold_keep)(const double* in, double* out, std::size_t n, double tau); // |x| >= tau ? x : 0
    // reductions
    double (*sum_abs)(const double* x, std::size_t n);
    void (*abs_moments)(const double* x, std::size_t n, double* sum_abs, double* sum_sq);
    double (*masked_abs_sum)(const double* x, std::size_t n, double tau);             // sum |x| over |x| >= tau
    std::size_t (*count_below)(const double* x, std::size_t n, double eps);           // count |x| < eps
    double (*dot)(const double* a, const double* b, std::size_t n);
    // storage codecs
    void (*f16_to_f32)(const std::uint16_t* in, float* out, std::size_t n);
    void (*f32_to_f16)(const float* in, std::uint16_t* out, std::size_t n);
    void (*bf16_to_f32)(const std::uint16_t* in, float* out, std::size_t n);
    void (*f32_to_bf16)(const float* in, std::uint16_t* out, std::size_t n);
    void (*f32_to_f64)(const float* in, double* out, std::size_t n);
    void (*f64_to_f32)(const double* in, float* out, std::size_t n);

    const char* name;
};

// Variant selected for this process (stable for the process lifetime).
const Ops& ops();

// Individual variants, for equivalence tests and explicit selection.
const Ops& scalar_ops();
#if defined(__x86_64__)
const Ops& avx2_ops();  // caller must check CpuFeatures::get().avx2
bool avx2_compiled();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

}  // namespace tvmerge::kern

// AVX2 + F16C kernel variants. Elementwise kernels use explicit mul/add
// (no FMA) so results match the scalar reference bit-for-bit; reductions
// keep four lane accumulators and fold the tail in scalar order.

#if defined(__x86_64__)

#include <immintrin.h>

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "tvmerge/dtype.hpp"
#include "tvmerge/kernels.hpp"

namespace tvmerge::kern::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline __m256d abs_pd(__m256d v) {
    return _mm256_andnot_pd(_mm256_set1_pd(-0.0), v);
}

}  // namespace

static void sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

static void scale(double c, double* x, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= c;
}

static void threshold_keep(const double* in, double* out, std::size_t n, double tau) {
    const __m256d vtau = _mm256_set1_pd(tau);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(in + i);
        __m256d keep = _mm256_cmp_pd(abs_pd(v), vtau, _CMP_GE_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(v, keep));
    }
    for (; i < n; ++i) out[i] = std::fabs(in[i]) >= tau ? in[i] : 0.0;
}

static double sum_abs(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, abs_pd(_mm256_loadu_pd(x + i)));
    double s = hsum(acc);
    for (; i < n; ++i) s += std::fabs(x[i]);
    return s;
}

static void abs_moments(const double* x, std::size_t n, double* out_abs, double* out_sq) {
    __m256d acc1 = _mm256_setzero_pd();
    __m256d acc2 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = abs_pd(_mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, a);
        acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(a, a));
    }
    double s1 = hsum(acc1), s2 = hsum(acc2);
    for (; i < n; ++i) {
        const double a = std::fabs(x[i]);
        s1 += a;
        s2 += a * a;
    }
    *out_abs = s1;
    *out_sq = s2;
}

static double masked_abs_sum(const double* x, std::size_t n, double tau) {
    const __m256d vtau = _mm256_set1_pd(tau);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = abs_pd(_mm256_loadu_pd(x + i));
        __m256d keep = _mm256_cmp_pd(a, vtau, _CMP_GE_OQ);
        acc = _mm256_add_pd(acc, _mm256_and_pd(a, keep));
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double a = std::fabs(x[i]);
        if (a >= tau) s += a;
    }
    return s;
}

static std::size_t count_below(const double* x, std::size_t n, double eps) {
    const __m256d veps = _mm256_set1_pd(eps);
    std::size_t c = 0, i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d lt = _mm256_cmp_pd(abs_pd(_mm256_loadu_pd(x + i)), veps, _CMP_LT_OQ);
        c += static_cast<std::size_t>(__builtin_popcount(static_cast<unsigned>(_mm256_movemask_pd(lt))));
    }
    for (; i < n; ++i)
        if (std::fabs(x[i]) < eps) ++c;
    return c;
}

static double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

static void f16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i h = _mm_loadu_si128(reinterpret_cast<const __m128i*>(in + i));
        _mm256_storeu_ps(out + i, _mm256_cvtph_ps(h));
    }
    for (; i < n; ++i) out[i] = f16_decode(in[i]);
}

static void f32_to_f16(const float* in, std::uint16_t* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i h = _mm256_cvtps_ph(_mm256_loadu_ps(in + i), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(out + i), h);
    }
    for (; i < n; ++i) out[i] = f16_encode(in[i]);
}

static void bf16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128i h = _mm_loadu_si128(reinterpret_cast<const __m128i*>(in + i));
        __m256i w = _mm256_slli_epi32(_mm256_cvtepu16_epi32(h), 16);
        _mm256_storeu_ps(out + i, _mm256_castsi256_ps(w));
    }
    for (; i < n; ++i) out[i] = bf16_decode(in[i]);
}

static void f32_to_bf16(const float* in, std::uint16_t* out, std::size_t n) {
    const __m256i abs_mask = _mm256_set1_epi32(0x7FFFFFFF);
    const __m256i inf_bits = _mm256_set1_epi32(0x7F800000);
    const __m256i round_c = _mm256_set1_epi32(0x7FFF);
    const __m256i one = _mm256_set1_epi32(1);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256i x = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(in + i));
        __m256i is_nan = _mm256_cmpgt_epi32(_mm256_and_si256(x, abs_mask), inf_bits);
        __m256i lsb = _mm256_and_si256(_mm256_srli_epi32(x, 16), one);
        __m256i rounded = _mm256_srli_epi32(_mm256_add_epi32(_mm256_add_epi32(x, round_c), lsb), 16);
        __m256i head = _mm256_srli_epi32(x, 16);
        // nan whose payload lived only in the truncated bits must stay a nan
        __m256i payload0 = _mm256_cmpeq_epi32(_mm256_and_si256(head, _mm256_set1_epi32(0x7F)), _mm256_setzero_si256());
        __m256i nan_fixed = _mm256_or_si256(head, _mm256_and_si256(payload0, _mm256_set1_epi32(0x40)));
        __m256i res = _mm256_blendv_epi8(rounded, nan_fixed, is_nan);
        __m128i lo = _mm256_castsi256_si128(res);
        __m128i hi = _mm256_extracti128_si256(res, 1);
        _mm_storeu_si128(reinterpret_cast<__m128i*>(out + i), _mm_packus_epi32(lo, hi));
    }
    for (; i < n; ++i) out[i] = bf16_encode(in[i]);
}

static void f32_to_f64(const float* in, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_cvtps_pd(_mm_loadu_ps(in + i)));
    for (; i < n; ++i) out[i] = static_cast<double>(in[i]);
}

static void f64_to_f32(const double* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm_storeu_ps(out + i, _mm256_cvtpd_ps(_mm256_loadu_pd(in + i)));
    for (; i < n; ++i) out[i] = static_cast<float>(in[i]);
}

}  // namespace tvmerge::kern::avx2

namespace tvmerge::kern {

bool avx2_compiled() { return true; }

const Ops& avx2_ops() {
    static const Ops table = [] {
        Ops t = scalar_ops();
        t.sub = avx2::sub;
        t.axpy = avx2::axpy;
        t.scale = avx2::scale;
        t.threshold_keep = avx2::threshold_keep;
        t.sum_abs = avx2::sum_abs;
        t.abs_moments = avx2::abs_moments;
        t.masked_abs_sum = avx2::masked_abs_sum;
        t.count_below = avx2::count_below;
        t.dot = avx2::dot;
        t.f16_to_f32 = avx2::f16_to_f32;
        t.f32_to_f16 = avx2::f32_to_f16;
        t.bf16_to_f32 = avx2::bf16_to_f32;
        t.f32_to_bf16 = avx2::f32_to_bf16;
        t.f32_to_f64 = avx2::f32_to_f64;
        t.f64_to_f32 = avx2::f64_to_f32;
        t.name = "avx2";
        return t;
    }();
    return table;
}

}  // namespace tvmerge::kern

#endif  // __x86_64__

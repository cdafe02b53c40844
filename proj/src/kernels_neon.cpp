// NEON kernel variants (AArch64). Same contract as the AVX2 file: explicit
// mul/add for elementwise kernels, two lane accumulators for reductions.

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "tvmerge/dtype.hpp"
#include "tvmerge/kernels.hpp"

namespace tvmerge::kern::neon {

static void sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

static void scale(double c, double* x, std::size_t n) {
    const float64x2_t vc = vdupq_n_f64(c);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(vc, vld1q_f64(x + i)));
    for (; i < n; ++i) x[i] *= c;
}

static void threshold_keep(const double* in, double* out, std::size_t n, double tau) {
    const float64x2_t vtau = vdupq_n_f64(tau);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(in + i);
        uint64x2_t keep = vcgeq_f64(vabsq_f64(v), vtau);
        vst1q_f64(out + i, vbslq_f64(keep, v, vdupq_n_f64(0.0)));
    }
    for (; i < n; ++i) out[i] = std::fabs(in[i]) >= tau ? in[i] : 0.0;
}

static double sum_abs(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vabsq_f64(vld1q_f64(x + i)));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += std::fabs(x[i]);
    return s;
}

static void abs_moments(const double* x, std::size_t n, double* out_abs, double* out_sq) {
    float64x2_t acc1 = vdupq_n_f64(0.0), acc2 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t a = vabsq_f64(vld1q_f64(x + i));
        acc1 = vaddq_f64(acc1, a);
        acc2 = vaddq_f64(acc2, vmulq_f64(a, a));
    }
    double s1 = vaddvq_f64(acc1), s2 = vaddvq_f64(acc2);
    for (; i < n; ++i) {
        const double a = std::fabs(x[i]);
        s1 += a;
        s2 += a * a;
    }
    *out_abs = s1;
    *out_sq = s2;
}

static double masked_abs_sum(const double* x, std::size_t n, double tau) {
    const float64x2_t vtau = vdupq_n_f64(tau);
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t a = vabsq_f64(vld1q_f64(x + i));
        uint64x2_t keep = vcgeq_f64(a, vtau);
        acc = vaddq_f64(acc, vbslq_f64(keep, a, vdupq_n_f64(0.0)));
    }
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) {
        const double a = std::fabs(x[i]);
        if (a >= tau) s += a;
    }
    return s;
}

static std::size_t count_below(const double* x, std::size_t n, double eps) {
    const float64x2_t veps = vdupq_n_f64(eps);
    std::size_t c = 0, i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t lt = vcltq_f64(vabsq_f64(vld1q_f64(x + i)), veps);
        c += vaddvq_u64(vshrq_n_u64(lt, 63));
    }
    for (; i < n; ++i)
        if (std::fabs(x[i]) < eps) ++c;
    return c;
}

static double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

static void f16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float16x4_t h = vreinterpret_f16_u16(vld1_u16(in + i));
        vst1q_f32(out + i, vcvt_f32_f16(h));
    }
    for (; i < n; ++i) out[i] = f16_decode(in[i]);
}

static void f32_to_f16(const float* in, std::uint16_t* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float16x4_t h = vcvt_f16_f32(vld1q_f32(in + i));  // RNE in the default fpcr mode
        vst1_u16(out + i, vreinterpret_u16_f16(h));
    }
    for (; i < n; ++i) out[i] = f16_encode(in[i]);
}

static void bf16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        uint32x4_t w = vshlq_n_u32(vmovl_u16(vld1_u16(in + i)), 16);
        vst1q_f32(out + i, vreinterpretq_f32_u32(w));
    }
    for (; i < n; ++i) out[i] = bf16_decode(in[i]);
}

static void f32_to_f64(const float* in, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vcvt_f64_f32(vld1_f32(in + i)));
    for (; i < n; ++i) out[i] = static_cast<double>(in[i]);
}

static void f64_to_f32(const double* in, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1_f32(out + i, vcvt_f32_f64(vld1q_f64(in + i)));
    for (; i < n; ++i) out[i] = static_cast<float>(in[i]);
}

}  // namespace tvmerge::kern::neon

namespace tvmerge::kern {

const Ops& neon_ops() {
    static const Ops table = [] {
        Ops t = scalar_ops();
        t.sub = neon::sub;
        t.axpy = neon::axpy;
        t.scale = neon::scale;
        t.threshold_keep = neon::threshold_keep;
        t.sum_abs = neon::sum_abs;
        t.abs_moments = neon::abs_moments;
        t.masked_abs_sum = neon::masked_abs_sum;
        t.count_below = neon::count_below;
        t.dot = neon::dot;
        t.f16_to_f32 = neon::f16_to_f32;
        t.f32_to_f16 = neon::f32_to_f16;
        t.bf16_to_f32 = neon::bf16_to_f32;
        // f32_to_bf16 stays on the scalar path (branchy nan fix)
        t.f32_to_f64 = neon::f32_to_f64;
        t.f64_to_f32 = neon::f64_to_f32;
        t.name = "neon";
        return t;
    }();
    return table;
}

}  // namespace tvmerge::kern

#endif  // __aarch64__

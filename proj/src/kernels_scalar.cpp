// Scalar reference kernels. Compiled with fp-contract off so the SIMD
// variants (which use explicit mul/add, no FMA) can match elementwise
// results bit-for-bit.

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "tvmerge/dtype.hpp"
#include "tvmerge/kernels.hpp"

namespace tvmerge::kern::scalar {

static void sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

static void scale(double c, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= c;
}

static void threshold_keep(const double* in, double* out, std::size_t n, double tau) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(in[i]) >= tau ? in[i] : 0.0;
}

static double sum_abs(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::fabs(x[i]);
    return s;
}

static void abs_moments(const double* x, std::size_t n, double* out_abs, double* out_sq) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::fabs(x[i]);
        s1 += a;
        s2 += a * a;
    }
    *out_abs = s1;
    *out_sq = s2;
}

static double masked_abs_sum(const double* x, std::size_t n, double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::fabs(x[i]);
        if (a >= tau) s += a;
    }
    return s;
}

static std::size_t count_below(const double* x, std::size_t n, double eps) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (std::fabs(x[i]) < eps) ++c;
    return c;
}

static double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

static void f16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f16_decode(in[i]);
}

static void f32_to_f16(const float* in, std::uint16_t* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f16_encode(in[i]);
}

static void bf16_to_f32(const std::uint16_t* in, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = bf16_decode(in[i]);
}

static void f32_to_bf16(const float* in, std::uint16_t* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = bf16_encode(in[i]);
}

static void f32_to_f64(const float* in, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(in[i]);
}

static void f64_to_f32(const double* in, float* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(in[i]);
}

}  // namespace tvmerge::kern::scalar

namespace tvmerge::kern {

const Ops& scalar_ops() {
    static const Ops table = {
        scalar::sub,
        scalar::axpy,
        scalar::scale,
        scalar::threshold_keep,
        scalar::sum_abs,
        scalar::abs_moments,
        scalar::masked_abs_sum,
        scalar::count_below,
        scalar::dot,
        scalar::f16_to_f32,
        scalar::f32_to_f16,
        scalar::bf16_to_f32,
        scalar::f32_to_bf16,
        scalar::f32_to_f64,
        scalar::f64_to_f32,
        "scalar",
    };
    return table;
}

}  // namespace tvmerge::kern

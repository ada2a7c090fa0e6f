// NEON (aarch64) variants, 2 doubles per lane pair.

#include "camogen/simd/simd.hpp"

#include <arm_neon.h>

namespace camogen::simd {
namespace {

void add_neon(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(dst + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_neon(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(dst + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_neon(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(dst + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void fma_acc_neon(const double* a, const double* b, double* acc, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(acc + i, vfmaq_f64(vld1q_f64(acc + i), vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void axpy_neon(double alpha, const double* x, double* y, size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(const double* x, double alpha, double* dst, size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(dst + i, vmulq_f64(va, vld1q_f64(x + i)));
    for (; i < n; ++i) dst[i] = alpha * x[i];
}

void fill_neon(double* dst, double value, size_t n) {
    const float64x2_t v = vdupq_n_f64(value);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(dst + i, v);
    for (; i < n; ++i) dst[i] = value;
}

double dot_neon(const double* a, const double* b, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2)
        acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_neon(const double* a, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

double sq_diff_sum_neon(const double* a, const double* b, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vfmaq_f64(acc, d, d);
    }
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double max_neon(const double* a, size_t n) {
    size_t i = 0;
    double m;
    if (n >= 2) {
        float64x2_t vm = vld1q_f64(a);
        for (i = 2; i + 2 <= n; i += 2) vm = vmaxq_f64(vm, vld1q_f64(a + i));
        m = vmaxvq_f64(vm);
    } else {
        m = a[0];
        i = 1;
    }
    for (; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

}  // namespace

const Kernels& neon_kernels() {
    static const Kernels k = {
        add_neon,  sub_neon,   mul_neon,         fma_acc_neon,
        axpy_neon, scale_neon, fill_neon,        dot_neon,
        sum_neon,  sq_diff_sum_neon, max_neon,
    };
    return k;
}

}  // namespace camogen::simd

// AVX2/FMA variants of the kernel table. This TU is compiled with
// -mavx2 -mfma and must only be reached after a cpuid check (dispatch.cpp).

#include "camogen/simd/simd.hpp"

#include <immintrin.h>

namespace camogen::simd {
namespace {

inline double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void add_avx2(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        _mm256_storeu_pd(dst + i, _mm256_add_pd(va, vb));
    }
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        _mm256_storeu_pd(dst + i, _mm256_sub_pd(va, vb));
    }
    for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(const double* a, const double* b, double* dst, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(va, vb));
    }
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void fma_acc_avx2(const double* a, const double* b, double* acc, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        __m256d vc = _mm256_loadu_pd(acc + i);
        _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(va, vb, vc));
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void axpy_avx2(double alpha, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, vx, vy));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(const double* x, double alpha, double* dst, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) dst[i] = alpha * x[i];
}

void fill_avx2(double* dst, double value, size_t n) {
    const __m256d v = _mm256_set1_pd(value);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(dst + i, v);
    for (; i < n; ++i) dst[i] = value;
}

double dot_avx2(const double* a, const double* b, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum256(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_avx2(const double* a, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double s = hsum256(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

double sq_diff_sum_avx2(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum256(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double max_avx2(const double* a, size_t n) {
    size_t i = 0;
    double m;
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(a);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
        __m128d lo = _mm256_castpd256_pd128(vm);
        __m128d hi = _mm256_extractf128_pd(vm, 1);
        lo = _mm_max_pd(lo, hi);
        __m128d sh = _mm_unpackhi_pd(lo, lo);
        m = _mm_cvtsd_f64(_mm_max_sd(lo, sh));
    } else {
        m = a[0];
        i = 1;
    }
    for (; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

}  // namespace

const Kernels& avx2_kernels() {
    static const Kernels k = {
        add_avx2,  sub_avx2,   mul_avx2,         fma_acc_avx2,
        axpy_avx2, scale_avx2, fill_avx2,        dot_avx2,
        sum_avx2,  sq_diff_sum_avx2, max_avx2,
    };
    return k;
}

}  // namespace camogen::simd

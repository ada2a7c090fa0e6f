#include "camogen/simd/simd.hpp"

namespace camogen::simd {
namespace {

void add_scalar(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(const double* a, const double* b, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void fma_acc_scalar(const double* a, const double* b, double* acc, size_t n) {
    for (size_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void axpy_scalar(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(const double* x, double alpha, double* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = alpha * x[i];
}

void fill_scalar(double* dst, double value, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = value;
}

double dot_scalar(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_scalar(const double* a, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

double sq_diff_sum_scalar(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double max_scalar(const double* a, size_t n) {
    double m = a[0];
    for (size_t i = 1; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {
        add_scalar,  sub_scalar,   mul_scalar,         fma_acc_scalar,
        axpy_scalar, scale_scalar, fill_scalar,        dot_scalar,
        sum_scalar,  sq_diff_sum_scalar, max_scalar,
    };
    return k;
}

}  // namespace camogen::simd

#pragma once

#include <cstddef>
#include <string>

namespace camogen::simd {

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa);

// Flat double-precision kernels behind every inner loop in the project.
// Each entry has a scalar reference implementation plus ISA variants that
// are equivalence-tested against it (see tests/unit/test_simd.cpp).
struct Kernels {
    // elementwise, all spans contiguous
    void (*add)(const double* a, const double* b, double* dst, size_t n);
    void (*sub)(const double* a, const double* b, double* dst, size_t n);
    void (*mul)(const double* a, const double* b, double* dst, size_t n);
    void (*fma_acc)(const double* a, const double* b, double* acc, size_t n);  // acc += a*b
    void (*axpy)(double alpha, const double* x, double* y, size_t n);          // y += alpha*x
    void (*scale)(const double* x, double alpha, double* dst, size_t n);       // dst = alpha*x
    void (*fill)(double* dst, double value, size_t n);

    // reductions
    double (*dot)(const double* a, const double* b, size_t n);
    double (*sum)(const double* a, size_t n);
    double (*sq_diff_sum)(const double* a, const double* b, size_t n);  // sum (a-b)^2
    double (*max)(const double* a, size_t n);                           // n >= 1
};

bool isa_available(Isa isa);
const Kernels& kernels_for(Isa isa);  // caller must check availability first

// Active table. Picked once: CAMOGEN_SIMD=scalar|avx2|neon overrides, else the
// widest available ISA wins.
const Kernels& active();
Isa active_isa();

// Test hook; affects subsequent active() calls.
void force_isa(Isa isa);

}  // namespace camogen::simd

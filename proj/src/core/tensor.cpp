#include "camogen/core/tensor.hpp"

#include "camogen/simd/simd.hpp"

namespace camogen {

void Tensor::zero() { simd::active().fill(data.data(), 0.0, data.size()); }

namespace linalg {

void gemm_nn(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate) {
    const auto& k = simd::active();
    for (int i = 0; i < M; ++i) {
        double* crow = C + static_cast<size_t>(i) * ldc;
        if (!accumulate) k.fill(crow, 0.0, static_cast<size_t>(N));
        const double* arow = A + static_cast<size_t>(i) * lda;
        for (int p = 0; p < K; ++p)
            k.axpy(arow[p], B + static_cast<size_t>(p) * ldb, crow, static_cast<size_t>(N));
    }
}

void gemm_nt(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate) {
    const auto& k = simd::active();
    for (int i = 0; i < M; ++i) {
        const double* arow = A + static_cast<size_t>(i) * lda;
        double* crow = C + static_cast<size_t>(i) * ldc;
        for (int j = 0; j < N; ++j) {
            const double v = k.dot(arow, B + static_cast<size_t>(j) * ldb, static_cast<size_t>(K));
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

void gemm_tn(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate) {
    const auto& k = simd::active();
    if (!accumulate)
        for (int i = 0; i < M; ++i) k.fill(C + static_cast<size_t>(i) * ldc, 0.0, static_cast<size_t>(N));
    for (int p = 0; p < K; ++p) {
        const double* arow = A + static_cast<size_t>(p) * lda;
        const double* brow = B + static_cast<size_t>(p) * ldb;
        for (int i = 0; i < M; ++i)
            k.axpy(arow[i], brow, C + static_cast<size_t>(i) * ldc, static_cast<size_t>(N));
    }
}

}  // namespace linalg
}  // namespace camogen

#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace camogen {

// Dense row-major double tensor. Rank is whatever the shape says; most of the
// project uses rank 2 (token matrices) and rank 4 (B,C,H,W feature maps).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        assert(static_cast<size_t>(numel_of(shape)) == data.size());
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols(); }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols(); }

    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void zero();
};

namespace linalg {

// C (+)= A * B, A: MxK (lda), B: KxN (ldb), C: MxN (ldc)
void gemm_nn(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate);

// C (+)= A * B^T, A: MxK (lda), B: NxK (ldb), C: MxN (ldc)
void gemm_nt(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate);

// C (+)= A^T * B, A: KxM (lda), B: KxN (ldb), C: MxN (ldc)
void gemm_tn(int M, int N, int K, const double* A, int lda, const double* B, int ldb,
             double* C, int ldc, bool accumulate);

}  // namespace linalg

}  // namespace camogen

#pragma once

#include <cstdint>

// Runtime-loaded BLAS backend for the dense matmul kernels. OpenBLAS is
// loaded with dlopen after the core type has been pinned from actual CPU
// features; this keeps kernel selection stable on machines whose CPUID
// model string is masked (where OpenBLAS would otherwise fall back to its
// generic SSE path). Falls back to a naive loop kernel when the library
// is unavailable so the rest of the project still runs.

namespace bldlab {

enum class MatOp { none, transpose };

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
void gemm_f32(MatOp op_a, MatOp op_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc);
void gemm_f64(MatOp op_a, MatOp op_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc);

template <class T>
void gemm(MatOp op_a, MatOp op_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc);

template <>
inline void gemm<float>(MatOp op_a, MatOp op_b, int m, int n, int k,
                        float alpha, const float* a, int lda, const float* b,
                        int ldb, float beta, float* c, int ldc) {
    gemm_f32(op_a, op_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
inline void gemm<double>(MatOp op_a, MatOp op_b, int m, int n, int k,
                         double alpha, const double* a, int lda,
                         const double* b, int ldb, double beta, double* c,
                         int ldc) {
    gemm_f64(op_a, op_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// Loads the backend once per process. Safe to call repeatedly.
void blas_init();

// Number of threads the BLAS backend may use (1 = serial). Worker pools
// that parallelize at a coarser level should pin this to 1.
void blas_set_threads(int n);

// Human-readable backend description ("openblas/SkylakeX", "builtin").
const char* blas_backend_name();

}  // namespace bldlab

#include "bldlab/blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <string>

namespace bldlab {

namespace {

// cblas enums (values fixed by the CBLAS standard)
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*,
                          int, const float*, int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*,
                          int, const double*, int, double, double*, int);
using set_threads_fn = void (*)(int);
using corename_fn = char* (*)();

sgemm_fn g_sgemm = nullptr;
dgemm_fn g_dgemm = nullptr;
set_threads_fn g_set_threads = nullptr;
std::string g_backend_name = "builtin";
std::once_flag g_init_once;

// Pick the strongest OpenBLAS kernel set the CPU actually supports. Only
// raises the level; an explicit OPENBLAS_CORETYPE in the environment wins.
void pin_coretype_from_cpu_features() {
    if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
        __builtin_cpu_supports("avx512bw") && __builtin_cpu_supports("avx512vl")) {
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    } else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
    }
#endif
}

void load_backend() {
    pin_coretype_from_cpu_features();
    void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!handle) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!handle) return;
    auto sgemm = reinterpret_cast<sgemm_fn>(dlsym(handle, "cblas_sgemm"));
    auto dgemm = reinterpret_cast<dgemm_fn>(dlsym(handle, "cblas_dgemm"));
    if (!sgemm || !dgemm) return;
    g_sgemm = sgemm;
    g_dgemm = dgemm;
    g_set_threads =
        reinterpret_cast<set_threads_fn>(dlsym(handle, "openblas_set_num_threads"));
    if (g_set_threads) g_set_threads(1);
    g_backend_name = "openblas";
    if (auto corename = reinterpret_cast<corename_fn>(dlsym(handle, "openblas_get_corename"))) {
        g_backend_name += "/";
        g_backend_name += corename();
    }
}

// Reference kernel: each output element is accumulated by a single pass in
// ascending k, so results are deterministic.
template <class T>
void gemm_naive(MatOp op_a, MatOp op_b, int m, int n, int k, T alpha,
                const T* a, int lda, const T* b, int ldb, T beta, T* c,
                int ldc) {
    auto at = [&](int i, int j) {
        return op_a == MatOp::none ? a[(size_t)i * lda + j] : a[(size_t)j * lda + i];
    };
    auto bt = [&](int i, int j) {
        return op_b == MatOp::none ? b[(size_t)i * ldb + j] : b[(size_t)j * ldb + i];
    };
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += at(i, p) * bt(p, j);
            T* out = &c[(size_t)i * ldc + j];
            *out = alpha * acc + (beta == T(0) ? T(0) : beta * *out);
        }
    }
}

}  // namespace

void blas_init() { std::call_once(g_init_once, load_backend); }

void blas_set_threads(int n) {
    blas_init();
    if (g_set_threads) g_set_threads(n < 1 ? 1 : n);
}

const char* blas_backend_name() {
    blas_init();
    return g_backend_name.c_str();
}

void gemm_f32(MatOp op_a, MatOp op_b, int m, int n, int k, float alpha,
              const float* a, int lda, const float* b, int ldb, float beta,
              float* c, int ldc) {
    blas_init();
    if (m == 0 || n == 0) return;
    if (g_sgemm) {
        g_sgemm(kRowMajor, op_a == MatOp::none ? kNoTrans : kTrans,
                op_b == MatOp::none ? kNoTrans : kTrans, m, n, k, alpha, a, lda,
                b, ldb, beta, c, ldc);
        return;
    }
    gemm_naive(op_a, op_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_f64(MatOp op_a, MatOp op_b, int m, int n, int k, double alpha,
              const double* a, int lda, const double* b, int ldb, double beta,
              double* c, int ldc) {
    blas_init();
    if (m == 0 || n == 0) return;
    if (g_dgemm) {
        g_dgemm(kRowMajor, op_a == MatOp::none ? kNoTrans : kTrans,
                op_b == MatOp::none ? kNoTrans : kTrans, m, n, k, alpha, a, lda,
                b, ldb, beta, c, ldc);
        return;
    }
    gemm_naive(op_a, op_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace bldlab

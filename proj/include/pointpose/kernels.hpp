#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner-loop kernels. Every entry point has a scalar reference
// implementation and, on x86-64, an AVX2+FMA variant selected at runtime.
// The two lanes are equivalence-tested against each other; select explicitly
// with POINTPOSE_KERNELS={scalar,avx2} or kern::set_active().

namespace pointpose::kern {

struct Table {
    const char* name;

    // Row-major GEMM family. acc=false overwrites C, acc=true accumulates.
    // gemm:      C[M,N] (+)= A[M,K] * B[K,N]
    // gemm_at_b: C[K,N] (+)= A[M,K]^T * B[M,N]
    // gemm_a_bt: C[M,N] (+)= A[M,K] * B[N,K]^T
    void (*sgemm)(const float* A, const float* B, float* C, int M, int N, int K, bool acc);
    void (*sgemm_at_b)(const float* A, const float* B, float* C, int M, int N, int K, bool acc);
    void (*sgemm_a_bt)(const float* A, const float* B, float* C, int M, int N, int K, bool acc);

    void (*leaky_relu)(const float* x, float* y, size_t n, float slope);
    // dx += dy * (x > 0 ? 1 : slope)
    void (*leaky_relu_grad)(const float* x, const float* dy, float* dx, size_t n, float slope);

    // x[r,c] += b[c]
    void (*bias_add)(float* x, const float* b, int rows, int cols);
    // s[c] += sum_r x[r,c]
    void (*col_sums_acc)(const float* x, float* s, int rows, int cols);

    // y += a * x
    void (*axpy)(float a, const float* x, float* y, size_t n);

    // Fused moment-estimate parameter update.
    // m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2 ;
    // p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
    void (*adam_step)(float* p, float* m, float* v, const float* g, size_t n,
                      float lr, float b1, float b2, float eps, float bc1, float bc2);

    // D[i,j] = max(0, sqn[i] + sqn[j] - 2*G[i,j]) for an n x n Gram block.
    void (*sqdist_from_gram)(const float* G, const float* sqn, float* D, int n);
};

const Table& scalar_table();
const Table* avx2_table();  // null when not compiled in or CPU lacks AVX2+FMA

// Active table. Resolved once: POINTPOSE_KERNELS env override, else the
// widest lane the CPU supports.
const Table& active();
// Force a lane by name ("scalar", "avx2"); throws on unknown/unavailable.
void set_active(const char* name);

// Generic scalar reference ops shared by the float table and the
// double-precision shadow path used for gradient checking.
template <typename T>
void gemm_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc);
template <typename T>
void gemm_at_b_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc);
template <typename T>
void gemm_a_bt_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc);

}  // namespace pointpose::kern

#include "pointpose/kernels.hpp"

#include <cmath>

#include "pointpose/util.hpp"

namespace pointpose::kern {

template <typename T>
void gemm_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc) {
    parallel_for(M, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            T* c = C + i * N;
            if (!acc)
                for (int j = 0; j < N; ++j) c[j] = T(0);
            const T* a = A + i * K;
            for (int k = 0; k < K; ++k) {
                T av = a[k];
                const T* b = B + static_cast<int64_t>(k) * N;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    }, 8);
}

template <typename T>
void gemm_at_b_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc) {
    // C[K,N] = A[M,K]^T * B[M,N]; parallel over rows of C (columns of A).
    parallel_for(K, [&](int64_t k0, int64_t k1) {
        for (int64_t k = k0; k < k1; ++k) {
            T* c = C + k * N;
            if (!acc)
                for (int j = 0; j < N; ++j) c[j] = T(0);
            for (int i = 0; i < M; ++i) {
                T av = A[static_cast<int64_t>(i) * K + k];
                const T* b = B + static_cast<int64_t>(i) * N;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    }, 4);
}

template <typename T>
void gemm_a_bt_ref(const T* A, const T* B, T* C, int M, int N, int K, bool acc) {
    parallel_for(M, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            const T* a = A + i * K;
            T* c = C + i * N;
            for (int j = 0; j < N; ++j) {
                const T* b = B + static_cast<int64_t>(j) * K;
                T s = acc ? c[j] : T(0);
                for (int k = 0; k < K; ++k) s += a[k] * b[k];
                c[j] = s;
            }
        }
    }, 8);
}

template void gemm_ref<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_ref<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_at_b_ref<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_at_b_ref<double>(const double*, const double*, double*, int, int, int, bool);
template void gemm_a_bt_ref<float>(const float*, const float*, float*, int, int, int, bool);
template void gemm_a_bt_ref<double>(const double*, const double*, double*, int, int, int, bool);

namespace {

void s_gemm(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    gemm_ref<float>(A, B, C, M, N, K, acc);
}
void s_gemm_at_b(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    gemm_at_b_ref<float>(A, B, C, M, N, K, acc);
}
void s_gemm_a_bt(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    gemm_a_bt_ref<float>(A, B, C, M, N, K, acc);
}

void s_leaky_relu(const float* x, float* y, size_t n, float slope) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
    }, 1 << 14);
}

void s_leaky_relu_grad(const float* x, const float* dy, float* dx, size_t n, float slope) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) dx[i] += dy[i] * (x[i] > 0.0f ? 1.0f : slope);
    }, 1 << 14);
}

void s_bias_add(float* x, const float* b, int rows, int cols) {
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            float* row = x + r * cols;
            for (int c = 0; c < cols; ++c) row[c] += b[c];
        }
    }, 64);
}

void s_col_sums_acc(const float* x, float* s, int rows, int cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = x + r * cols;
        for (int c = 0; c < cols; ++c) s[c] += row[c];
    }
}

void s_axpy(float a, const float* x, float* y, size_t n) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) y[i] += a * x[i];
    }, 1 << 14);
}

void s_adam_step(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float b1, float b2, float eps, float bc1, float bc2) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            float mh = m[i] / bc1;
            float vh = v[i] / bc2;
            p[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }, 1 << 14);
}

void s_sqdist_from_gram(const float* G, const float* sqn, float* D, int n) {
    parallel_for(n, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            const float* g = G + i * n;
            float* d = D + i * n;
            float ni = sqn[i];
            for (int j = 0; j < n; ++j) {
                float v = ni + sqn[j] - 2.0f * g[j];
                d[j] = v > 0.0f ? v : 0.0f;
            }
        }
    }, 64);
}

}  // namespace

const Table& scalar_table() {
    static const Table t{
        "scalar",    s_gemm,     s_gemm_at_b, s_gemm_a_bt,       s_leaky_relu,
        s_leaky_relu_grad, s_bias_add, s_col_sums_acc, s_axpy, s_adam_step,
        s_sqdist_from_gram,
    };
    return t;
}

}  // namespace pointpose::kern

#include "pointpose/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define POINTPOSE_X86 1
#else
#define POINTPOSE_X86 0
#endif

#if POINTPOSE_X86

#include <immintrin.h>

#include <cmath>

#include "pointpose/util.hpp"

namespace pointpose::kern {
namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

// 4x16 register-tiled microkernel rows; edges fall back to scalar tails.
void v_gemm(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    parallel_for(M, [&](int64_t r0, int64_t r1) {
        int64_t i = r0;
        for (; i + 4 <= r1; i += 4) {
            const float* a0 = A + (i + 0) * K;
            const float* a1 = A + (i + 1) * K;
            const float* a2 = A + (i + 2) * K;
            const float* a3 = A + (i + 3) * K;
            int j = 0;
            for (; j + 16 <= N; j += 16) {
                __m256 c00, c01, c10, c11, c20, c21, c30, c31;
                if (acc) {
                    c00 = _mm256_loadu_ps(C + (i + 0) * N + j);
                    c01 = _mm256_loadu_ps(C + (i + 0) * N + j + 8);
                    c10 = _mm256_loadu_ps(C + (i + 1) * N + j);
                    c11 = _mm256_loadu_ps(C + (i + 1) * N + j + 8);
                    c20 = _mm256_loadu_ps(C + (i + 2) * N + j);
                    c21 = _mm256_loadu_ps(C + (i + 2) * N + j + 8);
                    c30 = _mm256_loadu_ps(C + (i + 3) * N + j);
                    c31 = _mm256_loadu_ps(C + (i + 3) * N + j + 8);
                } else {
                    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_ps();
                }
                for (int k = 0; k < K; ++k) {
                    const float* b = B + static_cast<int64_t>(k) * N + j;
                    __m256 b0 = _mm256_loadu_ps(b);
                    __m256 b1 = _mm256_loadu_ps(b + 8);
                    __m256 av;
                    av = _mm256_set1_ps(a0[k]);
                    c00 = _mm256_fmadd_ps(av, b0, c00);
                    c01 = _mm256_fmadd_ps(av, b1, c01);
                    av = _mm256_set1_ps(a1[k]);
                    c10 = _mm256_fmadd_ps(av, b0, c10);
                    c11 = _mm256_fmadd_ps(av, b1, c11);
                    av = _mm256_set1_ps(a2[k]);
                    c20 = _mm256_fmadd_ps(av, b0, c20);
                    c21 = _mm256_fmadd_ps(av, b1, c21);
                    av = _mm256_set1_ps(a3[k]);
                    c30 = _mm256_fmadd_ps(av, b0, c30);
                    c31 = _mm256_fmadd_ps(av, b1, c31);
                }
                _mm256_storeu_ps(C + (i + 0) * N + j, c00);
                _mm256_storeu_ps(C + (i + 0) * N + j + 8, c01);
                _mm256_storeu_ps(C + (i + 1) * N + j, c10);
                _mm256_storeu_ps(C + (i + 1) * N + j + 8, c11);
                _mm256_storeu_ps(C + (i + 2) * N + j, c20);
                _mm256_storeu_ps(C + (i + 2) * N + j + 8, c21);
                _mm256_storeu_ps(C + (i + 3) * N + j, c30);
                _mm256_storeu_ps(C + (i + 3) * N + j + 8, c31);
            }
            for (; j < N; ++j) {
                for (int r = 0; r < 4; ++r) {
                    const float* a = A + (i + r) * K;
                    float s = acc ? C[(i + r) * N + j] : 0.0f;
                    for (int k = 0; k < K; ++k) s += a[k] * B[static_cast<int64_t>(k) * N + j];
                    C[(i + r) * N + j] = s;
                }
            }
        }
        for (; i < r1; ++i) {
            const float* a = A + i * K;
            float* c = C + i * N;
            int j = 0;
            for (; j + 8 <= N; j += 8) {
                __m256 cc = acc ? _mm256_loadu_ps(c + j) : _mm256_setzero_ps();
                for (int k = 0; k < K; ++k) {
                    __m256 av = _mm256_set1_ps(a[k]);
                    cc = _mm256_fmadd_ps(av, _mm256_loadu_ps(B + static_cast<int64_t>(k) * N + j), cc);
                }
                _mm256_storeu_ps(c + j, cc);
            }
            for (; j < N; ++j) {
                float s = acc ? c[j] : 0.0f;
                for (int k = 0; k < K; ++k) s += a[k] * B[static_cast<int64_t>(k) * N + j];
                c[j] = s;
            }
        }
    }, 8);
}

void v_gemm_at_b(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    // C[K,N] += A[M,K]^T * B[M,N]; rank-1 accumulation, parallel over C rows.
    parallel_for(K, [&](int64_t k0, int64_t k1) {
        for (int64_t k = k0; k < k1; ++k) {
            float* c = C + k * N;
            if (!acc)
                for (int j = 0; j < N; ++j) c[j] = 0.0f;
            for (int i = 0; i < M; ++i) {
                __m256 av = _mm256_set1_ps(A[static_cast<int64_t>(i) * K + k]);
                const float* b = B + static_cast<int64_t>(i) * N;
                int j = 0;
                for (; j + 8 <= N; j += 8)
                    _mm256_storeu_ps(c + j, _mm256_fmadd_ps(av, _mm256_loadu_ps(b + j), _mm256_loadu_ps(c + j)));
                float a = A[static_cast<int64_t>(i) * K + k];
                for (; j < N; ++j) c[j] += a * b[j];
            }
        }
    }, 4);
}

void v_gemm_a_bt(const float* A, const float* B, float* C, int M, int N, int K, bool acc) {
    parallel_for(M, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            const float* a = A + i * K;
            float* c = C + i * N;
            int j = 0;
            for (; j + 4 <= N; j += 4) {
                __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
                __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
                const float* b0 = B + static_cast<int64_t>(j + 0) * K;
                const float* b1 = B + static_cast<int64_t>(j + 1) * K;
                const float* b2 = B + static_cast<int64_t>(j + 2) * K;
                const float* b3 = B + static_cast<int64_t>(j + 3) * K;
                int k = 0;
                for (; k + 8 <= K; k += 8) {
                    __m256 av = _mm256_loadu_ps(a + k);
                    s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + k), s0);
                    s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + k), s1);
                    s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + k), s2);
                    s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + k), s3);
                }
                float t0 = hsum8(s0), t1 = hsum8(s1), t2 = hsum8(s2), t3 = hsum8(s3);
                for (; k < K; ++k) {
                    t0 += a[k] * b0[k];
                    t1 += a[k] * b1[k];
                    t2 += a[k] * b2[k];
                    t3 += a[k] * b3[k];
                }
                c[j + 0] = (acc ? c[j + 0] : 0.0f) + t0;
                c[j + 1] = (acc ? c[j + 1] : 0.0f) + t1;
                c[j + 2] = (acc ? c[j + 2] : 0.0f) + t2;
                c[j + 3] = (acc ? c[j + 3] : 0.0f) + t3;
            }
            for (; j < N; ++j) {
                const float* b = B + static_cast<int64_t>(j) * K;
                float s = acc ? c[j] : 0.0f;
                for (int k = 0; k < K; ++k) s += a[k] * b[k];
                c[j] = s;
            }
        }
    }, 8);
}

void v_leaky_relu(const float* x, float* y, size_t n, float slope) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        __m256 sl = _mm256_set1_ps(slope);
        __m256 zero = _mm256_setzero_ps();
        int64_t i = b;
        for (; i + 8 <= e; i += 8) {
            __m256 v = _mm256_loadu_ps(x + i);
            __m256 neg = _mm256_mul_ps(v, sl);
            __m256 mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
            _mm256_storeu_ps(y + i, _mm256_blendv_ps(neg, v, mask));
        }
        for (; i < e; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
    }, 1 << 14);
}

void v_leaky_relu_grad(const float* x, const float* dy, float* dx, size_t n, float slope) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        __m256 sl = _mm256_set1_ps(slope);
        __m256 one = _mm256_set1_ps(1.0f);
        __m256 zero = _mm256_setzero_ps();
        int64_t i = b;
        for (; i + 8 <= e; i += 8) {
            __m256 v = _mm256_loadu_ps(x + i);
            __m256 mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
            __m256 f = _mm256_blendv_ps(sl, one, mask);
            __m256 d = _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), f, _mm256_loadu_ps(dx + i));
            _mm256_storeu_ps(dx + i, d);
        }
        for (; i < e; ++i) dx[i] += dy[i] * (x[i] > 0.0f ? 1.0f : slope);
    }, 1 << 14);
}

void v_bias_add(float* x, const float* b, int rows, int cols) {
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            float* row = x + r * cols;
            int c = 0;
            for (; c + 8 <= cols; c += 8)
                _mm256_storeu_ps(row + c, _mm256_add_ps(_mm256_loadu_ps(row + c), _mm256_loadu_ps(b + c)));
            for (; c < cols; ++c) row[c] += b[c];
        }
    }, 64);
}

void v_col_sums_acc(const float* x, float* s, int rows, int cols) {
    int c = 0;
    for (; c + 8 <= cols; c += 8) {
        __m256 acc = _mm256_loadu_ps(s + c);
        for (int64_t r = 0; r < rows; ++r)
            acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + r * cols + c));
        _mm256_storeu_ps(s + c, acc);
    }
    for (; c < cols; ++c) {
        float acc = s[c];
        for (int64_t r = 0; r < rows; ++r) acc += x[r * cols + c];
        s[c] = acc;
    }
}

void v_axpy(float a, const float* x, float* y, size_t n) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        __m256 av = _mm256_set1_ps(a);
        int64_t i = b;
        for (; i + 8 <= e; i += 8)
            _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
        for (; i < e; ++i) y[i] += a * x[i];
    }, 1 << 14);
}

void v_adam_step(float* p, float* m, float* v, const float* g, size_t n,
                 float lr, float b1, float b2, float eps, float bc1, float bc2) {
    parallel_for(static_cast<int64_t>(n), [&](int64_t b, int64_t e) {
        __m256 vb1 = _mm256_set1_ps(b1), vnb1 = _mm256_set1_ps(1.0f - b1);
        __m256 vb2 = _mm256_set1_ps(b2), vnb2 = _mm256_set1_ps(1.0f - b2);
        __m256 veps = _mm256_set1_ps(eps);
        __m256 vlr = _mm256_set1_ps(lr);
        __m256 ibc1 = _mm256_set1_ps(1.0f / bc1);
        __m256 ibc2 = _mm256_set1_ps(1.0f / bc2);
        int64_t i = b;
        for (; i + 8 <= e; i += 8) {
            __m256 gv = _mm256_loadu_ps(g + i);
            __m256 mv = _mm256_fmadd_ps(vnb1, gv, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
            __m256 vv = _mm256_fmadd_ps(vnb2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
            _mm256_storeu_ps(m + i, mv);
            _mm256_storeu_ps(v + i, vv);
            __m256 mh = _mm256_mul_ps(mv, ibc1);
            __m256 vh = _mm256_sqrt_ps(_mm256_mul_ps(vv, ibc2));
            __m256 upd = _mm256_div_ps(_mm256_mul_ps(vlr, mh), _mm256_add_ps(vh, veps));
            _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
        }
        for (; i < e; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }, 1 << 14);
}

void v_sqdist_from_gram(const float* G, const float* sqn, float* D, int n) {
    parallel_for(n, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            const float* g = G + i * n;
            float* d = D + i * n;
            __m256 ni = _mm256_set1_ps(sqn[i]);
            __m256 two = _mm256_set1_ps(2.0f);
            __m256 zero = _mm256_setzero_ps();
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 v = _mm256_add_ps(ni, _mm256_loadu_ps(sqn + j));
                v = _mm256_fnmadd_ps(two, _mm256_loadu_ps(g + j), v);
                _mm256_storeu_ps(d + j, _mm256_max_ps(v, zero));
            }
            for (; j < n; ++j) {
                float v = sqn[i] + sqn[j] - 2.0f * g[j];
                d[j] = v > 0.0f ? v : 0.0f;
            }
        }
    }, 64);
}

}  // namespace

const Table* avx2_table() {
    if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return nullptr;
    static const Table t{
        "avx2",      v_gemm,     v_gemm_at_b, v_gemm_a_bt,       v_leaky_relu,
        v_leaky_relu_grad, v_bias_add, v_col_sums_acc, v_axpy, v_adam_step,
        v_sqdist_from_gram,
    };
    return &t;
}

}  // namespace pointpose::kern

#endif  // POINTPOSE_X86

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointpose/kernels.hpp"

namespace pointpose::net {

// Dense row-major matrix. All network tensors are 2D: rows are points (or
// edges, or batch items), columns are channels.
template <typename T>
struct Mat {
    int64_t rows = 0, cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), T(0)) {}

    static Mat zeros(int64_t r, int64_t c) { return Mat(r, c); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
    T at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
    T* row(int64_t r) { return v.data() + r * cols; }
    const T* row(int64_t r) const { return v.data() + r * cols; }
    size_t size() const { return v.size(); }
    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Kernel bridge: float routes through the runtime-dispatched lanes, double
// through the scalar reference (the gradcheck shadow path).
template <typename T>
struct KOps;

template <>
struct KOps<float> {
    static void gemm(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
        kern::active().sgemm(a, b, c, m, n, k, acc);
    }
    static void gemm_at_b(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
        kern::active().sgemm_at_b(a, b, c, m, n, k, acc);
    }
    static void gemm_a_bt(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
        kern::active().sgemm_a_bt(a, b, c, m, n, k, acc);
    }
    static void leaky_relu(const float* x, float* y, size_t n, float s) {
        kern::active().leaky_relu(x, y, n, s);
    }
    static void leaky_relu_grad(const float* x, const float* dy, float* dx, size_t n, float s) {
        kern::active().leaky_relu_grad(x, dy, dx, n, s);
    }
    static void axpy(float a, const float* x, float* y, size_t n) { kern::active().axpy(a, x, y, n); }
    static void bias_add(float* x, const float* b, int rows, int cols) {
        kern::active().bias_add(x, b, rows, cols);
    }
    static void col_sums_acc(const float* x, float* s, int rows, int cols) {
        kern::active().col_sums_acc(x, s, rows, cols);
    }
    static void sqdist_from_gram(const float* g, const float* sqn, float* d, int n) {
        kern::active().sqdist_from_gram(g, sqn, d, n);
    }
};

template <>
struct KOps<double> {
    static void gemm(const double* a, const double* b, double* c, int m, int n, int k, bool acc) {
        kern::gemm_ref<double>(a, b, c, m, n, k, acc);
    }
    static void gemm_at_b(const double* a, const double* b, double* c, int m, int n, int k, bool acc) {
        kern::gemm_at_b_ref<double>(a, b, c, m, n, k, acc);
    }
    static void gemm_a_bt(const double* a, const double* b, double* c, int m, int n, int k, bool acc) {
        kern::gemm_a_bt_ref<double>(a, b, c, m, n, k, acc);
    }
    static void leaky_relu(const double* x, double* y, size_t n, double s) {
        for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : s * x[i];
    }
    static void leaky_relu_grad(const double* x, const double* dy, double* dx, size_t n, double s) {
        for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (x[i] > 0 ? 1.0 : s);
    }
    static void axpy(double a, const double* x, double* y, size_t n) {
        for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
    }
    static void bias_add(double* x, const double* b, int rows, int cols) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) x[static_cast<size_t>(r) * cols + c] += b[c];
    }
    static void col_sums_acc(const double* x, double* s, int rows, int cols) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) s[c] += x[static_cast<size_t>(r) * cols + c];
    }
    static void sqdist_from_gram(const double* g, const double* sqn, double* d, int n) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double v = sqn[i] + sqn[j] - 2.0 * g[static_cast<size_t>(i) * n + j];
                d[static_cast<size_t>(i) * n + j] = v > 0 ? v : 0;
            }
    }
};

// Eager reverse-mode tape. Values are computed when an op is recorded;
// backward closures capture stable Node pointers (deque storage).
template <typename T>
class Tape {
  public:
    struct Node {
        Mat<T> val;
        Mat<T> grad;  // allocated on first contribution
        bool needs_grad = false;
        std::function<void()> backward;
    };
    using Ref = Node*;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    static Mat<T>& grad_of(Ref n) {
        if (n->grad.v.empty()) n->grad = Mat<T>::zeros(n->val.rows, n->val.cols);
        return n->grad;
    }
    static bool has_grad(Ref n) { return !n->grad.v.empty(); }

    Ref input(Mat<T> m) { return add(std::move(m), false, nullptr); }
    Ref leaf(Mat<T> m) { return add(std::move(m), true, nullptr); }

    // y = x * w  (x: RxK, w: KxN)
    Ref matmul(Ref x, Ref w) {
        if (x->val.cols != w->val.rows) throw std::runtime_error("matmul: inner dim mismatch");
        Mat<T> out(x->val.rows, w->val.cols);
        KOps<T>::gemm(x->val.data(), w->val.data(), out.data(), static_cast<int>(x->val.rows),
                      static_cast<int>(w->val.cols), static_cast<int>(x->val.cols), false);
        Ref y = add(std::move(out), x->needs_grad || w->needs_grad, nullptr);
        y->backward = [x, w, y] {
            const Mat<T>& dy = y->grad;
            if (x->needs_grad)
                KOps<T>::gemm_a_bt(dy.data(), w->val.data(), grad_of(x).data(),
                                   static_cast<int>(dy.rows), static_cast<int>(x->val.cols),
                                   static_cast<int>(dy.cols), true);
            if (w->needs_grad)
                KOps<T>::gemm_at_b(x->val.data(), dy.data(), grad_of(w).data(),
                                   static_cast<int>(x->val.rows), static_cast<int>(dy.cols),
                                   static_cast<int>(x->val.cols), true);
        };
        return y;
    }

    // y = x + row-broadcast bias (bias: 1xC)
    Ref add_bias(Ref x, Ref b) {
        if (b->val.rows != 1 || b->val.cols != x->val.cols)
            throw std::runtime_error("add_bias: shape mismatch");
        Mat<T> out = x->val;
        KOps<T>::bias_add(out.data(), b->val.data(), static_cast<int>(out.rows),
                          static_cast<int>(out.cols));
        Ref y = add(std::move(out), x->needs_grad || b->needs_grad, nullptr);
        y->backward = [x, b, y] {
            const Mat<T>& dy = y->grad;
            if (x->needs_grad)
                KOps<T>::axpy(T(1), dy.data(), grad_of(x).data(), dy.size());
            if (b->needs_grad)
                KOps<T>::col_sums_acc(dy.data(), grad_of(b).data(), static_cast<int>(dy.rows),
                                      static_cast<int>(dy.cols));
        };
        return y;
    }

    Ref linear(Ref x, Ref w, Ref b) { return add_bias(matmul(x, w), b); }

    Ref leaky_relu(Ref x, T slope) {
        Mat<T> out(x->val.rows, x->val.cols);
        KOps<T>::leaky_relu(x->val.data(), out.data(), out.size(), slope);
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        y->backward = [x, y, slope] {
            if (x->needs_grad)
                KOps<T>::leaky_relu_grad(x->val.data(), y->grad.data(), grad_of(x).data(),
                                         y->grad.size(), slope);
        };
        return y;
    }

    Ref sub(Ref a, Ref b) {
        if (!a->val.same_shape(b->val)) throw std::runtime_error("sub: shape mismatch");
        Mat<T> out = a->val;
        for (size_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
        Ref y = add(std::move(out), a->needs_grad || b->needs_grad, nullptr);
        y->backward = [a, b, y] {
            if (a->needs_grad) KOps<T>::axpy(T(1), y->grad.data(), grad_of(a).data(), y->grad.size());
            if (b->needs_grad) KOps<T>::axpy(T(-1), y->grad.data(), grad_of(b).data(), y->grad.size());
        };
        return y;
    }

    Ref slice_cols(Ref x, int64_t begin, int64_t end) {
        if (begin < 0 || end > x->val.cols || begin >= end)
            throw std::runtime_error("slice_cols: bad range");
        Mat<T> out(x->val.rows, end - begin);
        for (int64_t r = 0; r < x->val.rows; ++r)
            std::copy(x->val.row(r) + begin, x->val.row(r) + end, out.row(r));
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        y->backward = [x, y, begin] {
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            const Mat<T>& dy = y->grad;
            for (int64_t r = 0; r < dy.rows; ++r)
                for (int64_t c = 0; c < dy.cols; ++c) dx.at(r, begin + c) += dy.at(r, c);
        };
        return y;
    }

    Ref concat_cols(const std::vector<Ref>& parts) {
        if (parts.empty()) throw std::runtime_error("concat_cols: empty");
        int64_t rows = parts[0]->val.rows, cols = 0;
        bool needs = false;
        for (Ref p : parts) {
            if (p->val.rows != rows) throw std::runtime_error("concat_cols: row mismatch");
            cols += p->val.cols;
            needs |= p->needs_grad;
        }
        Mat<T> out(rows, cols);
        int64_t off = 0;
        for (Ref p : parts) {
            for (int64_t r = 0; r < rows; ++r)
                std::copy(p->val.row(r), p->val.row(r) + p->val.cols, out.row(r) + off);
            off += p->val.cols;
        }
        Ref y = add(std::move(out), needs, nullptr);
        std::vector<Ref> ps = parts;
        y->backward = [ps, y] {
            const Mat<T>& dy = y->grad;
            int64_t off = 0;
            for (Ref p : ps) {
                if (p->needs_grad) {
                    Mat<T>& dp = grad_of(p);
                    for (int64_t r = 0; r < dy.rows; ++r)
                        for (int64_t c = 0; c < p->val.cols; ++c) dp.at(r, c) += dy.at(r, off + c);
                }
                off += p->val.cols;
            }
        };
        return y;
    }

    Ref gather_rows(Ref x, std::vector<int64_t> idx) {
        Mat<T> out(static_cast<int64_t>(idx.size()), x->val.cols);
        for (size_t r = 0; r < idx.size(); ++r)
            std::copy(x->val.row(idx[r]), x->val.row(idx[r]) + x->val.cols, out.row(static_cast<int64_t>(r)));
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        auto ids = std::make_shared<std::vector<int64_t>>(std::move(idx));
        y->backward = [x, y, ids] {
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            const Mat<T>& dy = y->grad;
            for (size_t r = 0; r < ids->size(); ++r) {
                T* dst = dx.row((*ids)[r]);
                const T* src = dy.row(static_cast<int64_t>(r));
                for (int64_t c = 0; c < dy.cols; ++c) dst[c] += src[c];
            }
        };
        return y;
    }

    // Max over each group of `group` consecutive rows.
    Ref group_max_rows(Ref x, int group) {
        if (x->val.rows % group != 0) throw std::runtime_error("group_max_rows: rows not divisible");
        int64_t out_rows = x->val.rows / group;
        Mat<T> out(out_rows, x->val.cols);
        auto arg = std::make_shared<std::vector<int32_t>>(out.size());
        for (int64_t g = 0; g < out_rows; ++g) {
            const T* first = x->val.row(g * group);
            T* o = out.row(g);
            int32_t* a = arg->data() + g * x->val.cols;
            std::copy(first, first + x->val.cols, o);
            std::fill(a, a + x->val.cols, 0);
            for (int j = 1; j < group; ++j) {
                const T* r = x->val.row(g * group + j);
                for (int64_t c = 0; c < x->val.cols; ++c)
                    if (r[c] > o[c]) {
                        o[c] = r[c];
                        a[c] = j;
                    }
            }
        }
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        y->backward = [x, y, arg, group] {
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            const Mat<T>& dy = y->grad;
            for (int64_t g = 0; g < dy.rows; ++g) {
                const int32_t* a = arg->data() + g * dy.cols;
                for (int64_t c = 0; c < dy.cols; ++c)
                    dx.at(g * group + a[c], c) += dy.at(g, c);
            }
        };
        return y;
    }

    // Max over row segments [begin,end); one output row per segment.
    Ref segment_max_rows(Ref x, const std::vector<std::pair<int64_t, int64_t>>& segs) {
        Mat<T> out(static_cast<int64_t>(segs.size()), x->val.cols);
        auto arg = std::make_shared<std::vector<int64_t>>(out.size());
        for (size_t s = 0; s < segs.size(); ++s) {
            auto [b, e] = segs[s];
            if (b >= e) throw std::runtime_error("segment_max_rows: empty segment");
            T* o = out.row(static_cast<int64_t>(s));
            int64_t* a = arg->data() + s * x->val.cols;
            std::copy(x->val.row(b), x->val.row(b) + x->val.cols, o);
            std::fill(a, a + x->val.cols, b);
            for (int64_t r = b + 1; r < e; ++r) {
                const T* row = x->val.row(r);
                for (int64_t c = 0; c < x->val.cols; ++c)
                    if (row[c] > o[c]) {
                        o[c] = row[c];
                        a[c] = r;
                    }
            }
        }
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        y->backward = [x, y, arg] {
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            const Mat<T>& dy = y->grad;
            for (int64_t s = 0; s < dy.rows; ++s) {
                const int64_t* a = arg->data() + s * dy.cols;
                for (int64_t c = 0; c < dy.cols; ++c) dx.at(a[c], c) += dy.at(s, c);
            }
        };
        return y;
    }

    // Repeat row s of x across segment s; inverse shape of segment_max_rows.
    Ref tile_rows(Ref x, const std::vector<std::pair<int64_t, int64_t>>& segs, int64_t total_rows) {
        if (x->val.rows != static_cast<int64_t>(segs.size()))
            throw std::runtime_error("tile_rows: segment count mismatch");
        Mat<T> out(total_rows, x->val.cols);
        for (size_t s = 0; s < segs.size(); ++s)
            for (int64_t r = segs[s].first; r < segs[s].second; ++r)
                std::copy(x->val.row(static_cast<int64_t>(s)),
                          x->val.row(static_cast<int64_t>(s)) + x->val.cols, out.row(r));
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        auto sg = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>(segs);
        y->backward = [x, y, sg] {
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            const Mat<T>& dy = y->grad;
            for (size_t s = 0; s < sg->size(); ++s)
                for (int64_t r = (*sg)[s].first; r < (*sg)[s].second; ++r)
                    for (int64_t c = 0; c < dy.cols; ++c)
                        dx.at(static_cast<int64_t>(s), c) += dy.at(r, c);
        };
        return y;
    }

    // Batch norm over rows, per column. Train mode uses batch statistics and
    // updates the running buffers in place; frozen mode normalizes with the
    // running statistics (variance stored biased).
    Ref batchnorm(Ref x, Ref gamma, Ref beta, Mat<T>& run_mean, Mat<T>& run_var, bool train_mode,
                  T momentum, T eps) {
        int64_t R = x->val.rows, C = x->val.cols;
        if (gamma->val.cols != C || beta->val.cols != C || run_mean.cols != C || run_var.cols != C)
            throw std::runtime_error("batchnorm: channel mismatch");
        auto mean = std::make_shared<std::vector<T>>(C, T(0));
        auto inv_std = std::make_shared<std::vector<T>>(C, T(0));
        if (train_mode) {
            std::vector<double> mu(C, 0.0), var(C, 0.0);
            for (int64_t r = 0; r < R; ++r) {
                const T* row = x->val.row(r);
                for (int64_t c = 0; c < C; ++c) mu[c] += row[c];
            }
            for (int64_t c = 0; c < C; ++c) mu[c] /= static_cast<double>(R);
            for (int64_t r = 0; r < R; ++r) {
                const T* row = x->val.row(r);
                for (int64_t c = 0; c < C; ++c) {
                    double d = row[c] - mu[c];
                    var[c] += d * d;
                }
            }
            for (int64_t c = 0; c < C; ++c) {
                var[c] /= static_cast<double>(R);
                (*mean)[c] = static_cast<T>(mu[c]);
                (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(var[c] + static_cast<double>(eps)));
                run_mean.v[c] = momentum * run_mean.v[c] + (T(1) - momentum) * static_cast<T>(mu[c]);
                run_var.v[c] = momentum * run_var.v[c] + (T(1) - momentum) * static_cast<T>(var[c]);
            }
        } else {
            for (int64_t c = 0; c < C; ++c) {
                (*mean)[c] = run_mean.v[c];
                (*inv_std)[c] = T(1) / std::sqrt(run_var.v[c] + eps);
            }
        }
        auto xhat = std::make_shared<Mat<T>>(R, C);
        Mat<T> out(R, C);
        for (int64_t r = 0; r < R; ++r) {
            const T* row = x->val.row(r);
            T* xh = xhat->row(r);
            T* o = out.row(r);
            for (int64_t c = 0; c < C; ++c) {
                xh[c] = (row[c] - (*mean)[c]) * (*inv_std)[c];
                o[c] = gamma->val.v[c] * xh[c] + beta->val.v[c];
            }
        }
        Ref y = add(std::move(out), x->needs_grad || gamma->needs_grad || beta->needs_grad, nullptr);
        y->backward = [x, gamma, beta, y, xhat, inv_std, train_mode] {
            const Mat<T>& dy = y->grad;
            int64_t R = dy.rows, C = dy.cols;
            if (gamma->needs_grad) {
                Mat<T>& dg = grad_of(gamma);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c) dg.v[c] += dy.at(r, c) * xhat->at(r, c);
            }
            if (beta->needs_grad) {
                Mat<T>& db = grad_of(beta);
                KOps<T>::col_sums_acc(dy.data(), db.data(), static_cast<int>(R), static_cast<int>(C));
            }
            if (!x->needs_grad) return;
            Mat<T>& dx = grad_of(x);
            if (!train_mode) {
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < C; ++c)
                        dx.at(r, c) += dy.at(r, c) * gamma->val.v[c] * (*inv_std)[c];
                return;
            }
            // Full batch-statistics backward:
            // dx = g*istd * (dxh - mean(dxh) - xhat * mean(dxh*xhat))
            std::vector<double> s1(C, 0.0), s2(C, 0.0);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    double dxh = static_cast<double>(dy.at(r, c)) * gamma->val.v[c];
                    s1[c] += dxh;
                    s2[c] += dxh * xhat->at(r, c);
                }
            for (int64_t c = 0; c < C; ++c) {
                s1[c] /= static_cast<double>(R);
                s2[c] /= static_cast<double>(R);
            }
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) {
                    double dxh = static_cast<double>(dy.at(r, c)) * gamma->val.v[c];
                    dx.at(r, c) += static_cast<T>((*inv_std)[c] *
                                                  (dxh - s1[c] - xhat->at(r, c) * s2[c]));
                }
        };
        return y;
    }

    // Per-sample 3x3 transform of 3-column rows: out[r,:] = x[r,:] * A_b.
    // `tn` holds one row-major 3x3 per batch item (Bx9).
    Ref apply_transform(Ref x, Ref tn, const std::vector<std::pair<int64_t, int64_t>>& segs) {
        if (x->val.cols != 3 || tn->val.cols != 9 ||
            tn->val.rows != static_cast<int64_t>(segs.size()))
            throw std::runtime_error("apply_transform: shape mismatch");
        Mat<T> out(x->val.rows, 3);
        for (size_t s = 0; s < segs.size(); ++s) {
            const T* A = tn->val.row(static_cast<int64_t>(s));
            for (int64_t r = segs[s].first; r < segs[s].second; ++r) {
                const T* xr = x->val.row(r);
                T* o = out.row(r);
                for (int j = 0; j < 3; ++j)
                    o[j] = xr[0] * A[0 * 3 + j] + xr[1] * A[1 * 3 + j] + xr[2] * A[2 * 3 + j];
            }
        }
        Ref y = add(std::move(out), x->needs_grad || tn->needs_grad, nullptr);
        auto sg = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>(segs);
        y->backward = [x, tn, y, sg] {
            const Mat<T>& dy = y->grad;
            for (size_t s = 0; s < sg->size(); ++s) {
                const T* A = tn->val.row(static_cast<int64_t>(s));
                for (int64_t r = (*sg)[s].first; r < (*sg)[s].second; ++r) {
                    const T* dyr = dy.row(r);
                    const T* xr = x->val.row(r);
                    if (x->needs_grad) {
                        T* dx = grad_of(x).row(r);
                        for (int i = 0; i < 3; ++i)
                            dx[i] += dyr[0] * A[i * 3 + 0] + dyr[1] * A[i * 3 + 1] + dyr[2] * A[i * 3 + 2];
                    }
                    if (tn->needs_grad) {
                        T* dA = grad_of(tn).row(static_cast<int64_t>(s));
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j) dA[i * 3 + j] += xr[i] * dyr[j];
                    }
                }
            }
        };
        return y;
    }

    // Softmax cross entropy per row with per-row weights; rows whose label
    // is negative are skipped. Returns a 1x1 scalar sum(w_i * ce_i).
    Ref softmax_ce(Ref logits, std::vector<int32_t> labels, std::vector<T> weights) {
        int64_t R = logits->val.rows, C = logits->val.cols;
        if (static_cast<int64_t>(labels.size()) != R || static_cast<int64_t>(weights.size()) != R)
            throw std::runtime_error("softmax_ce: label/weight size mismatch");
        auto probs = std::make_shared<Mat<T>>(R, C);
        double total = 0.0;
        for (int64_t r = 0; r < R; ++r) {
            const T* l = logits->val.row(r);
            T* p = probs->row(r);
            T mx = l[0];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, l[c]);
            double sum = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                p[c] = std::exp(l[c] - mx);
                sum += p[c];
            }
            T inv = static_cast<T>(1.0 / sum);
            for (int64_t c = 0; c < C; ++c) p[c] *= inv;
            if (labels[r] >= 0 && weights[r] != T(0)) {
                double pr = std::max(static_cast<double>(p[labels[r]]), 1e-30);
                total += -std::log(pr) * static_cast<double>(weights[r]);
            }
        }
        Mat<T> out(1, 1);
        out.v[0] = static_cast<T>(total);
        Ref y = add(std::move(out), logits->needs_grad, nullptr);
        auto lb = std::make_shared<std::vector<int32_t>>(std::move(labels));
        auto wt = std::make_shared<std::vector<T>>(std::move(weights));
        y->backward = [logits, y, probs, lb, wt] {
            if (!logits->needs_grad) return;
            T g = y->grad.v[0];
            Mat<T>& dl = grad_of(logits);
            int64_t R = dl.rows, C = dl.cols;
            for (int64_t r = 0; r < R; ++r) {
                if ((*lb)[r] < 0 || (*wt)[r] == T(0)) continue;
                T gw = g * (*wt)[r];
                const T* p = probs->row(r);
                T* d = dl.row(r);
                for (int64_t c = 0; c < C; ++c) d[c] += gw * p[c];
                d[(*lb)[r]] -= gw;
            }
        };
        return y;
    }

    // Mean over batch of ||I - A*A^T||_F^2 for row-major 3x3 rows.
    Ref orthogonality_penalty(Ref tn) {
        if (tn->val.cols != 9) throw std::runtime_error("orthogonality_penalty: expected Bx9");
        int64_t B = tn->val.rows;
        auto resid = std::make_shared<Mat<T>>(B, 9);  // I - A A^T per row
        double total = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const T* A = tn->val.row(b);
            T* E = resid->row(b);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double aat = 0.0;
                    for (int k = 0; k < 3; ++k)
                        aat += static_cast<double>(A[i * 3 + k]) * A[j * 3 + k];
                    double e = (i == j ? 1.0 : 0.0) - aat;
                    E[i * 3 + j] = static_cast<T>(e);
                    total += e * e;
                }
        }
        Mat<T> out(1, 1);
        out.v[0] = static_cast<T>(total / static_cast<double>(B));
        Ref y = add(std::move(out), tn->needs_grad, nullptr);
        y->backward = [tn, y, resid, B] {
            if (!tn->needs_grad) return;
            T g = y->grad.v[0] / static_cast<T>(B);
            Mat<T>& dt = grad_of(tn);
            for (int64_t b = 0; b < B; ++b) {
                const T* A = tn->val.row(b);
                const T* E = resid->row(b);
                T* dA = dt.row(b);
                // d/dA ||E||^2 with E = I - A A^T: dA = -2 (E + E^T) A = -4 E A
                for (int i = 0; i < 3; ++i)
                    for (int k = 0; k < 3; ++k) {
                        double acc = 0.0;
                        for (int j = 0; j < 3; ++j)
                            acc += static_cast<double>(E[i * 3 + j]) * A[j * 3 + k];
                        dA[i * 3 + k] += g * static_cast<T>(-4.0 * acc);
                    }
            }
        };
        return y;
    }

    // total = sum_i coeff_i * scalar_i
    Ref combine_scalars(const std::vector<Ref>& terms, const std::vector<T>& coeffs) {
        if (terms.size() != coeffs.size() || terms.empty())
            throw std::runtime_error("combine_scalars: size mismatch");
        double total = 0.0;
        bool needs = false;
        for (size_t i = 0; i < terms.size(); ++i) {
            if (terms[i]->val.size() != 1) throw std::runtime_error("combine_scalars: non-scalar term");
            total += static_cast<double>(coeffs[i]) * terms[i]->val.v[0];
            needs |= terms[i]->needs_grad;
        }
        Mat<T> out(1, 1);
        out.v[0] = static_cast<T>(total);
        Ref y = add(std::move(out), needs, nullptr);
        auto ts = std::make_shared<std::vector<Ref>>(terms);
        auto cs = std::make_shared<std::vector<T>>(coeffs);
        y->backward = [y, ts, cs] {
            for (size_t i = 0; i < ts->size(); ++i)
                if ((*ts)[i]->needs_grad) grad_of((*ts)[i]).v[0] += y->grad.v[0] * (*cs)[i];
        };
        return y;
    }

    Ref scale(Ref x, T factor) {
        Mat<T> out = x->val;
        for (auto& v : out.v) v *= factor;
        Ref y = add(std::move(out), x->needs_grad, nullptr);
        y->backward = [x, y, factor] {
            if (x->needs_grad) KOps<T>::axpy(factor, y->grad.data(), grad_of(x).data(), y->grad.size());
        };
        return y;
    }

    void backward(Ref loss) {
        if (loss->val.size() != 1) throw std::runtime_error("backward: loss must be scalar");
        grad_of(loss).v[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (n.backward && has_grad(&n)) n.backward();
        }
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    Ref add(Mat<T> val, bool needs_grad, std::function<void()> bwd) {
        nodes_.push_back(Node{std::move(val), Mat<T>{}, needs_grad, std::move(bwd)});
        return &nodes_.back();
    }

    std::deque<Node> nodes_;
};

}  // namespace pointpose::net

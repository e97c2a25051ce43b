#include "gradsam/kernels.hpp"

#include <cmath>
#include <limits>

namespace gradsam::kernels {

namespace {

// Flat element count below which the OpenMP versions stay serial.
constexpr size_t kParGrain = 4096;

template <typename T>
inline T gauss_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <typename T>
inline T gauss_pdf(T x) {
    return std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
}

template <typename T>
inline T gelu_val(T x) {
    return x * gauss_cdf(x);
}

template <typename T>
inline T gelu_grad(T x) {
    return gauss_cdf(x) + x * gauss_pdf(x);
}

template <typename T>
inline void softmax_one_row(const T* xr, T* yr, size_t cols, const uint8_t* key_mask) {
    T mx = -std::numeric_limits<T>::infinity();
    for (size_t j = 0; j < cols; ++j)
        if ((!key_mask || key_mask[j]) && xr[j] > mx) mx = xr[j];
    T denom = T(0);
    for (size_t j = 0; j < cols; ++j) {
        if (!key_mask || key_mask[j]) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        } else {
            yr[j] = T(0);
        }
    }
    for (size_t j = 0; j < cols; ++j) yr[j] /= denom;
}

template <typename T>
inline void softmax_bwd_one_row(const T* yr, const T* dyr, T* dxr, size_t cols,
                                const uint8_t* key_mask) {
    T dot = T(0);
    for (size_t j = 0; j < cols; ++j)
        if (!key_mask || key_mask[j]) dot += dyr[j] * yr[j];
    for (size_t j = 0; j < cols; ++j)
        if (!key_mask || key_mask[j]) dxr[j] += yr[j] * (dyr[j] - dot);
}

template <typename T>
inline void ln_row_stats(const T* xr, size_t cols, T& mean, T& inv_std, T eps) {
    T m = T(0);
    for (size_t j = 0; j < cols; ++j) m += xr[j];
    m /= T(cols);
    T v = T(0);
    for (size_t j = 0; j < cols; ++j) {
        T d = xr[j] - m;
        v += d * d;
    }
    v /= T(cols);
    mean = m;
    inv_std = T(1) / std::sqrt(v + eps);
}

// dX for one layer-norm row. With xh = (x - mu) * istd and g = gamma * dy:
// dx = istd * (g - mean(g) - xh * mean(g * xh)).
template <typename T>
inline void ln_bwd_dx_one_row(const T* xr, const T* gamma, const T* dyr, T* dxr, size_t cols,
                              T eps) {
    T mean, istd;
    ln_row_stats(xr, cols, mean, istd, eps);
    T g_mean = T(0), gx_mean = T(0);
    for (size_t j = 0; j < cols; ++j) {
        T xh = (xr[j] - mean) * istd;
        T g = gamma[j] * dyr[j];
        g_mean += g;
        gx_mean += g * xh;
    }
    g_mean /= T(cols);
    gx_mean /= T(cols);
    for (size_t j = 0; j < cols; ++j) {
        T xh = (xr[j] - mean) * istd;
        T g = gamma[j] * dyr[j];
        dxr[j] += istd * (g - g_mean - xh * gx_mean);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
void matmul(const T* a, const T* b, T* c, size_t p, size_t q, size_t r,
            bool trans_a, bool trans_b, bool accumulate) {
    for (size_t i = 0; i < p; ++i) {
        for (size_t j = 0; j < r; ++j) {
            T acc = T(0);
            for (size_t k = 0; k < q; ++k) {
                T av = trans_a ? a[k * p + i] : a[i * q + k];
                T bv = trans_b ? b[j * q + k] : b[k * r + j];
                acc += av * bv;
            }
            if (accumulate)
                c[i * r + j] += acc;
            else
                c[i * r + j] = acc;
        }
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, size_t rows, size_t cols, const uint8_t* key_mask) {
    for (size_t i = 0; i < rows; ++i)
        softmax_one_row(x + i * cols, y + i * cols, cols, key_mask);
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, size_t rows, size_t cols,
                           const uint8_t* key_mask) {
    for (size_t i = 0; i < rows; ++i)
        softmax_bwd_one_row(y + i * cols, dy + i * cols, dx + i * cols, cols, key_mask);
}

template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, size_t rows, size_t cols,
                T eps) {
    for (size_t i = 0; i < rows; ++i) {
        const T* xr = x + i * cols;
        T* yr = y + i * cols;
        T mean, istd;
        ln_row_stats(xr, cols, mean, istd, eps);
        for (size_t j = 0; j < cols; ++j)
            yr[j] = gamma[j] * ((xr[j] - mean) * istd) + beta[j];
    }
}

template <typename T>
void layer_norm_backward_dx(const T* x, const T* gamma, const T* dy, T* dx, size_t rows,
                            size_t cols, T eps) {
    for (size_t i = 0; i < rows; ++i)
        ln_bwd_dx_one_row(x + i * cols, gamma, dy + i * cols, dx + i * cols, cols, eps);
}

template <typename T>
void layer_norm_backward_dgb(const T* x, const T* dy, T* dgamma, T* dbeta, size_t rows,
                             size_t cols, T eps) {
    for (size_t j = 0; j < cols; ++j) {
        T dg = T(0), db = T(0);
        for (size_t i = 0; i < rows; ++i) {
            const T* xr = x + i * cols;
            T mean, istd;
            ln_row_stats(xr, cols, mean, istd, eps);
            T xh = (xr[j] - mean) * istd;
            dg += dy[i * cols + j] * xh;
            db += dy[i * cols + j];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

template <typename T>
void relu(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename T>
void gelu(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = gelu_val(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad(x[i]);
}

template <typename T>
void tanh_op(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void tanh_backward(const T* y, const T* dy, T* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
}

template <typename T>
void add(const T* a, const T* b, T* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

template <typename T>
void hadamard(const T* a, const T* b, T* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

template <typename T>
void hadamard_acc(const T* a, const T* b, T* c, size_t n) {
    for (size_t i = 0; i < n; ++i) c[i] += a[i] * b[i];
}

template <typename T>
void scale(const T* x, T c, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = c * x[i];
}

template <typename T>
void axpy(T c, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

template <typename T>
void add_bias_row(const T* x, const T* bias, T* y, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) y[i * cols + j] = x[i * cols + j] + bias[j];
}

template <typename T>
void transpose(const T* x, T* y, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) y[j * rows + i] = x[i * cols + j];
}

template <typename T>
void row_sum(const T* x, T* out, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        T acc = T(0);
        for (size_t j = 0; j < cols; ++j) acc += x[i * cols + j];
        out[i] = acc;
    }
}

template <typename T>
void col_sum_acc(const T* x, T* out, size_t rows, size_t cols) {
    for (size_t j = 0; j < cols; ++j) {
        T acc = T(0);
        for (size_t i = 0; i < rows; ++i) acc += x[i * cols + j];
        out[j] += acc;
    }
}

template <typename T>
void gather_rows(const T* table, const int32_t* ids, T* out, size_t n, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const T* src = table + static_cast<size_t>(ids[i]) * cols;
        T* dst = out + i * cols;
        for (size_t j = 0; j < cols; ++j) dst[j] = src[j];
    }
}

template <typename T>
void scatter_add_rows(const T* grad, const int32_t* ids, T* table_grad, size_t n, size_t cols) {
    for (size_t j = 0; j < cols; ++j)
        for (size_t i = 0; i < n; ++i)
            table_grad[static_cast<size_t>(ids[i]) * cols + j] += grad[i * cols + j];
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions. Work is split across independent output elements only;
// every accumulation runs in the same order as the serial reference.
// ---------------------------------------------------------------------------

template <typename T>
void matmul(const T* a, const T* b, T* c, size_t p, size_t q, size_t r,
            bool trans_a, bool trans_b, bool accumulate) {
    const int64_t pi = static_cast<int64_t>(p);
#pragma omp parallel for if (p * q * r > kParGrain)
    for (int64_t i = 0; i < pi; ++i) {
        for (size_t j = 0; j < r; ++j) {
            T acc = T(0);
            for (size_t k = 0; k < q; ++k) {
                T av = trans_a ? a[k * p + i] : a[i * q + k];
                T bv = trans_b ? b[j * q + k] : b[k * r + j];
                acc += av * bv;
            }
            if (accumulate)
                c[i * r + j] += acc;
            else
                c[i * r + j] = acc;
        }
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, size_t rows, size_t cols, const uint8_t* key_mask) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i)
        softmax_one_row(x + i * cols, y + i * cols, cols, key_mask);
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, size_t rows, size_t cols,
                           const uint8_t* key_mask) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i)
        softmax_bwd_one_row(y + i * cols, dy + i * cols, dx + i * cols, cols, key_mask);
}

template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, size_t rows, size_t cols,
                T eps) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i) {
        const T* xr = x + i * cols;
        T* yr = y + i * cols;
        T mean, istd;
        ln_row_stats(xr, cols, mean, istd, eps);
        for (size_t j = 0; j < cols; ++j)
            yr[j] = gamma[j] * ((xr[j] - mean) * istd) + beta[j];
    }
}

template <typename T>
void layer_norm_backward_dx(const T* x, const T* gamma, const T* dy, T* dx, size_t rows,
                            size_t cols, T eps) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i)
        ln_bwd_dx_one_row(x + i * cols, gamma, dy + i * cols, dx + i * cols, cols, eps);
}

template <typename T>
void layer_norm_backward_dgb(const T* x, const T* dy, T* dgamma, T* dbeta, size_t rows,
                             size_t cols, T eps) {
    const int64_t n = static_cast<int64_t>(cols);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t j = 0; j < n; ++j) {
        T dg = T(0), db = T(0);
        for (size_t i = 0; i < rows; ++i) {
            const T* xr = x + i * cols;
            T mean, istd;
            ln_row_stats(xr, cols, mean, istd, eps);
            T xh = (xr[j] - mean) * istd;
            dg += dy[i * cols + j] * xh;
            db += dy[i * cols + j];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

template <typename T>
void relu(const T* x, T* y, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename T>
void gelu(const T* x, T* y, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) y[i] = gelu_val(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * gelu_grad(x[i]);
}

template <typename T>
void tanh_op(const T* x, T* y, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void tanh_backward(const T* y, const T* dy, T* dx, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
}

template <typename T>
void add(const T* a, const T* b, T* c, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) c[i] = a[i] + b[i];
}

template <typename T>
void hadamard(const T* a, const T* b, T* c, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) c[i] = a[i] * b[i];
}

template <typename T>
void hadamard_acc(const T* a, const T* b, T* c, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) c[i] += a[i] * b[i];
}

template <typename T>
void scale(const T* x, T c, T* y, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) y[i] = c * x[i];
}

template <typename T>
void axpy(T c, const T* x, T* y, size_t n) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n > kParGrain)
    for (int64_t i = 0; i < m; ++i) y[i] += c * x[i];
}

template <typename T>
void add_bias_row(const T* x, const T* bias, T* y, size_t rows, size_t cols) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i)
        for (size_t j = 0; j < cols; ++j) y[i * cols + j] = x[i * cols + j] + bias[j];
}

template <typename T>
void transpose(const T* x, T* y, size_t rows, size_t cols) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i)
        for (size_t j = 0; j < cols; ++j) y[j * rows + i] = x[i * cols + j];
}

template <typename T>
void row_sum(const T* x, T* out, size_t rows, size_t cols) {
    const int64_t n = static_cast<int64_t>(rows);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t i = 0; i < n; ++i) {
        T acc = T(0);
        for (size_t j = 0; j < cols; ++j) acc += x[i * cols + j];
        out[i] = acc;
    }
}

template <typename T>
void col_sum_acc(const T* x, T* out, size_t rows, size_t cols) {
    const int64_t n = static_cast<int64_t>(cols);
#pragma omp parallel for if (rows * cols > kParGrain)
    for (int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (size_t i = 0; i < rows; ++i) acc += x[i * cols + j];
        out[j] += acc;
    }
}

template <typename T>
void gather_rows(const T* table, const int32_t* ids, T* out, size_t n, size_t cols) {
    const int64_t m = static_cast<int64_t>(n);
#pragma omp parallel for if (n * cols > kParGrain)
    for (int64_t i = 0; i < m; ++i) {
        const T* src = table + static_cast<size_t>(ids[i]) * cols;
        T* dst = out + i * cols;
        for (size_t j = 0; j < cols; ++j) dst[j] = src[j];
    }
}

template <typename T>
void scatter_add_rows(const T* grad, const int32_t* ids, T* table_grad, size_t n, size_t cols) {
    const int64_t m = static_cast<int64_t>(cols);
#pragma omp parallel for if (n * cols > kParGrain)
    for (int64_t j = 0; j < m; ++j)
        for (size_t i = 0; i < n; ++i)
            table_grad[static_cast<size_t>(ids[i]) * cols + j] += grad[i * cols + j];
}

// ---------------------------------------------------------------------------
// Explicit instantiations for the two supported precisions.
// ---------------------------------------------------------------------------

#define GRADSAM_INSTANTIATE_KERNELS(T)                                                          \
    template void matmul<T>(const T*, const T*, T*, size_t, size_t, size_t, bool, bool, bool);  \
    template void softmax_rows<T>(const T*, T*, size_t, size_t, const uint8_t*);                \
    template void softmax_rows_backward<T>(const T*, const T*, T*, size_t, size_t,              \
                                           const uint8_t*);                                     \
    template void layer_norm<T>(const T*, const T*, const T*, T*, size_t, size_t, T);           \
    template void layer_norm_backward_dx<T>(const T*, const T*, const T*, T*, size_t, size_t,   \
                                            T);                                                 \
    template void layer_norm_backward_dgb<T>(const T*, const T*, T*, T*, size_t, size_t, T);    \
    template void relu<T>(const T*, T*, size_t);                                                \
    template void relu_backward<T>(const T*, const T*, T*, size_t);                             \
    template void gelu<T>(const T*, T*, size_t);                                                \
    template void gelu_backward<T>(const T*, const T*, T*, size_t);                             \
    template void tanh_op<T>(const T*, T*, size_t);                                             \
    template void tanh_backward<T>(const T*, const T*, T*, size_t);                             \
    template void add<T>(const T*, const T*, T*, size_t);                                       \
    template void hadamard<T>(const T*, const T*, T*, size_t);                                  \
    template void hadamard_acc<T>(const T*, const T*, T*, size_t);                              \
    template void scale<T>(const T*, T, T*, size_t);                                            \
    template void axpy<T>(T, const T*, T*, size_t);                                             \
    template void add_bias_row<T>(const T*, const T*, T*, size_t, size_t);                      \
    template void transpose<T>(const T*, T*, size_t, size_t);                                   \
    template void row_sum<T>(const T*, T*, size_t, size_t);                                     \
    template void col_sum_acc<T>(const T*, T*, size_t, size_t);                                 \
    template void gather_rows<T>(const T*, const int32_t*, T*, size_t, size_t);                 \
    template void scatter_add_rows<T>(const T*, const int32_t*, T*, size_t, size_t);

GRADSAM_INSTANTIATE_KERNELS(float)
GRADSAM_INSTANTIATE_KERNELS(double)

namespace serial {

GRADSAM_INSTANTIATE_KERNELS(float)
GRADSAM_INSTANTIATE_KERNELS(double)

}  // namespace serial

#undef GRADSAM_INSTANTIATE_KERNELS

}  // namespace gradsam::kernels

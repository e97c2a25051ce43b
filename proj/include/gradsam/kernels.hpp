#pragma once

#include <cstddef>
#include <cstdint>

namespace gradsam::kernels {

// Dense kernels behind the tape ops. Each kernel exists twice: the serial
// reference below in kernels::serial, and an OpenMP version at this scope
// that parallelizes only across independent output elements (rows for
// matmul/softmax/layer_norm, columns for cross-row reductions). Both
// versions perform the per-element accumulations in the same order, so
// their results are bit-identical; tests/test_kernels.cpp enforces that,
// and tools/bench_kernels.cpp compares their throughput.

// C[p x r] = op(A) . op(B), op = transpose when the flag is set.
// A and B are contiguous row-major in their stored orientation.
// accumulate=true adds into C instead of overwriting.
template <typename T>
void matmul(const T* a, const T* b, T* c, size_t p, size_t q, size_t r,
            bool trans_a, bool trans_b, bool accumulate);

// Row softmax over masked columns. key_mask may be null (all columns on);
// masked columns get probability exactly 0. Rows are reduced serially.
template <typename T>
void softmax_rows(const T* x, T* y, size_t rows, size_t cols, const uint8_t* key_mask);

// dX for row softmax given output Y and upstream dY; adds into dx.
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, size_t rows, size_t cols,
                           const uint8_t* key_mask);

// Row-wise layer norm with affine: y = gamma * (x - mean) / sqrt(var + eps) + beta.
// Variance is the biased 1/cols estimate.
template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, size_t rows, size_t cols,
                T eps);

// dX half of layer norm backward; parallel across rows. Adds into dx.
template <typename T>
void layer_norm_backward_dx(const T* x, const T* gamma, const T* dy, T* dx, size_t rows,
                            size_t cols, T eps);

// dGamma/dBeta half; reduces over rows, parallel across columns. Adds into outputs.
template <typename T>
void layer_norm_backward_dgb(const T* x, const T* dy, T* dgamma, T* dbeta, size_t rows,
                             size_t cols, T eps);

template <typename T>
void relu(const T* x, T* y, size_t n);
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, size_t n);  // adds into dx

// Exact GELU, x * Phi(x) with the Gaussian CDF.
template <typename T>
void gelu(const T* x, T* y, size_t n);
template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, size_t n);  // adds into dx

template <typename T>
void tanh_op(const T* x, T* y, size_t n);
template <typename T>
void tanh_backward(const T* y, const T* dy, T* dx, size_t n);  // adds into dx

template <typename T>
void add(const T* a, const T* b, T* c, size_t n);
template <typename T>
void hadamard(const T* a, const T* b, T* c, size_t n);
template <typename T>
void hadamard_acc(const T* a, const T* b, T* c, size_t n);  // c += a * b
template <typename T>
void scale(const T* x, T c, T* y, size_t n);
template <typename T>
void axpy(T c, const T* x, T* y, size_t n);  // y += c * x

// y[i, j] = x[i, j] + bias[j]
template <typename T>
void add_bias_row(const T* x, const T* bias, T* y, size_t rows, size_t cols);

template <typename T>
void transpose(const T* x, T* y, size_t rows, size_t cols);

// out[i] = sum_j x[i, j]; parallel across rows.
template <typename T>
void row_sum(const T* x, T* out, size_t rows, size_t cols);

// out[j] += sum_i x[i, j]; parallel across columns.
template <typename T>
void col_sum_acc(const T* x, T* out, size_t rows, size_t cols);

// out row i = table row ids[i].
template <typename T>
void gather_rows(const T* table, const int32_t* ids, T* out, size_t n, size_t cols);

// table_grad row ids[i] += grad row i. Parallel across columns so duplicate
// ids accumulate in row order deterministically.
template <typename T>
void scatter_add_rows(const T* grad, const int32_t* ids, T* table_grad, size_t n, size_t cols);

namespace serial {

template <typename T>
void matmul(const T* a, const T* b, T* c, size_t p, size_t q, size_t r,
            bool trans_a, bool trans_b, bool accumulate);
template <typename T>
void softmax_rows(const T* x, T* y, size_t rows, size_t cols, const uint8_t* key_mask);
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, size_t rows, size_t cols,
                           const uint8_t* key_mask);
template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, size_t rows, size_t cols,
                T eps);
template <typename T>
void layer_norm_backward_dx(const T* x, const T* gamma, const T* dy, T* dx, size_t rows,
                            size_t cols, T eps);
template <typename T>
void layer_norm_backward_dgb(const T* x, const T* dy, T* dgamma, T* dbeta, size_t rows,
                             size_t cols, T eps);
template <typename T>
void relu(const T* x, T* y, size_t n);
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, size_t n);
template <typename T>
void gelu(const T* x, T* y, size_t n);
template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, size_t n);
template <typename T>
void tanh_op(const T* x, T* y, size_t n);
template <typename T>
void tanh_backward(const T* y, const T* dy, T* dx, size_t n);
template <typename T>
void add(const T* a, const T* b, T* c, size_t n);
template <typename T>
void hadamard(const T* a, const T* b, T* c, size_t n);
template <typename T>
void hadamard_acc(const T* a, const T* b, T* c, size_t n);
template <typename T>
void scale(const T* x, T c, T* y, size_t n);
template <typename T>
void axpy(T c, const T* x, T* y, size_t n);
template <typename T>
void add_bias_row(const T* x, const T* bias, T* y, size_t rows, size_t cols);
template <typename T>
void transpose(const T* x, T* y, size_t rows, size_t cols);
template <typename T>
void row_sum(const T* x, T* out, size_t rows, size_t cols);
template <typename T>
void col_sum_acc(const T* x, T* out, size_t rows, size_t cols);
template <typename T>
void gather_rows(const T* table, const int32_t* ids, T* out, size_t n, size_t cols);
template <typename T>
void scatter_add_rows(const T* grad, const int32_t* ids, T* table_grad, size_t n, size_t cols);

}  // namespace serial

}  // namespace gradsam::kernels

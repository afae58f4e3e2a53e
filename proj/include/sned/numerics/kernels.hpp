#pragma once

#include <cstdint>

namespace sned::kernels {

struct Conv2dDims {
  std::int64_t batch, in_channels, out_channels, height, width, kernel, stride, pad;
  std::int64_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::int64_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

struct LinearDims {
  std::int64_t rows, in_features, out_features;
};

struct GroupNormDims {
  std::int64_t batch, channels, spatial, groups;
};

struct AttentionDims {
  std::int64_t batch, queries, keys, dim, heads;
  std::int64_t head_dim() const { return dim / heads; }
};

// Backward kernels accumulate (+=) into every non-null gradient buffer.
// Forward kernels overwrite their outputs.

namespace reference {

template <typename T>
void conv2d_forward(const Conv2dDims& d, const T* x, const T* w, const T* b, T* y);
template <typename T>
void conv2d_backward(const Conv2dDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db);

template <typename T>
void linear_forward(const LinearDims& d, const T* x, const T* w, const T* b, T* y);
template <typename T>
void linear_backward(const LinearDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db);

template <typename T>
void group_norm_forward(const GroupNormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean,
                        T* rstd);
template <typename T>
void group_norm_backward(const GroupNormDims& d, const T* x, const T* gamma, const T* mean, const T* rstd,
                         const T* dy, T* dx, T* dgamma, T* dbeta);

/// probs receives the softmax weights, layout [batch, heads, queries, keys].
template <typename T>
void attention_forward(const AttentionDims& d, const T* q, const T* k, const T* v, T* out, T* probs);
template <typename T>
void attention_backward(const AttentionDims& d, const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        T* dq, T* dk, T* dv);

template <typename T>
void silu_forward(std::int64_t n, const T* x, T* y);
template <typename T>
void silu_backward(std::int64_t n, const T* x, const T* dy, T* dx);

}  // namespace reference

namespace parallel {

template <typename T>
void conv2d_forward(const Conv2dDims& d, const T* x, const T* w, const T* b, T* y);
template <typename T>
void conv2d_backward(const Conv2dDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db);

template <typename T>
void linear_forward(const LinearDims& d, const T* x, const T* w, const T* b, T* y);
template <typename T>
void linear_backward(const LinearDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db);

template <typename T>
void group_norm_forward(const GroupNormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean,
                        T* rstd);
template <typename T>
void group_norm_backward(const GroupNormDims& d, const T* x, const T* gamma, const T* mean, const T* rstd,
                         const T* dy, T* dx, T* dgamma, T* dbeta);

template <typename T>
void attention_forward(const AttentionDims& d, const T* q, const T* k, const T* v, T* out, T* probs);
template <typename T>
void attention_backward(const AttentionDims& d, const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        T* dq, T* dk, T* dv);

template <typename T>
void silu_forward(std::int64_t n, const T* x, T* y);
template <typename T>
void silu_backward(std::int64_t n, const T* x, const T* dy, T* dx);

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc);

}  // namespace parallel

/// Pins BLAS to one thread so OpenMP owns all parallelism and results stay
/// reproducible, and flushes subnormals to zero on the worker threads.
/// Called once by every entry point that runs kernels.
void init_threading();

}  // namespace sned::kernels

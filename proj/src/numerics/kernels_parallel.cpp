// OpenMP + BLAS kernels. Parallel loops only ever write disjoint output
// regions; cross-item reductions (weight gradients) are summed serially in
// item order so results do not depend on the thread count.
#include <cblas.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sned/numerics/kernels.hpp"

namespace sned::kernels {

void init_threading() {
  openblas_set_num_threads(1);
#if defined(__GLIBC__)
  // Training allocates and frees the same large activation buffers every
  // step; keeping them on the heap avoids re-faulting fresh mmap pages.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
#if defined(__SSE__)
  // Softmax tails underflow into subnormals, which are ~20x slower on x86
  // and irrelevant at float precision: flush them on every worker thread.
#pragma omp parallel
  {
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
  }
#endif
}

namespace parallel {
namespace {

// Cephes-style single precision exp; vectorizes, within ~2 ulp of expf.
inline float exp_approx(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  // round to nearest via the 1.5*2^23 trick; keeps the loop branch-free
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  float r = x - n * 0.693359375f;
  r -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(bits);
}

inline float vexp(float x) { return exp_approx(x); }
inline double vexp(double x) { return std::exp(x); }

// Output columns whose input column ox*stride - pad + kx lies inside [0, width).
inline void valid_columns(const Conv2dDims& d, std::int64_t kx, std::int64_t ow, std::int64_t& lo, std::int64_t& hi) {
  const auto off = d.pad - kx;  // ix = ox*stride - off
  lo = off > 0 ? (off + d.stride - 1) / d.stride : 0;
  hi = (d.width - 1 + off) >= 0 ? (d.width - 1 + off) / d.stride + 1 : 0;
  lo = std::min(lo, ow);
  hi = std::clamp(hi, lo, ow);
}

template <typename T>
void im2col(const Conv2dDims& d, const T* x, T* col) {
  const auto oh = d.out_height(), ow = d.out_width();
  for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
    for (std::int64_t ky = 0; ky < d.kernel; ++ky)
      for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
        T* row = col + ((ci * d.kernel + ky) * d.kernel + kx) * oh * ow;
        const T* plane = x + ci * d.height * d.width;
        std::int64_t lo, hi;
        valid_columns(d, kx, ow, lo, hi);
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const auto iy = oy * d.stride - d.pad + ky;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= d.height) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          std::fill(out, out + lo, T{0});
          std::fill(out + hi, out + ow, T{0});
          const auto base = iy * d.width - d.pad + kx;  // input index of ox = 0
          if (d.stride == 1) {
            std::copy(plane + base + lo, plane + base + hi, out + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) out[ox] = plane[base + ox * d.stride];
          }
        }
      }
}

template <typename T>
void col2im_add(const Conv2dDims& d, const T* col, T* dx) {
  const auto oh = d.out_height(), ow = d.out_width();
  for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
    for (std::int64_t ky = 0; ky < d.kernel; ++ky)
      for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
        const T* row = col + ((ci * d.kernel + ky) * d.kernel + kx) * oh * ow;
        T* plane = dx + ci * d.height * d.width;
        std::int64_t lo, hi;
        valid_columns(d, kx, ow, lo, hi);
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const auto iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.height) continue;
          const auto base = iy * d.width - d.pad + kx;
          const T* in = row + oy * ow;
          if (d.stride == 1) {
#pragma omp simd
            for (std::int64_t ox = lo; ox < hi; ++ox) plane[base + ox] += in[ox];
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) plane[base + ox * d.stride] += in[ox];
          }
        }
      }
}

bool is_pointwise(const Conv2dDims& d) { return d.kernel == 1 && d.stride == 1 && d.pad == 0; }

}  // namespace

template <>
void gemm<float>(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, float alpha, const float* a,
                 std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c, std::int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, double alpha, const double* a,
                  std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c, std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

template <typename T>
void conv2d_forward(const Conv2dDims& d, const T* x, const T* w, const T* b, T* y) {
  const auto hw = d.out_height() * d.out_width();
  const auto ck = d.in_channels * d.kernel * d.kernel;
  const auto in_size = d.in_channels * d.height * d.width;
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < d.batch; ++n) {
    std::vector<T> col;
    const T* src = x + n * in_size;
    if (!is_pointwise(d)) {
      col.resize(static_cast<std::size_t>(ck * hw));
      im2col(d, src, col.data());
      src = col.data();
    }
    T* out = y + n * d.out_channels * hw;
    gemm<T>(false, false, d.out_channels, hw, ck, T{1}, w, ck, src, hw, T{0}, out, hw);
    if (b)
      for (std::int64_t co = 0; co < d.out_channels; ++co)
        for (std::int64_t i = 0; i < hw; ++i) out[co * hw + i] += b[co];
  }
}

template <typename T>
void conv2d_backward(const Conv2dDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db) {
  const auto hw = d.out_height() * d.out_width();
  const auto ck = d.in_channels * d.kernel * d.kernel;
  const auto in_size = d.in_channels * d.height * d.width;
  const auto wsize = d.out_channels * ck;
  std::vector<T> partial(dw ? static_cast<std::size_t>(d.batch * wsize) : 0);
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < d.batch; ++n) {
    const T* g = dy + n * d.out_channels * hw;
    std::vector<T> col;
    if (dw) {
      const T* src = x + n * in_size;
      if (!is_pointwise(d)) {
        col.resize(static_cast<std::size_t>(ck * hw));
        im2col(d, src, col.data());
        src = col.data();
      }
      gemm<T>(false, true, d.out_channels, ck, hw, T{1}, g, hw, src, hw, T{0}, partial.data() + n * wsize, ck);
    }
    if (dx) {
      if (is_pointwise(d)) {
        gemm<T>(true, false, ck, hw, d.out_channels, T{1}, w, ck, g, hw, T{1}, dx + n * in_size, hw);
      } else {
        col.resize(static_cast<std::size_t>(ck * hw));
        gemm<T>(true, false, ck, hw, d.out_channels, T{1}, w, ck, g, hw, T{0}, col.data(), hw);
        col2im_add(d, col.data(), dx + n * in_size);
      }
    }
  }
  if (dw)
    for (std::int64_t n = 0; n < d.batch; ++n) {
      const T* p = partial.data() + n * wsize;
      for (std::int64_t i = 0; i < wsize; ++i) dw[i] += p[i];
    }
  if (db)
    for (std::int64_t n = 0; n < d.batch; ++n)
      for (std::int64_t co = 0; co < d.out_channels; ++co) {
        const T* g = dy + (n * d.out_channels + co) * hw;
        T s = 0;
        for (std::int64_t i = 0; i < hw; ++i) s += g[i];
        db[co] += s;
      }
}

template <typename T>
void linear_forward(const LinearDims& d, const T* x, const T* w, const T* b, T* y) {
  gemm<T>(false, true, d.rows, d.out_features, d.in_features, T{1}, x, d.in_features, w, d.in_features, T{0}, y,
          d.out_features);
  if (!b) return;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < d.rows; ++r)
    for (std::int64_t o = 0; o < d.out_features; ++o) y[r * d.out_features + o] += b[o];
}

template <typename T>
void linear_backward(const LinearDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db) {
  if (dx)
    gemm<T>(false, false, d.rows, d.in_features, d.out_features, T{1}, dy, d.out_features, w, d.in_features, T{1},
            dx, d.in_features);
  if (dw)
    gemm<T>(true, false, d.out_features, d.in_features, d.rows, T{1}, dy, d.out_features, x, d.in_features, T{1},
            dw, d.in_features);
  if (db)
    for (std::int64_t r = 0; r < d.rows; ++r)
      for (std::int64_t o = 0; o < d.out_features; ++o) db[o] += dy[r * d.out_features + o];
}

template <typename T>
void group_norm_forward(const GroupNormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean,
                        T* rstd) {
  const auto cg = d.channels / d.groups;
  const auto len = cg * d.spatial;
  const auto count = static_cast<T>(len);
#pragma omp parallel for schedule(static)
  for (std::int64_t ng = 0; ng < d.batch * d.groups; ++ng) {
    const auto n = ng / d.groups, g = ng % d.groups;
    const auto base = (n * d.channels + g * cg) * d.spatial;
    const T* xs = x + base;
    T sum = 0;
    for (std::int64_t i = 0; i < len; ++i) sum += xs[i];
    const T mu = sum / count;
    T var = 0;
    for (std::int64_t i = 0; i < len; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    const T rs = T{1} / std::sqrt(var / count + eps);
    mean[ng] = mu;
    rstd[ng] = rs;
    for (std::int64_t c = 0; c < cg; ++c) {
      const auto ch = g * cg + c;
      const T a = gamma[ch] * rs, sh = beta[ch];
      const T* xc = xs + c * d.spatial;
      T* yc = y + base + c * d.spatial;
      for (std::int64_t s = 0; s < d.spatial; ++s) yc[s] = a * (xc[s] - mu) + sh;
    }
  }
}

template <typename T>
void group_norm_backward(const GroupNormDims& d, const T* x, const T* gamma, const T* mean, const T* rstd,
                         const T* dy, T* dx, T* dgamma, T* dbeta) {
  const auto cg = d.channels / d.groups;
  const auto count = static_cast<T>(cg * d.spatial);
  if (dx) {
#pragma omp parallel for schedule(static)
    for (std::int64_t ng = 0; ng < d.batch * d.groups; ++ng) {
      const auto n = ng / d.groups, g = ng % d.groups;
      const T mu = mean[ng], rs = rstd[ng];
      T sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (std::int64_t c = 0; c < cg; ++c) {
        const auto ch = g * cg + c;
        const auto off = (n * d.channels + ch) * d.spatial;
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const T dxhat = dy[off + s] * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * (x[off + s] - mu) * rs;
        }
      }
      const T m1 = sum_dxhat / count, m2 = sum_dxhat_xhat / count;
      for (std::int64_t c = 0; c < cg; ++c) {
        const auto ch = g * cg + c;
        const auto off = (n * d.channels + ch) * d.spatial;
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const T xhat = (x[off + s] - mu) * rs;
          dx[off + s] += rs * (dy[off + s] * gamma[ch] - m1 - xhat * m2);
        }
      }
    }
  }
  if (!dgamma && !dbeta) return;
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < d.channels; ++ch) {
    const auto g = ch / cg;
    T sg = 0, sb = 0;
    for (std::int64_t n = 0; n < d.batch; ++n) {
      const T mu = mean[n * d.groups + g], rs = rstd[n * d.groups + g];
      const auto off = (n * d.channels + ch) * d.spatial;
      for (std::int64_t s = 0; s < d.spatial; ++s) {
        sg += dy[off + s] * (x[off + s] - mu) * rs;
        sb += dy[off + s];
      }
    }
    if (dgamma) dgamma[ch] += sg;
    if (dbeta) dbeta[ch] += sb;
  }
}

// Fused per-query attention. Head dims are small (8-32), where a GEMM call
// is dominated by overhead; instead K and V are transposed per head so every
// inner loop streams one contiguous key row that stays cache resident.
template <typename T>
void transpose_head(const AttentionDims& d, const T* x, std::int64_t b, std::int64_t h, T* xt) {
  const auto hd = d.head_dim();
  for (std::int64_t j = 0; j < d.keys; ++j) {
    const T* src = x + (b * d.keys + j) * d.dim + h * hd;
    for (std::int64_t c = 0; c < hd; ++c) xt[c * d.keys + j] = src[c];
  }
}

// Four query rows at a time: every K/V element loaded (and every dK/dV
// element updated) serves all four rows. Short tails are padded with zero rows
// that write into scratch.
constexpr int kRowBlock = 4;

template <typename T>
void attention_rows_forward(std::int64_t hd, std::int64_t nk, const T* kt, const T* vt, const T* const* qi,
                            T* const* row, T* const* oi, T scale) {
  T* __restrict x0 = row[0];
  T* __restrict x1 = row[1];
  T* __restrict x2 = row[2];
  T* __restrict x3 = row[3];
  for (std::int64_t c = 0; c < hd; ++c) {
    const T a0 = qi[0][c] * scale, a1 = qi[1][c] * scale, a2 = qi[2][c] * scale, a3 = qi[3][c] * scale;
    const T* __restrict kc = kt + c * nk;
    if (c == 0) {
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) {
        x0[j] = a0 * kc[j];
        x1[j] = a1 * kc[j];
        x2[j] = a2 * kc[j];
        x3[j] = a3 * kc[j];
      }
    } else {
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) {
        x0[j] += a0 * kc[j];
        x1[j] += a1 * kc[j];
        x2[j] += a2 * kc[j];
        x3[j] += a3 * kc[j];
      }
    }
  }
  for (int r = 0; r < kRowBlock; ++r) {
    T* __restrict x = row[r];
    T mx = x[0];
#pragma omp simd reduction(max : mx)
    for (std::int64_t j = 1; j < nk; ++j) mx = std::max(mx, x[j]);
#pragma omp simd
    for (std::int64_t j = 0; j < nk; ++j) x[j] = vexp(x[j] - mx);
    T z = 0;
#pragma omp simd reduction(+ : z)
    for (std::int64_t j = 0; j < nk; ++j) z += x[j];
    const T inv = T{1} / z;
#pragma omp simd
    for (std::int64_t j = 0; j < nk; ++j) x[j] *= inv;
  }
  for (std::int64_t c = 0; c < hd; ++c) {
    const T* __restrict vc = vt + c * nk;
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
    for (std::int64_t j = 0; j < nk; ++j) {
      s0 += x0[j] * vc[j];
      s1 += x1[j] * vc[j];
      s2 += x2[j] * vc[j];
      s3 += x3[j] * vc[j];
    }
    oi[0][c] = s0;
    oi[1][c] = s1;
    oi[2][c] = s2;
    oi[3][c] = s3;
  }
}

template <typename T>
void attention_rows_backward(std::int64_t hd, std::int64_t nk, const T* kt, const T* vt, const T* const* qi,
                             const T* const* p, const T* const* go, T* const* g, T* const* dqi, T* dkt, T* dvt,
                             T scale) {
  const T* __restrict p0 = p[0];
  const T* __restrict p1 = p[1];
  const T* __restrict p2 = p[2];
  const T* __restrict p3 = p[3];
  T* __restrict g0 = g[0];
  T* __restrict g1 = g[1];
  T* __restrict g2 = g[2];
  T* __restrict g3 = g[3];
  for (std::int64_t c = 0; c < hd; ++c) {
    const T b0 = go[0][c], b1 = go[1][c], b2 = go[2][c], b3 = go[3][c];
    const T* __restrict vc = vt + c * nk;
    if (c == 0) {
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) {
        g0[j] = b0 * vc[j];
        g1[j] = b1 * vc[j];
        g2[j] = b2 * vc[j];
        g3[j] = b3 * vc[j];
      }
    } else {
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) {
        g0[j] += b0 * vc[j];
        g1[j] += b1 * vc[j];
        g2[j] += b2 * vc[j];
        g3[j] += b3 * vc[j];
      }
    }
    if (dvt) {
      T* __restrict dvc = dvt + c * nk;
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) dvc[j] += p0[j] * b0 + p1[j] * b1 + p2[j] * b2 + p3[j] * b3;
    }
  }
  for (int r = 0; r < kRowBlock; ++r) {
    T* __restrict x = g[r];
    const T* __restrict pr = p[r];
    T dot = 0;
#pragma omp simd reduction(+ : dot)
    for (std::int64_t j = 0; j < nk; ++j) dot += x[j] * pr[j];
#pragma omp simd
    for (std::int64_t j = 0; j < nk; ++j) x[j] = pr[j] * (x[j] - dot) * scale;
  }
  for (std::int64_t c = 0; c < hd; ++c) {
    const T* __restrict kc = kt + c * nk;
    if (dqi) {
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (std::int64_t j = 0; j < nk; ++j) {
        s0 += g0[j] * kc[j];
        s1 += g1[j] * kc[j];
        s2 += g2[j] * kc[j];
        s3 += g3[j] * kc[j];
      }
      dqi[0][c] += s0;
      dqi[1][c] += s1;
      dqi[2][c] += s2;
      dqi[3][c] += s3;
    }
    if (dkt) {
      const T a0 = qi[0][c], a1 = qi[1][c], a2 = qi[2][c], a3 = qi[3][c];
      T* __restrict dkc = dkt + c * nk;
#pragma omp simd
      for (std::int64_t j = 0; j < nk; ++j) dkc[j] += g0[j] * a0 + g1[j] * a1 + g2[j] * a2 + g3[j] * a3;
    }
  }
}

template <typename T>
void attention_forward(const AttentionDims& d, const T* q, const T* k, const T* v, T* out, T* probs) {
  const auto hd = d.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
#pragma omp parallel
  {
    std::vector<T> kt(static_cast<std::size_t>(hd * d.keys)), vt(kt.size());
    std::vector<T> pad_q(static_cast<std::size_t>(hd), T{0}), pad_o(pad_q.size());
    std::vector<T> pad_row(static_cast<std::size_t>(kRowBlock * d.keys));
#pragma omp for schedule(static)
    for (std::int64_t bh = 0; bh < d.batch * d.heads; ++bh) {
      const auto b = bh / d.heads, h = bh % d.heads;
      transpose_head(d, k, b, h, kt.data());
      transpose_head(d, v, b, h, vt.data());
      for (std::int64_t i0 = 0; i0 < d.queries; i0 += kRowBlock) {
        const T* qi[kRowBlock];
        T* row[kRowBlock];
        T* oi[kRowBlock];
        for (std::int64_t r = 0; r < kRowBlock; ++r) {
          const auto i = i0 + r;
          if (i < d.queries) {
            qi[r] = q + (b * d.queries + i) * d.dim + h * hd;
            row[r] = probs + (bh * d.queries + i) * d.keys;
            oi[r] = out + (b * d.queries + i) * d.dim + h * hd;
          } else {
            qi[r] = pad_q.data();
            row[r] = pad_row.data() + r * d.keys;
            oi[r] = pad_o.data();
          }
        }
        attention_rows_forward(hd, d.keys, kt.data(), vt.data(), qi, row, oi, scale);
      }
    }
  }
}

template <typename T>
void attention_backward(const AttentionDims& d, const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        T* dq, T* dk, T* dv) {
  const auto hd = d.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
#pragma omp parallel
  {
    const auto n = static_cast<std::size_t>(hd * d.keys);
    std::vector<T> kt(n), vt(n), dkt(n), dvt(n), ds(static_cast<std::size_t>(kRowBlock * d.keys));
    // zero q, probs and upstream gradient: padded rows contribute nothing
    std::vector<T> pad_q(static_cast<std::size_t>(hd), T{0}), pad_dq(pad_q.size());
    std::vector<T> pad_p(static_cast<std::size_t>(d.keys), T{0});
#pragma omp for schedule(static)
    for (std::int64_t bh = 0; bh < d.batch * d.heads; ++bh) {
      const auto b = bh / d.heads, h = bh % d.heads;
      transpose_head(d, k, b, h, kt.data());
      transpose_head(d, v, b, h, vt.data());
      std::fill(dkt.begin(), dkt.end(), T{0});
      std::fill(dvt.begin(), dvt.end(), T{0});
      for (std::int64_t i0 = 0; i0 < d.queries; i0 += kRowBlock) {
        const T* qi[kRowBlock];
        const T* p[kRowBlock];
        const T* go[kRowBlock];
        T* g[kRowBlock];
        T* dqi[kRowBlock];
        for (std::int64_t r = 0; r < kRowBlock; ++r) {
          const auto i = i0 + r;
          g[r] = ds.data() + r * d.keys;
          if (i < d.queries) {
            const auto qoff = (b * d.queries + i) * d.dim + h * hd;
            qi[r] = q + qoff;
            p[r] = probs + (bh * d.queries + i) * d.keys;
            go[r] = dout + qoff;
            dqi[r] = dq ? dq + qoff : nullptr;
          } else {
            qi[r] = pad_q.data();
            p[r] = pad_p.data();
            go[r] = pad_q.data();
            dqi[r] = pad_dq.data();
          }
        }
        attention_rows_backward(hd, d.keys, kt.data(), vt.data(), qi, p, go, g, dq ? dqi : nullptr,
                                dk ? dkt.data() : nullptr, dv ? dvt.data() : nullptr, scale);
      }
      for (std::int64_t j = 0; j < d.keys; ++j) {
        const auto off = (b * d.keys + j) * d.dim + h * hd;
        for (std::int64_t c = 0; c < hd; ++c) {
          if (dk) dk[off + c] += dkt[c * d.keys + j];
          if (dv) dv[off + c] += dvt[c * d.keys + j];
        }
      }
    }
  }
}

template <typename T>
void silu_forward(std::int64_t n, const T* x, T* y) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] / (T{1} + vexp(-x[i]));
}

template <typename T>
void silu_backward(std::int64_t n, const T* x, const T* dy, T* dx) {
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = T{1} / (T{1} + vexp(-x[i]));
    dx[i] += dy[i] * s * (T{1} + x[i] * (T{1} - s));
  }
}

#define SNED_INSTANTIATE(T)                                                                                    \
  template void conv2d_forward<T>(const Conv2dDims&, const T*, const T*, const T*, T*);                       \
  template void conv2d_backward<T>(const Conv2dDims&, const T*, const T*, const T*, T*, T*, T*);              \
  template void linear_forward<T>(const LinearDims&, const T*, const T*, const T*, T*);                       \
  template void linear_backward<T>(const LinearDims&, const T*, const T*, const T*, T*, T*, T*);              \
  template void group_norm_forward<T>(const GroupNormDims&, const T*, const T*, const T*, T, T*, T*, T*);     \
  template void group_norm_backward<T>(const GroupNormDims&, const T*, const T*, const T*, const T*, const T*, \
                                       T*, T*, T*);                                                           \
  template void attention_forward<T>(const AttentionDims&, const T*, const T*, const T*, T*, T*);             \
  template void attention_backward<T>(const AttentionDims&, const T*, const T*, const T*, const T*, const T*, \
                                      T*, T*, T*);                                                            \
  template void silu_forward<T>(std::int64_t, const T*, T*);                                                  \
  template void silu_backward<T>(std::int64_t, const T*, const T*, T*);

SNED_INSTANTIATE(float)
SNED_INSTANTIATE(double)
#undef SNED_INSTANTIATE

}  // namespace parallel
}  // namespace sned::kernels

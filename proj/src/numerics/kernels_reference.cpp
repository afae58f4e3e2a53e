// Straightforward loop implementations. They define the semantics the
// parallel kernels are tested against.
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sned/numerics/kernels.hpp"

namespace sned::kernels::reference {

template <typename T>
void conv2d_forward(const Conv2dDims& d, const T* x, const T* w, const T* b, T* y) {
  const auto oh = d.out_height(), ow = d.out_width();
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t co = 0; co < d.out_channels; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T acc = b ? b[co] : T{0};
          for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < d.kernel; ++ky)
              for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
                const auto iy = oy * d.stride - d.pad + ky;
                const auto ix = ox * d.stride - d.pad + kx;
                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                acc += w[((co * d.in_channels + ci) * d.kernel + ky) * d.kernel + kx] *
                       x[((n * d.in_channels + ci) * d.height + iy) * d.width + ix];
              }
          y[((n * d.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward(const Conv2dDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db) {
  const auto oh = d.out_height(), ow = d.out_width();
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t co = 0; co < d.out_channels; ++co)
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const T g = dy[((n * d.out_channels + co) * oh + oy) * ow + ox];
          if (db) db[co] += g;
          for (std::int64_t ci = 0; ci < d.in_channels; ++ci)
            for (std::int64_t ky = 0; ky < d.kernel; ++ky)
              for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
                const auto iy = oy * d.stride - d.pad + ky;
                const auto ix = ox * d.stride - d.pad + kx;
                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                const auto wi = ((co * d.in_channels + ci) * d.kernel + ky) * d.kernel + kx;
                const auto xi = ((n * d.in_channels + ci) * d.height + iy) * d.width + ix;
                if (dw) dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
        }
}

template <typename T>
void linear_forward(const LinearDims& d, const T* x, const T* w, const T* b, T* y) {
  for (std::int64_t r = 0; r < d.rows; ++r)
    for (std::int64_t o = 0; o < d.out_features; ++o) {
      T acc = b ? b[o] : T{0};
      for (std::int64_t i = 0; i < d.in_features; ++i) acc += x[r * d.in_features + i] * w[o * d.in_features + i];
      y[r * d.out_features + o] = acc;
    }
}

template <typename T>
void linear_backward(const LinearDims& d, const T* x, const T* w, const T* dy, T* dx, T* dw, T* db) {
  for (std::int64_t r = 0; r < d.rows; ++r)
    for (std::int64_t o = 0; o < d.out_features; ++o) {
      const T g = dy[r * d.out_features + o];
      if (db) db[o] += g;
      for (std::int64_t i = 0; i < d.in_features; ++i) {
        if (dx) dx[r * d.in_features + i] += g * w[o * d.in_features + i];
        if (dw) dw[o * d.in_features + i] += g * x[r * d.in_features + i];
      }
    }
}

template <typename T>
void group_norm_forward(const GroupNormDims& d, const T* x, const T* gamma, const T* beta, T eps, T* y, T* mean,
                        T* rstd) {
  const auto cg = d.channels / d.groups;
  const auto count = static_cast<T>(cg * d.spatial);
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t g = 0; g < d.groups; ++g) {
      const T* xs = x + (n * d.channels + g * cg) * d.spatial;
      T sum = 0;
      for (std::int64_t i = 0; i < cg * d.spatial; ++i) sum += xs[i];
      const T mu = sum / count;
      T var = 0;
      for (std::int64_t i = 0; i < cg * d.spatial; ++i) var += (xs[i] - mu) * (xs[i] - mu);
      var /= count;
      const T rs = T{1} / std::sqrt(var + eps);
      mean[n * d.groups + g] = mu;
      rstd[n * d.groups + g] = rs;
      for (std::int64_t c = 0; c < cg; ++c) {
        const auto ch = g * cg + c;
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const auto idx = (n * d.channels + ch) * d.spatial + s;
          y[idx] = gamma[ch] * (x[idx] - mu) * rs + beta[ch];
        }
      }
    }
}

template <typename T>
void group_norm_backward(const GroupNormDims& d, const T* x, const T* gamma, const T* mean, const T* rstd,
                         const T* dy, T* dx, T* dgamma, T* dbeta) {
  const auto cg = d.channels / d.groups;
  const auto count = static_cast<T>(cg * d.spatial);
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t g = 0; g < d.groups; ++g) {
      const T mu = mean[n * d.groups + g];
      const T rs = rstd[n * d.groups + g];
      T sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (std::int64_t c = 0; c < cg; ++c) {
        const auto ch = g * cg + c;
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const auto idx = (n * d.channels + ch) * d.spatial + s;
          const T xhat = (x[idx] - mu) * rs;
          const T dxhat = dy[idx] * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (dgamma) dgamma[ch] += dy[idx] * xhat;
          if (dbeta) dbeta[ch] += dy[idx];
        }
      }
      if (!dx) continue;
      for (std::int64_t c = 0; c < cg; ++c) {
        const auto ch = g * cg + c;
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const auto idx = (n * d.channels + ch) * d.spatial + s;
          const T xhat = (x[idx] - mu) * rs;
          const T dxhat = dy[idx] * gamma[ch];
          dx[idx] += rs * (dxhat - sum_dxhat / count - xhat * sum_dxhat_xhat / count);
        }
      }
    }
}

template <typename T>
void attention_forward(const AttentionDims& d, const T* q, const T* k, const T* v, T* out, T* probs) {
  const auto hd = d.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t h = 0; h < d.heads; ++h)
      for (std::int64_t i = 0; i < d.queries; ++i) {
        T* p = probs + ((b * d.heads + h) * d.queries + i) * d.keys;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < d.keys; ++j) {
          T s = 0;
          for (std::int64_t c = 0; c < hd; ++c)
            s += q[(b * d.queries + i) * d.dim + h * hd + c] * k[(b * d.keys + j) * d.dim + h * hd + c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::int64_t j = 0; j < d.keys; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::int64_t j = 0; j < d.keys; ++j) p[j] /= z;
        for (std::int64_t c = 0; c < hd; ++c) {
          T acc = 0;
          for (std::int64_t j = 0; j < d.keys; ++j) acc += p[j] * v[(b * d.keys + j) * d.dim + h * hd + c];
          out[(b * d.queries + i) * d.dim + h * hd + c] = acc;
        }
      }
}

template <typename T>
void attention_backward(const AttentionDims& d, const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        T* dq, T* dk, T* dv) {
  const auto hd = d.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<T> dp(static_cast<std::size_t>(d.keys));
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t h = 0; h < d.heads; ++h)
      for (std::int64_t i = 0; i < d.queries; ++i) {
        const T* p = probs + ((b * d.heads + h) * d.queries + i) * d.keys;
        const T* go = dout + (b * d.queries + i) * d.dim + h * hd;
        T row = 0;
        for (std::int64_t j = 0; j < d.keys; ++j) {
          T s = 0;
          for (std::int64_t c = 0; c < hd; ++c) s += go[c] * v[(b * d.keys + j) * d.dim + h * hd + c];
          dp[static_cast<std::size_t>(j)] = s;
          row += s * p[j];
          if (dv)
            for (std::int64_t c = 0; c < hd; ++c) dv[(b * d.keys + j) * d.dim + h * hd + c] += p[j] * go[c];
        }
        for (std::int64_t j = 0; j < d.keys; ++j) {
          const T ds = p[j] * (dp[static_cast<std::size_t>(j)] - row) * scale;
          for (std::int64_t c = 0; c < hd; ++c) {
            if (dq) dq[(b * d.queries + i) * d.dim + h * hd + c] += ds * k[(b * d.keys + j) * d.dim + h * hd + c];
            if (dk) dk[(b * d.keys + j) * d.dim + h * hd + c] += ds * q[(b * d.queries + i) * d.dim + h * hd + c];
          }
        }
      }
}

template <typename T>
void silu_forward(std::int64_t n, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] / (T{1} + std::exp(-x[i]));
}

template <typename T>
void silu_backward(std::int64_t n, const T* x, const T* dy, T* dx) {
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = T{1} / (T{1} + std::exp(-x[i]));
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

}  // namespace sned::kernels::reference
